//! Canonical wire encoding of registration messages.
//!
//! A frame is one kind byte followed by fields, each a big-endian `u32`
//! length and that many bytes, in protocol field order. MACed messages end
//! with the tag field; the MAC input is every byte before it. Decoding is
//! strict: a frame decodes only if re-encoding reproduces it exactly.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use thiserror::Error;

use super::crypto::{Nonce, Tag, Witness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Advertisement,
    Request,
    ForwardedRequest,
    Reply,
    InnerReply,
    AuthRequest,
    ForwardedAuth,
    AuthResponse,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Advertisement,
        Kind::Request,
        Kind::ForwardedRequest,
        Kind::Reply,
        Kind::InnerReply,
        Kind::AuthRequest,
        Kind::ForwardedAuth,
        Kind::AuthResponse,
    ];

    fn tag(self) -> u8 {
        self as u8 + 1
    }

    fn from_tag(t: u8) -> Option<Kind> {
        Kind::ALL.get(usize::from(t).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Advertisement => "advertisement",
            Kind::Request => "request",
            Kind::ForwardedRequest => "forwarded-request",
            Kind::Reply => "reply",
            Kind::InnerReply => "inner-reply",
            Kind::AuthRequest => "auth-request",
            Kind::ForwardedAuth => "forwarded-auth",
            Kind::AuthResponse => "auth-response",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_maced(self) -> bool {
        self != Kind::Advertisement
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame is empty")]
    Empty,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("field {0} has the wrong length")]
    FieldLength(&'static str),
    #[error("field {0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("frame is not in canonical form")]
    NonCanonical,
    #[error("expected {expected}, found {found}")]
    WrongKind { expected: Kind, found: Kind },
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(kind: Kind) -> Self {
        Writer(alloc::vec![kind.tag()])
    }

    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(&(b.len() as u32).to_be_bytes());
        self.0.extend_from_slice(b);
        self
    }

    fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    fn witness(&mut self, w: &Witness) -> &mut Self {
        let mut b = w.salt.to_be_bytes().to_vec();
        b.extend_from_slice(&w.w.to_bytes_be());
        self.bytes(&b)
    }

    fn finish(&mut self) -> Vec<u8> {
        core::mem::take(&mut self.0)
    }
}

struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(frame: &'a [u8], expected: Kind) -> Result<Self, WireError> {
        let (&t, rest) = frame.split_first().ok_or(WireError::Empty)?;
        let found = Kind::from_tag(t).ok_or(WireError::UnknownKind(t))?;
        if found != expected {
            return Err(WireError::WrongKind { expected, found });
        }
        Ok(Reader { rest })
    }

    fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        if self.rest.len() < 4 {
            return Err(WireError::Truncated);
        }
        let (len, rest) = self.rest.split_at(4);
        let len = u32::from_be_bytes([len[0], len[1], len[2], len[3]]) as usize;
        if rest.len() < len {
            return Err(WireError::Truncated);
        }
        let (field, rest) = rest.split_at(len);
        self.rest = rest;
        Ok(field)
    }

    fn fixed<const N: usize>(&mut self, name: &'static str) -> Result<[u8; N], WireError> {
        self.bytes()?.try_into().map_err(|_| WireError::FieldLength(name))
    }

    fn str(&mut self, name: &'static str) -> Result<String, WireError> {
        let b = self.bytes()?;
        core::str::from_utf8(b).map(String::from).map_err(|_| WireError::Utf8(name))
    }

    fn flag(&mut self, name: &'static str) -> Result<bool, WireError> {
        match self.bytes()? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(WireError::FieldLength(name)),
        }
    }

    fn witness(&mut self, name: &'static str) -> Result<Witness, WireError> {
        let b = self.bytes()?;
        if b.len() < 4 {
            return Err(WireError::FieldLength(name));
        }
        let salt = u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        Ok(Witness {
            w: BigUint::from_bytes_be(&b[4..]),
            salt,
        })
    }

    fn end(self) -> Result<(), WireError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(WireError::NonCanonical)
        }
    }
}

/// Every message type shares encode/decode and, if MACed, a body/tag split.
pub trait WireMessage: Sized {
    const KIND: Kind;
    fn encode(&self) -> Vec<u8>;
    fn decode_fields(frame: &[u8]) -> Result<Self, WireError>;

    fn decode(frame: &[u8]) -> Result<Self, WireError> {
        let m = Self::decode_fields(frame)?;
        if m.encode() != frame {
            return Err(WireError::NonCanonical);
        }
        Ok(m)
    }
}

/// Frame bytes covered by the trailing tag field.
pub fn mac_input(frame: &[u8]) -> &[u8] {
    &frame[..frame.len().saturating_sub(4 + 32)]
}

/// FA → MN, not authenticated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Advertisement {
    pub fa_id: String,
    pub mn_coa: String,
    pub n_fa: Nonce,
    pub w_f: Witness,
}

impl WireMessage for Advertisement {
    const KIND: Kind = Kind::Advertisement;

    fn encode(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .str(&self.fa_id)
            .str(&self.mn_coa)
            .bytes(&self.n_fa)
            .witness(&self.w_f)
            .finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = Advertisement {
            fa_id: r.str("fa_id")?,
            mn_coa: r.str("mn_coa")?,
            n_fa: r.fixed("n_fa")?,
            w_f: r.witness("w_f")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// MN → FA, MACed under K_MN-HA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub key_request: bool,
    pub fa_id: String,
    pub ha_id: String,
    pub mn_coa: String,
    pub n_ha: Nonce,
    pub n_mn: Nonce,
    pub n_fa: Nonce,
    pub temp_id: [u8; 32],
    pub w_h: Witness,
    pub mac: Tag,
}

impl Request {
    pub fn body(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .bytes(&[u8::from(self.key_request)])
            .str(&self.fa_id)
            .str(&self.ha_id)
            .str(&self.mn_coa)
            .bytes(&self.n_ha)
            .bytes(&self.n_mn)
            .bytes(&self.n_fa)
            .bytes(&self.temp_id)
            .witness(&self.w_h)
            .finish()
    }
}

impl WireMessage for Request {
    const KIND: Kind = Kind::Request;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = Request {
            key_request: r.flag("key_request")?,
            fa_id: r.str("fa_id")?,
            ha_id: r.str("ha_id")?,
            mn_coa: r.str("mn_coa")?,
            n_ha: r.fixed("n_ha")?,
            n_mn: r.fixed("n_mn")?,
            n_fa: r.fixed("n_fa")?,
            temp_id: r.fixed("temp_id")?,
            w_h: r.witness("w_h")?,
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// FA → HA, MACed under K_FA-HA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardedRequest {
    pub request: Request,
    pub fa_id: String,
    pub w_f: Witness,
    pub mac: Tag,
}

impl ForwardedRequest {
    pub fn body(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .bytes(&self.request.encode())
            .str(&self.fa_id)
            .witness(&self.w_f)
            .finish()
    }
}

impl WireMessage for ForwardedRequest {
    const KIND: Kind = Kind::ForwardedRequest;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = ForwardedRequest {
            request: Request::decode(r.bytes()?)?,
            fa_id: r.str("fa_id")?,
            w_f: r.witness("w_f")?,
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// Outcome carried in a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegResult {
    Accepted,
}

/// The reply body the HA authenticates to the MN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyBody {
    pub result: RegResult,
    /// K_MN-FA under a keystream from K_MN-HA.
    pub key_reply: [u8; 32],
    pub mn_hm: String,
    pub ha_id: String,
    pub n_ha_next: Nonce,
    pub n_mn: Nonce,
}

/// FA → MN, MACed under K_MN-HA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerReply {
    pub body: ReplyBody,
    pub mac: Tag,
}

impl InnerReply {
    pub fn body(&self) -> Vec<u8> {
        let b = &self.body;
        let result = match b.result {
            RegResult::Accepted => 0u8,
        };
        Writer::new(Self::KIND)
            .bytes(&[result])
            .bytes(&b.key_reply)
            .str(&b.mn_hm)
            .str(&b.ha_id)
            .bytes(&b.n_ha_next)
            .bytes(&b.n_mn)
            .finish()
    }
}

impl WireMessage for InnerReply {
    const KIND: Kind = Kind::InnerReply;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let result = match r.bytes()? {
            [0] => RegResult::Accepted,
            _ => return Err(WireError::FieldLength("result")),
        };
        let m = InnerReply {
            body: ReplyBody {
                result,
                key_reply: r.fixed("key_reply")?,
                mn_hm: r.str("mn_hm")?,
                ha_id: r.str("ha_id")?,
                n_ha_next: r.fixed("n_ha_next")?,
                n_mn: r.fixed("n_mn")?,
            },
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// HA → FA, MACed under K_FA-HA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub inner: InnerReply,
    pub n_fa: Nonce,
    /// K_MN-FA under a keystream from K_FA-HA.
    pub key_blob: [u8; 32],
    pub mac: Tag,
}

impl Reply {
    pub fn body(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .bytes(&self.inner.encode())
            .bytes(&self.n_fa)
            .bytes(&self.key_blob)
            .finish()
    }
}

impl WireMessage for Reply {
    const KIND: Kind = Kind::Reply;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = Reply {
            inner: InnerReply::decode(r.bytes()?)?,
            n_fa: r.fixed("n_fa")?,
            key_blob: r.fixed("key_blob")?,
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// MN → its HA, MACed under K_MN-HA. The MN is named only by its temporary
/// identity and the numeric key handle I_MN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthRequest {
    pub mn_coa: String,
    pub cn_coa: String,
    pub n_mn: Nonce,
    pub w_mn: Witness,
    pub i_mn: Vec<u8>,
    pub temp_id: [u8; 32],
    pub mac: Tag,
}

impl AuthRequest {
    pub fn body(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .str(&self.mn_coa)
            .str(&self.cn_coa)
            .bytes(&self.n_mn)
            .witness(&self.w_mn)
            .bytes(&self.i_mn)
            .bytes(&self.temp_id)
            .finish()
    }
}

impl WireMessage for AuthRequest {
    const KIND: Kind = Kind::AuthRequest;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = AuthRequest {
            mn_coa: r.str("mn_coa")?,
            cn_coa: r.str("cn_coa")?,
            n_mn: r.fixed("n_mn")?,
            w_mn: r.witness("w_mn")?,
            i_mn: r.bytes()?.to_vec(),
            temp_id: r.fixed("temp_id")?,
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// HA → CN, MACed under K_HA-CN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardedAuth {
    pub auth: AuthRequest,
    pub ha_id: String,
    pub w_h: Witness,
    pub mac: Tag,
}

impl ForwardedAuth {
    pub fn body(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .bytes(&self.auth.encode())
            .str(&self.ha_id)
            .witness(&self.w_h)
            .finish()
    }
}

impl WireMessage for ForwardedAuth {
    const KIND: Kind = Kind::ForwardedAuth;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = ForwardedAuth {
            auth: AuthRequest::decode(r.bytes()?)?,
            ha_id: r.str("ha_id")?,
            w_h: r.witness("w_h")?,
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// CN → MN, MACed under K_CN-MN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthResponse {
    pub mn_coa: String,
    pub cn_coa: String,
    pub n_mn_digest: [u8; 32],
    pub cn_id: String,
    pub w_cn: Witness,
    pub mac: Tag,
}

impl AuthResponse {
    pub fn body(&self) -> Vec<u8> {
        Writer::new(Self::KIND)
            .str(&self.mn_coa)
            .str(&self.cn_coa)
            .bytes(&self.n_mn_digest)
            .str(&self.cn_id)
            .witness(&self.w_cn)
            .finish()
    }
}

impl WireMessage for AuthResponse {
    const KIND: Kind = Kind::AuthResponse;

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer(self.body());
        w.bytes(&self.mac).finish()
    }

    fn decode_fields(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame, Self::KIND)?;
        let m = AuthResponse {
            mn_coa: r.str("mn_coa")?,
            cn_coa: r.str("cn_coa")?,
            n_mn_digest: r.fixed("n_mn_digest")?,
            cn_id: r.str("cn_id")?,
            w_cn: r.witness("w_cn")?,
            mac: r.fixed("mac")?,
        };
        r.end()?;
        Ok(m)
    }
}

/// Kind of an encoded frame, if its tag byte is known.
pub fn peek_kind(frame: &[u8]) -> Result<Kind, WireError> {
    let &t = frame.first().ok_or(WireError::Empty)?;
    Kind::from_tag(t).ok_or(WireError::UnknownKind(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn witness() -> Witness {
        Witness {
            w: BigUint::from(0x1234_5678_9abc_u64),
            salt: 3,
        }
    }

    fn request() -> Request {
        Request {
            key_request: true,
            fa_id: "fa:1".into(),
            ha_id: "ha:global".into(),
            mn_coa: "coa:fa:1:0".into(),
            n_ha: [1; 16],
            n_mn: [2; 16],
            n_fa: [3; 16],
            temp_id: [4; 32],
            w_h: witness(),
            mac: [5; 32],
        }
    }

    #[test]
    fn round_trips() {
        let r = request();
        assert_eq!(Request::decode(&r.encode()), Ok(r.clone()));
        let f = ForwardedRequest {
            request: r,
            fa_id: "fa:1".into(),
            w_f: witness(),
            mac: [6; 32],
        };
        assert_eq!(ForwardedRequest::decode(&f.encode()), Ok(f.clone()));
        let inner = InnerReply {
            body: ReplyBody {
                result: RegResult::Accepted,
                key_reply: [7; 32],
                mn_hm: "hoa:1".into(),
                ha_id: "ha:global".into(),
                n_ha_next: [8; 16],
                n_mn: [9; 16],
            },
            mac: [10; 32],
        };
        let rep = Reply {
            inner,
            n_fa: [11; 16],
            key_blob: [12; 32],
            mac: [13; 32],
        };
        assert_eq!(Reply::decode(&rep.encode()), Ok(rep.clone()));
        let a = AuthRequest {
            mn_coa: "coa:fa:1:0".into(),
            cn_coa: "cn:1".into(),
            n_mn: [1; 16],
            w_mn: witness(),
            i_mn: vec![1, 2, 3],
            temp_id: [2; 32],
            mac: [3; 32],
        };
        let fa = ForwardedAuth {
            auth: a,
            ha_id: "ha:global".into(),
            w_h: witness(),
            mac: [4; 32],
        };
        assert_eq!(ForwardedAuth::decode(&fa.encode()), Ok(fa.clone()));
        let resp = AuthResponse {
            mn_coa: "coa".into(),
            cn_coa: "cn:1".into(),
            n_mn_digest: [5; 32],
            cn_id: "cn:1".into(),
            w_cn: witness(),
            mac: [6; 32],
        };
        assert_eq!(AuthResponse::decode(&resp.encode()), Ok(resp));
    }

    #[test]
    fn mac_input_excludes_only_the_tag() {
        let r = request();
        let frame = r.encode();
        assert_eq!(mac_input(&frame), r.body().as_slice());
    }

    #[test]
    fn strict_decoding() {
        let frame = request().encode();
        let mut trailing = frame.clone();
        trailing.push(0);
        assert_eq!(Request::decode(&trailing), Err(WireError::NonCanonical));
        assert_eq!(Request::decode(&frame[..frame.len() - 1]), Err(WireError::Truncated));
        assert!(matches!(Advertisement::decode(&frame), Err(WireError::WrongKind { .. })));
        assert_eq!(peek_kind(&[0]), Err(WireError::UnknownKind(0)));
        assert_eq!(peek_kind(&[]), Err(WireError::Empty));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in Kind::ALL {
            assert_eq!(Kind::parse(k.as_str()), Some(k));
            assert_eq!(Kind::from_tag(k.tag()), Some(k));
        }
    }
}
