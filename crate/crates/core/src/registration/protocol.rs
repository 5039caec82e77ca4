//! Principal state machines for registration and correspondent
//! authentication. Every handler is a deterministic function of the
//! principal's state, the received frame, and the principal's RNG stream.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::crypto::{
    derive_shared_key, key_transport, mac, nonce_digest, random_key, random_nonce, temp_id, verify_mac, Key, Nonce,
    PrincipalKeys, PublicParams, Witness,
};
use super::wire::{
    mac_input, Advertisement, AuthRequest, AuthResponse, ForwardedAuth, ForwardedRequest, InnerReply, RegResult, Reply,
    ReplyBody, Request, WireError, WireMessage,
};

const LABEL_FA: &[u8] = b"fa";
const LABEL_MN: &[u8] = b"mn";

/// Reason a principal refused a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Error)]
pub enum Reject {
    #[error("fa-id-mismatch")]
    FaIdMismatch,
    #[error("bad-fa-mac")]
    BadFaMac,
    #[error("unknown-temp-id")]
    UnknownTempId,
    #[error("bad-mn-mac")]
    BadMnMac,
    #[error("replayed-nonce")]
    ReplayedNonce,
    #[error("stale-nonce")]
    StaleNonce,
    #[error("bad-ha-mac")]
    BadHaMac,
    #[error("bad-mac")]
    BadMac,
    #[error("malformed")]
    Malformed,
    #[error("unknown-cn")]
    UnknownCn,
    #[error("not-registered")]
    NotRegistered,
    #[error("wrong-recipient")]
    WrongRecipient,
}

impl Reject {
    pub const ALL: [Reject; 12] = [
        Reject::FaIdMismatch,
        Reject::BadFaMac,
        Reject::UnknownTempId,
        Reject::BadMnMac,
        Reject::ReplayedNonce,
        Reject::StaleNonce,
        Reject::BadHaMac,
        Reject::BadMac,
        Reject::Malformed,
        Reject::UnknownCn,
        Reject::NotRegistered,
        Reject::WrongRecipient,
    ];

    pub fn parse(s: &str) -> Option<Reject> {
        Reject::ALL.into_iter().find(|r| alloc::format!("{r}") == s)
    }
}

impl From<WireError> for Reject {
    fn from(_: WireError) -> Self {
        Reject::Malformed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("identity {0} is already registered")]
    DuplicateIdentity(String),
}

/// What the home agent hands the mobile node over the out-of-band channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provision {
    pub home_address: String,
    pub ha_id: String,
    pub w_h: Witness,
    pub k_mn_ha: Key,
    pub n_ha: Nonce,
    pub temp_id: [u8; 32],
}

/// A nonce with the temporary identity derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBase {
    pub nonce: Nonce,
    pub temp_id: [u8; 32],
}

/// The home agent's per-MN record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnHomeRecord {
    pub id_mn: String,
    pub home_address: String,
    pub k_mn_ha: Key,
    pub initial: ParamBase,
    pub dynamic: Option<ParamBase>,
    /// MN nonces already accepted, for replay rejection.
    pub consumed: BTreeSet<Nonce>,
    pub coa: Option<String>,
}

/// Which parameter base a temporary identity matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Base {
    Dynamic,
    Initial,
}

/// A registration the home agent accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accepted {
    pub id_mn: String,
    pub home_address: String,
    pub coa: String,
    pub base: Base,
}

/// Home agent acting for the whole VPN under one global identity.
#[derive(Debug, Clone)]
pub struct HomeRegistrar {
    params: PublicParams,
    keys: PrincipalKeys,
    rng: ChaCha20Rng,
    records: BTreeMap<String, MnHomeRecord>,
    /// Correspondent care-of address → (identity, witness).
    cn_directory: BTreeMap<String, (String, Witness)>,
}

impl HomeRegistrar {
    pub fn new(params: PublicParams, keys: PrincipalKeys, rng: ChaCha20Rng) -> Self {
        HomeRegistrar {
            params,
            keys,
            rng,
            records: BTreeMap::new(),
            cn_directory: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.keys.id
    }

    pub fn witness(&self) -> &Witness {
        &self.keys.witness
    }

    pub fn record(&self, id_mn: &str) -> Option<&MnHomeRecord> {
        self.records.get(id_mn)
    }

    pub fn register_correspondent(&mut self, cn_coa: &str, cn_id: &str, w_cn: Witness) {
        self.cn_directory.insert(cn_coa.into(), (cn_id.into(), w_cn));
    }

    /// Out-of-band enrolment of a mobile node into the initial base.
    pub fn initial_registration(&mut self, id_mn: &str, home_address: &str) -> Result<Provision, RegistryError> {
        if self.records.contains_key(id_mn) {
            return Err(RegistryError::DuplicateIdentity(id_mn.into()));
        }
        let k_mn_ha = random_key(&mut self.rng);
        let nonce = random_nonce(&mut self.rng);
        let initial = ParamBase {
            nonce,
            temp_id: temp_id(id_mn, &nonce),
        };
        self.records.insert(
            id_mn.into(),
            MnHomeRecord {
                id_mn: id_mn.into(),
                home_address: home_address.into(),
                k_mn_ha,
                initial,
                dynamic: None,
                consumed: BTreeSet::new(),
                coa: None,
            },
        );
        Ok(Provision {
            home_address: home_address.into(),
            ha_id: self.keys.id.clone(),
            w_h: self.keys.witness.clone(),
            k_mn_ha,
            n_ha: nonce,
            temp_id: initial.temp_id,
        })
    }

    fn lookup(&self, tid: &[u8; 32]) -> Option<(&str, Base, ParamBase)> {
        let dynamic = self.records.values().find_map(|r| match r.dynamic {
            Some(d) if d.temp_id == *tid => Some((r.id_mn.as_str(), Base::Dynamic, d)),
            _ => None,
        });
        dynamic.or_else(|| {
            self.records
                .values()
                .find(|r| r.initial.temp_id == *tid)
                .map(|r| (r.id_mn.as_str(), Base::Initial, r.initial))
        })
    }

    fn peer_key(&self, id: &str, w: &Witness) -> Key {
        derive_shared_key(&self.params, &self.keys.private, &self.params.identity_number(id), w)
    }

    /// Process a forwarded request; returns the reply frame for the FA.
    pub fn on_forwarded_request(&mut self, frame: &[u8]) -> Result<(Vec<u8>, Accepted), Reject> {
        let m3 = ForwardedRequest::decode(frame)?;
        let m2 = &m3.request;
        if m3.fa_id != m2.fa_id {
            return Err(Reject::FaIdMismatch);
        }
        let k_fa_ha = self.peer_key(&m3.fa_id, &m3.w_f);
        if !verify_mac(&k_fa_ha, &m3.body(), &m3.mac) {
            return Err(Reject::BadFaMac);
        }
        let (id_mn, base, params) = self.lookup(&m2.temp_id).ok_or(Reject::UnknownTempId)?;
        if params.nonce != m2.n_ha {
            return Err(Reject::UnknownTempId);
        }
        let id_mn = String::from(id_mn);
        let record = self.records.get(&id_mn).expect("lookup returned a live record");
        if !verify_mac(&record.k_mn_ha, &m2.body(), &m2.mac) {
            return Err(Reject::BadMnMac);
        }
        if record.consumed.contains(&m2.n_mn) {
            return Err(Reject::ReplayedNonce);
        }
        let n_next = random_nonce(&mut self.rng);
        let k_mn_fa = random_key(&mut self.rng);
        let record = self.records.get_mut(&id_mn).expect("record exists");
        let fresh = ParamBase {
            nonce: n_next,
            temp_id: temp_id(&id_mn, &n_next),
        };
        if base == Base::Dynamic {
            record.initial = params;
        }
        record.dynamic = Some(fresh);
        record.consumed.insert(m2.n_mn);
        record.coa = Some(m2.mn_coa.clone());

        let mut inner = InnerReply {
            body: ReplyBody {
                result: RegResult::Accepted,
                key_reply: key_transport(&record.k_mn_ha, LABEL_MN, &m2.n_mn, &k_mn_fa),
                mn_hm: record.home_address.clone(),
                ha_id: self.keys.id.clone(),
                n_ha_next: n_next,
                n_mn: m2.n_mn,
            },
            mac: [0; 32],
        };
        inner.mac = mac(&record.k_mn_ha, &inner.body());
        let mut m4 = Reply {
            inner,
            n_fa: m2.n_fa,
            key_blob: key_transport(&k_fa_ha, LABEL_FA, &m2.n_fa, &k_mn_fa),
            mac: [0; 32],
        };
        m4.mac = mac(&k_fa_ha, &m4.body());
        let accepted = Accepted {
            id_mn,
            home_address: record.home_address.clone(),
            coa: m2.mn_coa.clone(),
            base,
        };
        Ok((m4.encode(), accepted))
    }

    /// Relay an MN's authentication request to the correspondent it names.
    pub fn on_auth_request(&mut self, frame: &[u8]) -> Result<Vec<u8>, Reject> {
        let a1 = AuthRequest::decode(frame)?;
        let (id_mn, _, _) = self.lookup(&a1.temp_id).ok_or(Reject::UnknownTempId)?;
        let id_mn = String::from(id_mn);
        let record = self.records.get_mut(&id_mn).expect("lookup returned a live record");
        if !verify_mac(&record.k_mn_ha, &a1.body(), &a1.mac) {
            return Err(Reject::BadMnMac);
        }
        if record.consumed.contains(&a1.n_mn) {
            return Err(Reject::ReplayedNonce);
        }
        let (cn_id, w_cn) = self.cn_directory.get(&a1.cn_coa).ok_or(Reject::UnknownCn)?.clone();
        record.consumed.insert(a1.n_mn);
        let k_ha_cn = self.peer_key(&cn_id, &w_cn);
        let mut a2 = ForwardedAuth {
            auth: a1,
            ha_id: self.keys.id.clone(),
            w_h: self.keys.witness.clone(),
            mac: [0; 32],
        };
        a2.mac = mac(&k_ha_cn, &a2.body());
        Ok(a2.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct AwaitingReply {
    k_fa_ha: Key,
    mn_coa: String,
}

/// Foreign agent.
#[derive(Debug, Clone)]
pub struct ForeignAgent {
    params: PublicParams,
    keys: PrincipalKeys,
    rng: ChaCha20Rng,
    next_coa: u32,
    /// Advertised nonces not yet used, with the care-of address offered.
    outstanding: BTreeMap<Nonce, String>,
    awaiting: BTreeMap<Nonce, AwaitingReply>,
    sessions: BTreeMap<String, Key>,
}

impl ForeignAgent {
    pub fn new(params: PublicParams, keys: PrincipalKeys, rng: ChaCha20Rng) -> Self {
        ForeignAgent {
            params,
            keys,
            rng,
            next_coa: 0,
            outstanding: BTreeMap::new(),
            awaiting: BTreeMap::new(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.keys.id
    }

    /// Session key shared with the MN now at `coa`.
    pub fn session_key(&self, coa: &str) -> Option<&Key> {
        self.sessions.get(coa)
    }

    pub fn advertise(&mut self) -> Vec<u8> {
        let n_fa = random_nonce(&mut self.rng);
        let mn_coa = alloc::format!("coa:{}:{}", self.keys.id, self.next_coa);
        self.next_coa += 1;
        self.outstanding.insert(n_fa, mn_coa.clone());
        Advertisement {
            fa_id: self.keys.id.clone(),
            mn_coa,
            n_fa,
            w_f: self.keys.witness.clone(),
        }
        .encode()
    }

    /// Validate freshness and forward to the HA under K_FA-HA.
    pub fn on_request(&mut self, frame: &[u8]) -> Result<Vec<u8>, Reject> {
        let m2 = Request::decode(frame)?;
        if m2.fa_id != self.keys.id {
            return Err(Reject::FaIdMismatch);
        }
        match self.outstanding.get(&m2.n_fa) {
            Some(coa) if *coa == m2.mn_coa => {}
            _ => return Err(Reject::StaleNonce),
        }
        self.outstanding.remove(&m2.n_fa);
        let k_fa_ha = derive_shared_key(
            &self.params,
            &self.keys.private,
            &self.params.identity_number(&m2.ha_id),
            &m2.w_h,
        );
        self.awaiting.insert(
            m2.n_fa,
            AwaitingReply {
                k_fa_ha,
                mn_coa: m2.mn_coa.clone(),
            },
        );
        let mut m3 = ForwardedRequest {
            request: m2,
            fa_id: self.keys.id.clone(),
            w_f: self.keys.witness.clone(),
            mac: [0; 32],
        };
        m3.mac = mac(&k_fa_ha, &m3.body());
        Ok(m3.encode())
    }

    /// Authenticate the HA, recover K_MN-FA, and pass the inner reply on.
    pub fn on_reply(&mut self, frame: &[u8]) -> Result<Vec<u8>, Reject> {
        let m4 = Reply::decode(frame)?;
        let waiting = self.awaiting.get(&m4.n_fa).ok_or(Reject::StaleNonce)?;
        if !verify_mac(&waiting.k_fa_ha, mac_input(frame), &m4.mac) {
            return Err(Reject::BadHaMac);
        }
        let waiting = self.awaiting.remove(&m4.n_fa).expect("checked above");
        let k_mn_fa = key_transport(&waiting.k_fa_ha, LABEL_FA, &m4.n_fa, &m4.key_blob);
        self.sessions.insert(waiting.mn_coa, k_mn_fa);
        Ok(m4.inner.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingRegistration {
    n_mn: Nonce,
    coa: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingAuth {
    n_mn: Nonce,
    cn_coa: String,
}

/// Mobile node.
#[derive(Debug, Clone)]
pub struct MobileNode {
    params: PublicParams,
    id_mn: String,
    keys: PrincipalKeys,
    provision: Provision,
    rng: ChaCha20Rng,
    pending: Option<PendingRegistration>,
    coa: Option<String>,
    k_mn_fa: Option<Key>,
    pending_auth: Option<PendingAuth>,
    cn_keys: BTreeMap<String, Key>,
}

impl MobileNode {
    /// `keys` carry the MN's self-certified key under its own identity
    /// string, which is used only for correspondent authentication.
    pub fn new(params: PublicParams, id_mn: &str, keys: PrincipalKeys, provision: Provision, rng: ChaCha20Rng) -> Self {
        MobileNode {
            params,
            id_mn: id_mn.into(),
            keys,
            provision,
            rng,
            pending: None,
            coa: None,
            k_mn_fa: None,
            pending_auth: None,
            cn_keys: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id_mn
    }

    pub fn current_nonce(&self) -> &Nonce {
        &self.provision.n_ha
    }

    pub fn current_temp_id(&self) -> &[u8; 32] {
        &self.provision.temp_id
    }

    pub fn coa(&self) -> Option<&str> {
        self.coa.as_deref()
    }

    pub fn session_key(&self) -> Option<&Key> {
        self.k_mn_fa.as_ref()
    }

    pub fn cn_key(&self, cn_coa: &str) -> Option<&Key> {
        self.cn_keys.get(cn_coa)
    }

    /// Answer an advertisement with a request under K_MN-HA.
    pub fn on_advertisement(&mut self, frame: &[u8]) -> Result<Vec<u8>, Reject> {
        let adv = Advertisement::decode(frame)?;
        let n_mn = random_nonce(&mut self.rng);
        let mut m2 = Request {
            key_request: true,
            fa_id: adv.fa_id,
            ha_id: self.provision.ha_id.clone(),
            mn_coa: adv.mn_coa.clone(),
            n_ha: self.provision.n_ha,
            n_mn,
            n_fa: adv.n_fa,
            temp_id: self.provision.temp_id,
            w_h: self.provision.w_h.clone(),
            mac: [0; 32],
        };
        m2.mac = mac(&self.provision.k_mn_ha, &m2.body());
        self.pending = Some(PendingRegistration { n_mn, coa: adv.mn_coa });
        Ok(m2.encode())
    }

    /// Complete registration: authenticate the HA and rotate the pseudonym.
    pub fn on_inner_reply(&mut self, frame: &[u8]) -> Result<(), Reject> {
        let m5 = InnerReply::decode(frame)?;
        let pending = self.pending.as_ref().ok_or(Reject::StaleNonce)?;
        if m5.body.n_mn != pending.n_mn {
            return Err(Reject::StaleNonce);
        }
        if !verify_mac(&self.provision.k_mn_ha, &m5.body(), &m5.mac) {
            return Err(Reject::BadHaMac);
        }
        let pending = self.pending.take().expect("checked above");
        self.k_mn_fa = Some(key_transport(&self.provision.k_mn_ha, LABEL_MN, &pending.n_mn, &m5.body.key_reply));
        self.coa = Some(pending.coa);
        self.provision.n_ha = m5.body.n_ha_next;
        self.provision.temp_id = temp_id(&self.id_mn, &m5.body.n_ha_next);
        Ok(())
    }

    /// Begin authenticating to the correspondent at `cn_coa` via the HA.
    pub fn start_auth(&mut self, cn_coa: &str) -> Result<Vec<u8>, Reject> {
        let mn_coa = self.coa.clone().ok_or(Reject::NotRegistered)?;
        let n_mn = random_nonce(&mut self.rng);
        let mut a1 = AuthRequest {
            mn_coa,
            cn_coa: cn_coa.into(),
            n_mn,
            w_mn: self.keys.witness.clone(),
            i_mn: self.keys.identity.to_bytes_be(),
            temp_id: self.provision.temp_id,
            mac: [0; 32],
        };
        a1.mac = mac(&self.provision.k_mn_ha, &a1.body());
        self.pending_auth = Some(PendingAuth {
            n_mn,
            cn_coa: cn_coa.into(),
        });
        Ok(a1.encode())
    }

    /// Check the correspondent's proof of the nonce and derive K_CN-MN.
    pub fn on_auth_response(&mut self, frame: &[u8]) -> Result<Key, Reject> {
        let a3 = AuthResponse::decode(frame)?;
        let pending = self.pending_auth.as_ref().ok_or(Reject::StaleNonce)?;
        if a3.n_mn_digest != nonce_digest(&pending.n_mn) || a3.cn_coa != pending.cn_coa {
            return Err(Reject::StaleNonce);
        }
        let key = derive_shared_key(
            &self.params,
            &self.keys.private,
            &self.params.identity_number(&a3.cn_id),
            &a3.w_cn,
        );
        if !verify_mac(&key, &a3.body(), &a3.mac) {
            return Err(Reject::BadMac);
        }
        let pending = self.pending_auth.take().expect("checked above");
        self.cn_keys.insert(pending.cn_coa, key);
        Ok(key)
    }
}

/// Correspondent node.
#[derive(Debug, Clone)]
pub struct Correspondent {
    params: PublicParams,
    keys: PrincipalKeys,
    coa: String,
    seen: BTreeSet<Nonce>,
    sessions: BTreeMap<Vec<u8>, Key>,
}

impl Correspondent {
    pub fn new(params: PublicParams, keys: PrincipalKeys, coa: &str) -> Self {
        Correspondent {
            params,
            keys,
            coa: coa.into(),
            seen: BTreeSet::new(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.keys.id
    }

    pub fn coa(&self) -> &str {
        &self.coa
    }

    pub fn witness(&self) -> &Witness {
        &self.keys.witness
    }

    /// Session key agreed with the MN whose key handle is `i_mn`.
    pub fn session_key(&self, i_mn: &[u8]) -> Option<&Key> {
        self.sessions.get(i_mn)
    }

    pub fn on_forwarded_auth(&mut self, frame: &[u8]) -> Result<Vec<u8>, Reject> {
        let a2 = ForwardedAuth::decode(frame)?;
        let k_ha_cn = derive_shared_key(
            &self.params,
            &self.keys.private,
            &self.params.identity_number(&a2.ha_id),
            &a2.w_h,
        );
        if !verify_mac(&k_ha_cn, &a2.body(), &a2.mac) {
            return Err(Reject::BadHaMac);
        }
        let a1 = &a2.auth;
        if a1.cn_coa != self.coa {
            return Err(Reject::WrongRecipient);
        }
        if self.seen.contains(&a1.n_mn) {
            return Err(Reject::ReplayedNonce);
        }
        self.seen.insert(a1.n_mn);
        let i_mn = BigUint::from_bytes_be(&a1.i_mn);
        let key = derive_shared_key(&self.params, &self.keys.private, &i_mn, &a1.w_mn);
        self.sessions.insert(a1.i_mn.clone(), key);
        let mut a3 = AuthResponse {
            mn_coa: a1.mn_coa.clone(),
            cn_coa: self.coa.clone(),
            n_mn_digest: nonce_digest(&a1.n_mn),
            cn_id: self.keys.id.clone(),
            w_cn: self.keys.witness.clone(),
            mac: [0; 32],
        };
        a3.mac = mac(&key, &a3.body());
        Ok(a3.encode())
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Base::Dynamic => "dynamic",
            Base::Initial => "initial",
        })
    }
}
