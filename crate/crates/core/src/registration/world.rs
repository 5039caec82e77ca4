//! A fixed cast of principals built deterministically from a seed, used to
//! replay and verify message transcripts, honest or adversarial.

use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use rand_core::RngCore;

use super::crypto::{rng_for, ta_setup, CryptoError, PrincipalKeys, PublicParams, Witness};
use super::protocol::{Correspondent, ForeignAgent, HomeRegistrar, MobileNode, Reject};
use super::wire::{peek_kind, ForwardedRequest, Kind, Request, WireMessage};

pub const MN_ID: &str = "nai:mn1@home";
pub const MN_HOME: &str = "hoa:1";
pub const FA_ID: &str = "fa:1";
pub const ROGUE_FA_ID: &str = "fa:rogue";
pub const HA_ID: &str = "ha:global";
pub const CN_ID: &str = "cn:1";
pub const CN_COA: &str = "coa:cn:1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Mn,
    Fa,
    Ha,
    Cn,
    /// Foreign agent holding a witness the TA never issued.
    RogueFa,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Mn, Role::Fa, Role::Ha, Role::Cn, Role::RogueFa];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Mn => "MN",
            Role::Fa => "FA",
            Role::Ha => "HA",
            Role::Cn => "CN",
            Role::RogueFa => "XFA",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        }
    }

    pub fn parse(s: &str) -> Option<Verdict> {
        match s {
            "accept" => Some(Verdict::Accept),
            "reject" => Some(Verdict::Reject),
            _ => None,
        }
    }
}

/// One delivered frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub from: Role,
    pub to: Role,
    pub kind: Kind,
    pub frame: Vec<u8>,
    pub expect: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub seed: u64,
    pub bits: u32,
    pub lines: Vec<Line>,
}

/// Output of delivering a frame: the recipient's verdict and any frames it
/// emits in response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub result: Result<(), Reject>,
    pub outputs: Vec<(Role, Role, Vec<u8>)>,
}

#[derive(Debug, Clone)]
pub struct RegistrationWorld {
    pub seed: u64,
    pub bits: u32,
    pub params: PublicParams,
    pub mn: MobileNode,
    pub fa: ForeignAgent,
    pub rogue: ForeignAgent,
    pub ha: HomeRegistrar,
    pub cn: Correspondent,
    pub keys: WorldKeys,
}

/// Key material of the honest principals, for oracle checks in tests.
#[derive(Debug, Clone)]
pub struct WorldKeys {
    pub mn: PrincipalKeys,
    pub fa: PrincipalKeys,
    pub ha: PrincipalKeys,
    pub cn: PrincipalKeys,
}

impl RegistrationWorld {
    pub fn new(seed: u64, bits: u32) -> Result<Self, CryptoError> {
        let seed_bytes = seed.to_be_bytes();
        let mut ta = ta_setup(bits, &seed_bytes)?;
        let params = ta.params().clone();
        let mn_keys = ta.enroll(MN_ID)?;
        let fa_keys = ta.enroll(FA_ID)?;
        let ha_keys = ta.enroll(HA_ID)?;
        let cn_keys = ta.enroll(CN_ID)?;

        let mut rogue_rng = rng_for(&seed_bytes, "XFA keys");
        let mut buf = alloc::vec![0u8; params.modulus_len()];
        rogue_rng.fill_bytes(&mut buf);
        let forged = BigUint::from_bytes_be(&buf) % &params.n;
        rogue_rng.fill_bytes(&mut buf);
        let rogue_private = BigUint::from_bytes_be(&buf) % &params.n;
        let rogue_keys = PrincipalKeys {
            id: ROGUE_FA_ID.into(),
            identity: params.identity_number(ROGUE_FA_ID),
            private: rogue_private,
            witness: Witness { w: forged, salt: 0 },
        };

        let mut ha = HomeRegistrar::new(params.clone(), ha_keys.clone(), rng_for(&seed_bytes, "HA"));
        ha.register_correspondent(CN_COA, CN_ID, cn_keys.witness.clone());
        let provision = ha
            .initial_registration(MN_ID, MN_HOME)
            .expect("fresh registrar has no records");
        Ok(RegistrationWorld {
            mn: MobileNode::new(params.clone(), MN_ID, mn_keys.clone(), provision, rng_for(&seed_bytes, "MN")),
            fa: ForeignAgent::new(params.clone(), fa_keys.clone(), rng_for(&seed_bytes, "FA")),
            rogue: ForeignAgent::new(params.clone(), rogue_keys, rng_for(&seed_bytes, "XFA")),
            cn: Correspondent::new(params.clone(), cn_keys.clone(), CN_COA),
            ha,
            seed,
            bits,
            params,
            keys: WorldKeys {
                mn: mn_keys,
                fa: fa_keys,
                ha: ha_keys,
                cn: cn_keys,
            },
        })
    }

    fn fa_role_for(&self, fa_id: &str) -> Option<Role> {
        if fa_id == self.fa.id() {
            Some(Role::Fa)
        } else if fa_id == self.rogue.id() {
            Some(Role::RogueFa)
        } else {
            None
        }
    }

    fn foreign_agent(&mut self, role: Role) -> Option<&mut ForeignAgent> {
        match role {
            Role::Fa => Some(&mut self.fa),
            Role::RogueFa => Some(&mut self.rogue),
            _ => None,
        }
    }

    /// Spontaneous frame from `from`, if that role originates `kind`.
    pub fn originate(&mut self, from: Role, kind: Kind) -> Option<Vec<u8>> {
        match (from, kind) {
            (Role::Fa | Role::RogueFa, Kind::Advertisement) => self.foreign_agent(from).map(|fa| fa.advertise()),
            (Role::Mn, Kind::AuthRequest) => self.mn.start_auth(CN_COA).ok(),
            _ => None,
        }
    }

    pub fn is_origination(from: Role, kind: Kind) -> bool {
        matches!(
            (from, kind),
            (Role::Fa | Role::RogueFa, Kind::Advertisement) | (Role::Mn, Kind::AuthRequest)
        )
    }

    /// Hand `frame` to `to` and run its handler.
    pub fn deliver(&mut self, to: Role, frame: &[u8]) -> Delivery {
        let reject = |r| Delivery {
            result: Err(r),
            outputs: Vec::new(),
        };
        let kind = match peek_kind(frame) {
            Ok(k) => k,
            Err(_) => return reject(Reject::Malformed),
        };
        let out = match (to, kind) {
            (Role::Mn, Kind::Advertisement) => self.mn.on_advertisement(frame).map(|r1| {
                let fa_id = Request::decode(&r1).map(|m| m.fa_id).unwrap_or_default();
                self.fa_role_for(&fa_id)
                    .map(|fa| (Role::Mn, fa, r1))
                    .into_iter()
                    .collect()
            }),
            (Role::Fa | Role::RogueFa, Kind::Request) => self
                .foreign_agent(to)
                .expect("foreign agent role")
                .on_request(frame)
                .map(|r3| alloc::vec![(to, Role::Ha, r3)]),
            (Role::Ha, Kind::ForwardedRequest) => self.ha.on_forwarded_request(frame).map(|(r5, _)| {
                let fa_id = ForwardedRequest::decode(frame).map(|m| m.fa_id).unwrap_or_default();
                self.fa_role_for(&fa_id)
                    .map(|fa| (Role::Ha, fa, r5))
                    .into_iter()
                    .collect()
            }),
            (Role::Fa | Role::RogueFa, Kind::Reply) => self
                .foreign_agent(to)
                .expect("foreign agent role")
                .on_reply(frame)
                .map(|r7| alloc::vec![(to, Role::Mn, r7)]),
            (Role::Mn, Kind::InnerReply) => self.mn.on_inner_reply(frame).map(|()| Vec::new()),
            (Role::Ha, Kind::AuthRequest) => self
                .ha
                .on_auth_request(frame)
                .map(|a2| alloc::vec![(Role::Ha, Role::Cn, a2)]),
            (Role::Cn, Kind::ForwardedAuth) => self
                .cn
                .on_forwarded_auth(frame)
                .map(|a3| alloc::vec![(Role::Cn, Role::Mn, a3)]),
            (Role::Mn, Kind::AuthResponse) => self.mn.on_auth_response(frame).map(|_| Vec::new()),
            _ => Err(Reject::WrongRecipient),
        };
        match out {
            Ok(outputs) => Delivery {
                result: Ok(()),
                outputs,
            },
            Err(r) => reject(r),
        }
    }
}

/// Per-line result of transcript verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineOutcome {
    pub index: usize,
    pub from: Role,
    pub to: Role,
    pub kind: Kind,
    pub result: Result<(), Reject>,
    /// Whether the sender state was advanced because it really sent this.
    pub originated: bool,
    pub expect: Option<Verdict>,
}

impl LineOutcome {
    pub fn verdict(&self) -> Verdict {
        if self.result.is_ok() {
            Verdict::Accept
        } else {
            Verdict::Reject
        }
    }

    pub fn matches_expectation(&self) -> bool {
        self.expect.is_none_or(|e| e == self.verdict())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptReport {
    pub lines: Vec<LineOutcome>,
}

impl TranscriptReport {
    pub fn all_expectations_met(&self) -> bool {
        self.lines.iter().all(LineOutcome::matches_expectation)
    }

    pub fn rejected(&self) -> usize {
        self.lines.iter().filter(|l| l.result.is_err()).count()
    }
}

/// Replay `t` against a fresh world. Each line is delivered to its named
/// recipient, whose handler alone decides acceptance. For originating kinds,
/// the sender's state advances only if it would itself have emitted exactly
/// these bytes.
pub fn verify(t: &Transcript) -> Result<TranscriptReport, CryptoError> {
    Ok(verify_in(RegistrationWorld::new(t.seed, t.bits)?, t))
}

/// [`verify`] starting from an already built world, which must be the one
/// `t.seed` and `t.bits` describe.
pub fn verify_in(mut world: RegistrationWorld, t: &Transcript) -> TranscriptReport {
    let mut lines = Vec::with_capacity(t.lines.len());
    for (index, line) in t.lines.iter().enumerate() {
        let mut originated = false;
        if RegistrationWorld::is_origination(line.from, line.kind) {
            let mut trial = world.clone();
            if trial.originate(line.from, line.kind).as_deref() == Some(line.frame.as_slice()) {
                world = trial;
                originated = true;
            }
        }
        let result = match peek_kind(&line.frame) {
            Ok(k) if k == line.kind => world.deliver(line.to, &line.frame).result,
            _ => Err(Reject::Malformed),
        };
        lines.push(LineOutcome {
            index,
            from: line.from,
            to: line.to,
            kind: line.kind,
            result,
            originated,
            expect: line.expect,
        });
    }
    TranscriptReport { lines }
}

/// How a generated run perturbs the message flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Perturbation {
    /// Flip bit `.1` of the frame at flow step `.0` before delivery.
    pub flip: Option<(usize, usize)>,
    /// Drop the frame at this flow step.
    pub drop: Option<usize>,
}

/// Run one exchange started by `from` originating `kind`, appending every
/// delivered frame to `lines` with its observed verdict as expectation.
/// Returns the number of frames delivered and whether all were accepted.
pub fn run_flow(
    world: &mut RegistrationWorld,
    from: Role,
    kind: Kind,
    to: Role,
    perturb: Perturbation,
    lines: &mut Vec<Line>,
) -> (usize, bool) {
    let Some(first) = world.originate(from, kind) else {
        return (0, false);
    };
    let mut queue = alloc::collections::VecDeque::new();
    queue.push_back((from, to, first));
    let mut step = 0;
    let mut delivered = 0;
    while let Some((src, dst, mut frame)) = queue.pop_front() {
        let this = step;
        step += 1;
        if perturb.drop == Some(this) {
            continue;
        }
        if let Some((at, bit)) = perturb.flip {
            if at == this && bit / 8 < frame.len() {
                frame[bit / 8] ^= 0x80 >> (bit % 8);
            }
        }
        let kind = peek_kind(&frame).unwrap_or(Kind::Advertisement);
        let d = world.deliver(dst, &frame);
        delivered += 1;
        let ok = d.result.is_ok();
        lines.push(Line {
            from: src,
            to: dst,
            kind,
            frame,
            expect: Some(if ok { Verdict::Accept } else { Verdict::Reject }),
        });
        if !ok {
            return (delivered, false);
        }
        queue.extend(d.outputs);
    }
    (delivered, true)
}

/// Bytes of the MN's plaintext identity, for anonymity scans.
pub fn mn_identity_bytes() -> &'static [u8] {
    MN_ID.as_bytes()
}

/// Whether `needle` occurs anywhere in `hay`.
pub fn contains_subslice(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

impl Transcript {
    pub fn new(seed: u64, bits: u32) -> Self {
        Transcript {
            seed,
            bits,
            lines: Vec::new(),
        }
    }
}

/// Canned transcripts: the honest exchange and each attack on it.
pub mod scenarios {
    use super::*;

    /// Registration through the honest FA, then correspondent authentication.
    pub fn honest(base: &RegistrationWorld) -> Transcript {
        let mut w = base.clone();
        let mut t = Transcript::new(w.seed, w.bits);
        run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut t.lines);
        run_flow(&mut w, Role::Mn, Kind::AuthRequest, Role::Ha, Perturbation::default(), &mut t.lines);
        t
    }

    /// The honest exchange followed by a verbatim resend of its first
    /// frame of `kind`, expected to be refused.
    pub fn replay(base: &RegistrationWorld, kind: Kind) -> Option<Transcript> {
        let mut t = honest(base);
        let captured = t.lines.iter().find(|l| l.kind == kind).cloned()?;
        t.lines.push(Line {
            expect: Some(Verdict::Reject),
            ..captured
        });
        Some(t)
    }

    /// A frame captured in one session replayed after a second session has
    /// rotated the MN's temporary identity twice.
    pub fn two_session_replay(base: &RegistrationWorld) -> Transcript {
        let mut w = base.clone();
        let mut t = Transcript::new(w.seed, w.bits);
        run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut t.lines);
        let captured = t
            .lines
            .iter()
            .find(|l| l.kind == Kind::ForwardedRequest)
            .cloned()
            .expect("honest flow forwards the request");
        run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut t.lines);
        t.lines.push(Line {
            expect: Some(Verdict::Reject),
            ..captured
        });
        t
    }

    /// Step `step` of the honest registration flow (or, past its end, of
    /// the authentication flow) with one bit flipped.
    pub fn tamper(base: &RegistrationWorld, step: usize, bit: usize) -> Transcript {
        let mut w = base.clone();
        let mut t = Transcript::new(w.seed, w.bits);
        let flip = Perturbation {
            flip: Some((step, bit)),
            drop: None,
        };
        let (n, ok) = run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, flip, &mut t.lines);
        if ok && step >= n {
            let flip = Perturbation {
                flip: Some((step - n, bit)),
                drop: None,
            };
            run_flow(&mut w, Role::Mn, Kind::AuthRequest, Role::Ha, flip, &mut t.lines);
        }
        t
    }

    /// Registration attempted through the foreign agent with a forged witness.
    pub fn forged_witness(base: &RegistrationWorld) -> Transcript {
        let mut w = base.clone();
        let mut t = Transcript::new(w.seed, w.bits);
        run_flow(&mut w, Role::RogueFa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut t.lines);
        t
    }

    /// The HA's reply is lost; the next registration must still succeed.
    pub fn lost_reply_then_reregister(base: &RegistrationWorld) -> Transcript {
        let mut w = base.clone();
        let mut t = Transcript::new(w.seed, w.bits);
        let drop_inner = Perturbation {
            flip: None,
            drop: Some(4),
        };
        run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, drop_inner, &mut t.lines);
        run_flow(&mut w, Role::Fa, Kind::Advertisement, Role::Mn, Perturbation::default(), &mut t.lines);
        t
    }

    /// Every frame that leaves a principal after enrolment.
    pub fn wire_frames(t: &Transcript) -> impl Iterator<Item = &[u8]> {
        t.lines.iter().map(|l| l.frame.as_slice())
    }
}
