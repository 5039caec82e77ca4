//! Registration delay recovered from the event trace alone, independent of
//! the engine's own bookkeeping.
//!
//! An exchange is the four sends `request` (MN→FA), `forwarded-request`
//! (FA→HA), `reply` (HA→FA), `inner-reply` (FA→MN) followed by
//! `registered` for that MN. Each leg runs from one send to the next and
//! the last leg ends at `registered`, so the legs sum to the total exactly.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;
use vhaha_core::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("registration of {mn} started at {started} never completed")]
    IncompleteExchange { mn: String, started: SimTime },
    #[error("trace line {line}: {mn} registered with total {stated} but its sends span {measured}")]
    TotalMismatch {
        line: usize,
        mn: String,
        stated: SimDuration,
        measured: SimDuration,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub mn: String,
    pub fa: String,
    pub started: SimTime,
    /// MN→FA, FA→HA, HA→FA, FA→MN.
    pub legs: [SimDuration; 4],
    pub total: SimDuration,
    /// Bytes of each of the four messages, in leg order.
    pub bytes: [u64; 4],
}

#[derive(Debug)]
struct Pending {
    fa: String,
    sends: [Option<SimTime>; 4],
    bytes: [u64; 4],
}

fn fields(rest: &str) -> BTreeMap<&str, &str> {
    rest.split_whitespace().filter_map(|w| w.split_once('=')).collect()
}

/// Completed exchanges in completion order. Exchanges ended by `reg-fail`
/// are dropped; one still open when the trace ends is an error.
pub fn decompose_registrations(trace: &[String]) -> Result<Vec<Decomposition>, DecomposeError> {
    let mut open: BTreeMap<String, Pending> = BTreeMap::new();
    // MNs waiting on each FA's HA round trip, oldest first
    let mut via_fa: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
    let mut done = Vec::new();
    for (i, line) in trace.iter().enumerate() {
        let n = i + 1;
        let bad = |message: &str| DecomposeError::Malformed {
            line: n,
            message: message.into(),
        };
        let f = fields(line);
        let Some(ev) = f.get("ev").copied() else {
            return Err(bad("missing ev="));
        };
        if !matches!(ev, "reg-send" | "reg-fail" | "registered") {
            continue;
        }
        let t: SimTime = f.get("t").and_then(|t| t.parse().ok()).ok_or_else(|| bad("missing or bad t="))?;
        let get = |k: &str| f.get(k).copied().ok_or_else(|| bad(&format!("missing {k}=")));
        match ev {
            "reg-send" => {
                let (kind, src, dst) = (get("kind")?, get("src")?, get("dst")?);
                let bytes: u64 = get("bytes")?.parse().map_err(|_| bad("bad bytes="))?;
                let (slot, mn) = match kind {
                    "request" => {
                        open.insert(
                            src.into(),
                            Pending {
                                fa: dst.into(),
                                sends: [None; 4],
                                bytes: [0; 4],
                            },
                        );
                        via_fa.entry(dst.into()).or_default().push_back(src.into());
                        (0, src.to_string())
                    }
                    "forwarded-request" => (1, front(&via_fa, src, &open, 1).ok_or_else(|| bad("forwarded request with no open exchange"))?),
                    "reply" => (2, front(&via_fa, dst, &open, 2).ok_or_else(|| bad("reply with no open exchange"))?),
                    "inner-reply" => {
                        if let Some(q) = via_fa.get_mut(src) {
                            q.retain(|m| m != dst);
                        }
                        (3, dst.to_string())
                    }
                    _ => continue,
                };
                if let Some(p) = open.get_mut(&mn) {
                    p.sends[slot] = Some(t);
                    p.bytes[slot] = bytes;
                }
            }
            "reg-fail" => {
                let mn = get("mn")?;
                if let Some(p) = open.remove(mn) {
                    if let Some(q) = via_fa.get_mut(&p.fa) {
                        q.retain(|m| m != mn);
                    }
                }
            }
            _ => {
                let mn = get("mn")?;
                let stated: SimDuration = get("total")?.parse().map_err(|_| bad("bad total="))?;
                let p = open.remove(mn).ok_or_else(|| bad("registered with no open exchange"))?;
                let [Some(s0), Some(s1), Some(s2), Some(s3)] = p.sends else {
                    return Err(bad("registered before all four sends"));
                };
                let total = t.since(s0);
                if total != stated {
                    return Err(DecomposeError::TotalMismatch {
                        line: n,
                        mn: mn.into(),
                        stated,
                        measured: total,
                    });
                }
                done.push(Decomposition {
                    mn: mn.into(),
                    fa: p.fa,
                    started: s0,
                    legs: [s1.since(s0), s2.since(s1), s3.since(s2), t.since(s3)],
                    total,
                    bytes: p.bytes,
                });
            }
        }
    }
    match open.into_iter().find_map(|(mn, p)| p.sends[0].map(|s| (mn, s))) {
        Some((mn, started)) => Err(DecomposeError::IncompleteExchange { mn, started }),
        None => Ok(done),
    }
}

/// Oldest MN on `fa` whose exchange has not yet filled `slot`.
fn front(via_fa: &BTreeMap<String, VecDeque<String>>, fa: &str, open: &BTreeMap<String, Pending>, slot: usize) -> Option<String> {
    via_fa
        .get(fa)?
        .iter()
        .find(|m| open.get(*m).is_some_and(|p| p.sends[slot].is_none()))
        .cloned()
}
