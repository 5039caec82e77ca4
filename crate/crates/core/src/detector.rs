//! Heartbeat-based failure detection and the recovery plan computed when a
//! peer is declared faulty.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::ha::{highest_priority, HaId, HaRole, LinkId, Priority};
use crate::time::{SimDuration, SimTime, TICK};

/// Consecutive missed heartbeats before a peer is declared faulty.
pub const MISS_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Heartbeat {
    pub sender: HaId,
    pub seq: u64,
    pub sent_at: SimTime,
    /// Sender's role and workload at emission, used by peers to rank
    /// promotion candidates.
    pub role: HaRole,
    pub workload: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("heartbeat period must be positive")]
    NonPositivePeriod,
    #[error("propagation delay must be non-negative")]
    NegativeDelay,
    #[error("no {needed} candidate available to replace {faulty}")]
    NoCandidate { faulty: HaId, needed: &'static str },
}

/// Detection+recovery latency: three heartbeat periods plus the
/// overlay propagation delay, in seconds.
pub fn predicted_detection_time(heartbeat_period: f64, prop_delay: f64) -> Result<f64, DetectorError> {
    if !(heartbeat_period > 0.0) {
        return Err(DetectorError::NonPositivePeriod);
    }
    if !(prop_delay >= 0.0) {
        return Err(DetectorError::NegativeDelay);
    }
    Ok(3.0 * heartbeat_period + prop_delay)
}

/// Same as [`predicted_detection_time`] on integer simulated time.
pub fn predicted_detection_duration(period: SimDuration, prop_delay: SimDuration) -> SimDuration {
    period.saturating_mul(MISS_THRESHOLD as u64) + prop_delay
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PeerTrack {
    /// When the next miss is counted if nothing arrives first.
    deadline: SimTime,
    misses: u32,
    last_seq: Option<u64>,
}

/// Per-HA missed-heartbeat detector.
///
/// Each peer carries a deadline one period (plus one tick of grace) after its
/// last heartbeat arrived; every deadline that passes without a heartbeat is a
/// miss. A peer whose first heartbeat has not arrived yet is timed from the
/// expected arrival of a heartbeat sent at time zero.
#[derive(Debug, Clone)]
pub struct DetectorState {
    period: SimDuration,
    miss_threshold: u32,
    peers: BTreeMap<HaId, PeerTrack>,
    suspected: BTreeSet<HaId>,
}

impl DetectorState {
    pub fn new(period: SimDuration) -> Result<Self, DetectorError> {
        if period == SimDuration::ZERO {
            return Err(DetectorError::NonPositivePeriod);
        }
        Ok(DetectorState {
            period,
            miss_threshold: MISS_THRESHOLD,
            peers: BTreeMap::new(),
            suspected: BTreeSet::new(),
        })
    }

    pub fn period(&self) -> SimDuration {
        self.period
    }

    pub fn miss_threshold(&self) -> u32 {
        self.miss_threshold
    }

    /// Start monitoring `peer` at `now`, expecting its heartbeats to take
    /// `expected_delay` to arrive.
    pub fn watch(&mut self, peer: HaId, now: SimTime, expected_delay: SimDuration) {
        self.suspected.remove(&peer);
        self.peers.insert(
            peer,
            PeerTrack {
                deadline: now + expected_delay + self.period + TICK,
                misses: 0,
                last_seq: None,
            },
        );
    }

    /// Stop monitoring `peer` entirely (entry deleted from the tables).
    pub fn forget(&mut self, peer: &HaId) {
        self.peers.remove(peer);
        self.suspected.remove(peer);
    }

    /// Record a heartbeat arrival. Resets the miss count and clears any
    /// suspicion. Returns `true` if the sender had been suspected.
    pub fn on_heartbeat(&mut self, hb: &Heartbeat, now: SimTime) -> bool {
        let deadline = now + self.period + TICK;
        let track = self.peers.entry(hb.sender).or_insert(PeerTrack {
            deadline,
            misses: 0,
            last_seq: None,
        });
        if track.last_seq.is_some_and(|s| hb.seq <= s) {
            // reordered duplicate; nothing new learned
            return false;
        }
        track.last_seq = Some(hb.seq);
        track.misses = 0;
        track.deadline = deadline;
        self.suspected.remove(&hb.sender)
    }

    /// Count misses for every deadline that has passed by `now` and return
    /// peers that crossed the threshold on this call.
    pub fn tick(&mut self, now: SimTime) -> Vec<HaId> {
        let mut newly = Vec::new();
        for (id, track) in self.peers.iter_mut() {
            if self.suspected.contains(id) {
                continue;
            }
            while track.deadline <= now {
                track.misses += 1;
                track.deadline += self.period;
                if track.misses >= self.miss_threshold {
                    self.suspected.insert(*id);
                    newly.push(*id);
                    break;
                }
            }
        }
        newly
    }

    /// Earliest pending deadline among unsuspected peers.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.peers
            .iter()
            .filter(|(id, _)| !self.suspected.contains(id))
            .map(|(_, t)| t.deadline)
            .min()
    }

    pub fn is_suspected(&self, peer: &HaId) -> bool {
        self.suspected.contains(peer)
    }

    pub fn suspected(&self) -> &BTreeSet<HaId> {
        &self.suspected
    }

    pub fn misses(&self, peer: &HaId) -> Option<u32> {
        self.peers.get(peer).map(|t| t.misses)
    }
}

/// A step of the recovery procedure. Within one plan, deletion precedes
/// promotion, which precedes recruitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryAction {
    DeleteFaultyEntry(HaId),
    PromoteBackup(HaId),
    RecruitBackup(HaId),
    ReplaceInactive(HaId),
    NoOp,
}

impl fmt::Display for RecoveryAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryAction::DeleteFaultyEntry(id) => write!(f, "delete({id})"),
            RecoveryAction::PromoteBackup(id) => write!(f, "promote({id})"),
            RecoveryAction::RecruitBackup(id) => write!(f, "recruit({id})"),
            RecoveryAction::ReplaceInactive(id) => write!(f, "replace({id})"),
            RecoveryAction::NoOp => f.write_str("noop"),
        }
    }
}

/// What one HA knows about a peer when planning recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerStatus {
    pub id: HaId,
    pub role: HaRole,
    pub priority: Priority,
    /// `false` once the peer is suspected or known failed.
    pub live: bool,
    /// `true` for HAs on a home link that are not yet part of the group and
    /// may be drafted to replace a permanently lost Inactive.
    pub spare: bool,
}

impl PeerStatus {
    fn home_link(&self) -> LinkId {
        self.id.home_link
    }
}

fn best_with_role(peers: &[PeerStatus], role: HaRole, exclude: HaId) -> Option<HaId> {
    highest_priority(
        peers
            .iter()
            .filter(|p| p.live && !p.spare && p.role == role && p.id != exclude)
            .map(|p| (p.id, p.priority)),
    )
}

/// Plan recovery from the failure of `faulty`.
///
/// * Active lost: delete, promote the best Backup, then recruit the best
///   Inactive as a new Backup (skipped if no Inactive is left).
/// * Backup lost: delete, recruit the best Inactive.
/// * Inactive lost: nothing, unless it is gone for good, in which case a spare
///   HA from the same home link replaces it.
pub fn recover(
    faulty: HaId,
    faulty_role: HaRole,
    permanent: bool,
    peers: &[PeerStatus],
) -> Result<Vec<RecoveryAction>, DetectorError> {
    match faulty_role {
        HaRole::Active => {
            let promote = best_with_role(peers, HaRole::Backup, faulty).ok_or(DetectorError::NoCandidate {
                faulty,
                needed: "backup",
            })?;
            let mut plan = vec![
                RecoveryAction::DeleteFaultyEntry(faulty),
                RecoveryAction::PromoteBackup(promote),
            ];
            if let Some(recruit) = best_with_role(peers, HaRole::Inactive, faulty) {
                plan.push(RecoveryAction::RecruitBackup(recruit));
            }
            Ok(plan)
        }
        HaRole::Backup => {
            let recruit = best_with_role(peers, HaRole::Inactive, faulty).ok_or(DetectorError::NoCandidate {
                faulty,
                needed: "inactive",
            })?;
            Ok(vec![
                RecoveryAction::DeleteFaultyEntry(faulty),
                RecoveryAction::RecruitBackup(recruit),
            ])
        }
        HaRole::Inactive if !permanent => Ok(vec![RecoveryAction::NoOp]),
        HaRole::Inactive => {
            let spare = highest_priority(
                peers
                    .iter()
                    .filter(|p| p.live && p.spare && p.home_link() == faulty.home_link && p.id != faulty)
                    .map(|p| (p.id, p.priority)),
            )
            .ok_or(DetectorError::NoCandidate {
                faulty,
                needed: "spare",
            })?;
            Ok(vec![
                RecoveryAction::DeleteFaultyEntry(faulty),
                RecoveryAction::ReplaceInactive(spare),
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ha::{compute_priority, PRIORITY_MAX};

    const T_H: SimDuration = SimDuration(1_000_000);

    fn hb(sender: HaId, seq: u64, at: SimTime) -> Heartbeat {
        Heartbeat {
            sender,
            seq,
            sent_at: at,
            role: HaRole::Backup,
            workload: 0.0,
        }
    }

    fn peer(id: HaId, role: HaRole, priority: Priority) -> PeerStatus {
        PeerStatus {
            id,
            role,
            priority,
            live: true,
            spare: false,
        }
    }

    #[test]
    fn predicted_time_examples() {
        assert!((predicted_detection_time(1.0, 0.05).unwrap() - 3.05).abs() < 1e-12);
        assert_eq!(predicted_detection_time(1.0, 0.0).unwrap(), 3.0);
        assert!((predicted_detection_time(0.1, 0.01).unwrap() - 0.31).abs() < 1e-12);
        assert_eq!(predicted_detection_time(0.0, 0.1), Err(DetectorError::NonPositivePeriod));
        assert_eq!(predicted_detection_time(-1.0, 0.1), Err(DetectorError::NonPositivePeriod));
        assert_eq!(
            predicted_detection_duration(SimDuration::from_millis(100), SimDuration::from_millis(5)),
            SimDuration::from_millis(305)
        );
    }

    #[test]
    fn peer_failing_at_zero_is_suspected_after_three_periods() {
        let prop = SimDuration::from_millis(50);
        let peer_id = HaId::new(2, 2);
        let mut d = DetectorState::new(T_H).unwrap();
        d.watch(peer_id, SimTime::ZERO, prop);
        let mut at = None;
        // advance one microsecond at a time around the interesting window
        let mut now = SimTime::ZERO;
        while now <= SimTime::from_secs(4) {
            if !d.tick(now).is_empty() {
                at = Some(now);
                break;
            }
            now = match d.next_deadline() {
                Some(t) => t,
                None => break,
            };
        }
        let at = at.expect("suspected");
        assert!(at >= SimTime::from_secs(3));
        assert!(at <= SimTime::from_micros(3_050_000) + TICK);
    }

    #[test]
    fn live_peer_never_suspected() {
        let peer_id = HaId::new(2, 2);
        let d_prop = SimDuration::from_millis(50);
        let mut d = DetectorState::new(T_H).unwrap();
        d.watch(peer_id, SimTime::ZERO, d_prop);
        for k in 1..=50u64 {
            let arrive = SimTime::from_secs(k) + d_prop;
            assert!(d.tick(arrive).is_empty(), "tick before arrival {k}");
            d.on_heartbeat(&hb(peer_id, k, SimTime::from_secs(k)), arrive);
        }
        assert!(!d.is_suspected(&peer_id));
    }

    #[test]
    fn late_heartbeat_inside_window_resets_misses() {
        let peer_id = HaId::new(2, 2);
        let mut d = DetectorState::new(T_H).unwrap();
        d.watch(peer_id, SimTime::ZERO, SimDuration::ZERO);
        assert!(d.tick(SimTime::from_micros(1_000_001)).is_empty());
        assert!(d.tick(SimTime::from_micros(2_000_001)).is_empty());
        assert_eq!(d.misses(&peer_id), Some(2));
        d.on_heartbeat(&hb(peer_id, 2, SimTime::from_secs(2)), SimTime::from_micros(2_500_000));
        assert_eq!(d.misses(&peer_id), Some(0));
        assert!(d.tick(SimTime::from_micros(3_000_001)).is_empty());
    }

    #[test]
    fn suspicion_clears_on_heartbeat() {
        let peer_id = HaId::new(2, 2);
        let mut d = DetectorState::new(T_H).unwrap();
        d.watch(peer_id, SimTime::ZERO, SimDuration::ZERO);
        assert_eq!(d.tick(SimTime::from_secs(10)), vec![peer_id]);
        assert!(d.tick(SimTime::from_secs(20)).is_empty(), "reported once");
        assert!(d.on_heartbeat(&hb(peer_id, 11, SimTime::from_secs(21)), SimTime::from_secs(21)));
        assert!(!d.is_suspected(&peer_id));
    }

    #[test]
    fn active_failure_promotes_highest_priority_backup() {
        let active = HaId::new(1, 1);
        let b_lo = HaId::new(1, 2);
        let b_hi = HaId::new(2, 3);
        let inactive = HaId::new(2, 4);
        let peers = [
            peer(b_lo, HaRole::Backup, compute_priority(0.5)),
            peer(b_hi, HaRole::Backup, compute_priority(0.25)),
            peer(inactive, HaRole::Inactive, PRIORITY_MAX),
        ];
        let plan = recover(active, HaRole::Active, false, &peers).unwrap();
        assert_eq!(
            plan,
            vec![
                RecoveryAction::DeleteFaultyEntry(active),
                RecoveryAction::PromoteBackup(b_hi),
                RecoveryAction::RecruitBackup(inactive),
            ]
        );
    }

    #[test]
    fn backup_failure_recruits_inactive() {
        let b = HaId::new(1, 2);
        let i1 = HaId::new(2, 4);
        let i2 = HaId::new(2, 3);
        let peers = [
            peer(HaId::new(1, 1), HaRole::Active, Priority::Finite(2.0)),
            peer(i1, HaRole::Inactive, PRIORITY_MAX),
            peer(i2, HaRole::Inactive, PRIORITY_MAX),
        ];
        assert_eq!(
            recover(b, HaRole::Backup, false, &peers).unwrap(),
            vec![RecoveryAction::DeleteFaultyEntry(b), RecoveryAction::RecruitBackup(i2)]
        );
    }

    #[test]
    fn transient_inactive_failure_is_noop() {
        assert_eq!(
            recover(HaId::new(1, 9), HaRole::Inactive, false, &[]).unwrap(),
            vec![RecoveryAction::NoOp]
        );
    }

    #[test]
    fn permanent_inactive_replaced_from_same_link() {
        let faulty = HaId::new(1, 9);
        let mut other_link = peer(HaId::new(2, 1), HaRole::Inactive, PRIORITY_MAX);
        other_link.spare = true;
        let mut same_link = peer(HaId::new(1, 8), HaRole::Inactive, Priority::Finite(3.0));
        same_link.spare = true;
        assert_eq!(
            recover(faulty, HaRole::Inactive, true, &[other_link, same_link]).unwrap(),
            vec![
                RecoveryAction::DeleteFaultyEntry(faulty),
                RecoveryAction::ReplaceInactive(same_link.id)
            ]
        );
        assert!(matches!(
            recover(faulty, HaRole::Inactive, true, &[other_link]),
            Err(DetectorError::NoCandidate { .. })
        ));
    }

    #[test]
    fn active_failure_without_backups_has_no_candidate() {
        let peers = [peer(HaId::new(2, 4), HaRole::Inactive, PRIORITY_MAX)];
        assert_eq!(
            recover(HaId::new(1, 1), HaRole::Active, false, &peers),
            Err(DetectorError::NoCandidate {
                faulty: HaId::new(1, 1),
                needed: "backup"
            })
        );
    }

    #[test]
    fn dead_peers_are_not_candidates() {
        let mut dead = peer(HaId::new(1, 2), HaRole::Backup, PRIORITY_MAX);
        dead.live = false;
        let alive = peer(HaId::new(2, 3), HaRole::Backup, Priority::Finite(1.0));
        let plan = recover(HaId::new(1, 1), HaRole::Active, false, &[dead, alive]).unwrap();
        assert_eq!(plan[1], RecoveryAction::PromoteBackup(alive.id));
    }
}
