//! Measured outputs of one experiment run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::forwarding::LossReason;
use crate::scenario::Mode;
use crate::time::{SimDuration, SimTime};

/// One peer's suspicion of a failed HA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suspicion {
    pub watcher: String,
    pub suspect: String,
    /// Suspicion time minus failure time.
    pub after: SimDuration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureReport {
    /// HA name or `link<N>`.
    pub target: String,
    pub at: SimTime,
    pub failed: Vec<String>,
    pub active_lost: bool,
    pub permanent: bool,
    /// Three heartbeat periods plus the worst overlay delay from a failed HA
    /// to a surviving member.
    pub t_fd_r_predicted: SimDuration,
    /// Suspicion time at the HA that acted on the failure, if any did.
    pub t_fd_r_measured: Option<SimDuration>,
    pub suspicions: Vec<Suspicion>,
    /// Failure to restored service: promotion, sync, or baseline
    /// re-registration, whichever applies.
    pub recovered_after: Option<SimDuration>,
    /// Whether the HA group recovered on its own, without the MN.
    pub by_redundancy: bool,
    pub actions: Vec<String>,
    /// Data packets lost from this failure until the next one.
    pub losses: u64,
    /// Data packets in the network when the failure fired.
    pub in_flight: u64,
    /// Messages to or from an MN between failure and recovery.
    pub ota_messages: u64,
}

/// Timing of one registration exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationReport {
    pub mn: String,
    pub fa: String,
    pub started: SimTime,
    /// MN→FA, FA→HA, HA→FA, FA→MN, each from one send to the next.
    pub legs: Option<[SimDuration; 4]>,
    pub total: Option<SimDuration>,
    pub backup_updates: u32,
    /// Slowest backup-update delivery, measured from its send.
    pub backup_update_transit: SimDuration,
    /// Active-side total plus the backup-update propagation.
    pub home_total: Option<SimDuration>,
    /// Why the exchange stopped early, if it did.
    pub failed: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub registration: u64,
    pub binding_update: u64,
    pub heartbeat: u64,
    pub recovery: u64,
    /// Control messages crossing the wireless hop.
    pub ota: u64,
    pub ota_during_recovery: u64,
    /// Control messages addressed to a failed or unreachable node.
    pub dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PacketCounts {
    pub sent: u64,
    pub delivered: u64,
    pub lost: BTreeMap<LossReason, u64>,
    /// Delivered packets whose payload differed from what was sent.
    pub corrupted: u64,
}

impl PacketCounts {
    pub fn lost_total(&self) -> u64 {
        self.lost.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub mode: Mode,
    pub seed: u64,
    pub duration: SimDuration,
    pub heartbeat_period: SimDuration,
    pub events: u64,
    pub failures: Vec<FailureReport>,
    pub registrations: Vec<RegistrationReport>,
    pub packets: PacketCounts,
    pub messages: MessageCounts,
    /// Largest serialized size seen per registration message kind.
    pub sizes: BTreeMap<String, u64>,
    /// Global HA addresses each MN saw on delivered packets.
    pub global_addresses: BTreeMap<String, BTreeSet<String>>,
    pub zombies: u64,
    pub invariant_violations: Vec<String>,
    pub trace_hash: String,
}

impl MetricsReport {
    pub fn empty(mode: Mode, seed: u64) -> Self {
        MetricsReport {
            mode,
            seed,
            duration: SimDuration::ZERO,
            heartbeat_period: SimDuration::ZERO,
            events: 0,
            failures: Vec::new(),
            registrations: Vec::new(),
            packets: PacketCounts::default(),
            messages: MessageCounts::default(),
            sizes: BTreeMap::new(),
            global_addresses: BTreeMap::new(),
            zombies: 0,
            invariant_violations: Vec::new(),
            trace_hash: String::new(),
        }
    }

    pub fn losses(&self) -> u64 {
        self.packets.lost_total()
    }
}
