//! Experiment description: topology, timing, traffic, failures, and the
//! registration schedule, with semantic validation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::registration::crypto::SUPPORTED_BITS;
use crate::simnet::Topology;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// Redundancy across every home link.
    Vhaha,
    /// Redundancy only among HAs on the Active's home link.
    SingleLinkRedundancy,
    /// One HA; the MN re-registers elsewhere after a timeout.
    NoRedundancy,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vhaha, Mode::SingleLinkRedundancy, Mode::NoRedundancy];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vhaha => "vhaha",
            Mode::SingleLinkRedundancy => "single_link_redundancy",
            Mode::NoRedundancy => "no_redundancy",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Role an HA starts in. Spares sit on a home link outside the group until
/// drafted to replace a permanently lost Inactive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfiguredRole {
    Active,
    Backup,
    Inactive,
    Spare,
}

impl ConfiguredRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfiguredRole::Active => "active",
            ConfiguredRole::Backup => "backup",
            ConfiguredRole::Inactive => "inactive",
            ConfiguredRole::Spare => "spare",
        }
    }

    pub fn parse(s: &str) -> Option<ConfiguredRole> {
        [
            ConfiguredRole::Active,
            ConfiguredRole::Backup,
            ConfiguredRole::Inactive,
            ConfiguredRole::Spare,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaSpec {
    pub name: String,
    pub link: u32,
    pub role: ConfiguredRole,
    pub capacity: u32,
    pub throughput_max: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnSpec {
    pub name: String,
    /// Foreign agent the MN starts attached to.
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    pub delay: SimDuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub cn: String,
    pub mn: String,
    /// Packets per second.
    pub rate: f64,
    pub start: SimTime,
    pub stop: SimTime,
}

impl TrafficSpec {
    /// Gap between packets, rounded to the microsecond.
    pub fn interval(&self) -> SimDuration {
        SimDuration::from_micros(libm_round(1e6 / self.rate).max(1.0) as u64)
    }
}

fn libm_round(x: f64) -> f64 {
    // f64::round is not in core
    let t = x as i64 as f64;
    if x - t >= 0.5 {
        t + 1.0
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailTarget {
    Ha(String),
    /// Whichever HA holds the Active role when the failure fires.
    CurrentActive,
    Link(u32),
}

impl fmt::Display for FailTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailTarget::Ha(n) => f.write_str(n),
            FailTarget::CurrentActive => f.write_str("active"),
            FailTarget::Link(l) => write!(f, "link{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureSpec {
    pub target: FailTarget,
    pub at: SimTime,
    pub permanent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoverSpec {
    pub ha: String,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterSpec {
    pub mn: String,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoveSpec {
    pub mn: String,
    pub to: String,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub seed: u64,
    pub duration: SimDuration,
    pub heartbeat_period: SimDuration,
    /// Declared number of Backups holding each MN's binding; when given it
    /// must match the configured Backup count.
    pub backups_per_mn: Option<u32>,
    /// Baseline MN re-registration timeout, in heartbeat periods.
    pub mn_timeout_periods: u32,
    pub security_bits: u32,
    /// Time each principal spends handling one registration message.
    pub processing: SimDuration,
    /// One-way delay of the wireless hop between an MN and its FA.
    pub wireless: SimDuration,
    /// Upper bound of uniform extra delay per message, from the seeded stream.
    pub jitter: SimDuration,
    pub binding_lifetime: u32,
    pub max_events: u64,
    pub has: Vec<HaSpec>,
    pub fas: Vec<String>,
    pub mns: Vec<MnSpec>,
    pub cns: Vec<String>,
    pub routers: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub traffic: Vec<TrafficSpec>,
    pub failures: Vec<FailureSpec>,
    pub recoveries: Vec<RecoverSpec>,
    pub registrations: Vec<RegisterSpec>,
    pub moves: Vec<MoveSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::Vhaha,
            seed: 1,
            duration: SimDuration::from_secs(30),
            heartbeat_period: SimDuration::from_millis(100),
            backups_per_mn: None,
            mn_timeout_periods: 10,
            security_bits: 64,
            processing: SimDuration::from_micros(1),
            wireless: SimDuration::from_millis(2),
            jitter: SimDuration::ZERO,
            binding_lifetime: 300,
            max_events: 10_000_000,
            has: Vec::new(),
            fas: Vec::new(),
            mns: Vec::new(),
            cns: Vec::new(),
            routers: Vec::new(),
            edges: Vec::new(),
            traffic: Vec::new(),
            failures: Vec::new(),
            recoveries: Vec::new(),
            registrations: Vec::new(),
            moves: Vec::new(),
        }
    }
}

/// Which entry of the configuration an issue concerns, so a parser can map
/// it back to a source line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subject {
    Setting(&'static str),
    Ha(usize),
    Fa(usize),
    Mn(usize),
    Cn(usize),
    Router(usize),
    Edge(usize),
    Traffic(usize),
    Failure(usize),
    Recover(usize),
    Register(usize),
    Move(usize),
    Topology,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub subject: Subject,
    pub message: String,
}

impl ScenarioConfig {
    pub fn ha_index(&self, name: &str) -> Option<usize> {
        self.has.iter().position(|h| h.name == name)
    }

    pub fn fa_index(&self, name: &str) -> Option<usize> {
        self.fas.iter().position(|f| f == name)
    }

    pub fn mn_index(&self, name: &str) -> Option<usize> {
        self.mns.iter().position(|m| m.name == name)
    }

    pub fn backup_count(&self) -> u32 {
        self.has.iter().filter(|h| h.role == ConfiguredRole::Backup).count() as u32
    }

    /// Home links of HAs that start inside the group.
    pub fn group_links(&self) -> BTreeSet<u32> {
        self.has
            .iter()
            .filter(|h| h.role != ConfiguredRole::Spare)
            .map(|h| h.link)
            .collect()
    }

    /// Graph of every wired node. MNs are not nodes; they hang off their FA
    /// over the wireless hop.
    pub fn topology(&self) -> Result<Topology, crate::simnet::SimError> {
        let mut t = Topology::new();
        for name in self
            .has
            .iter()
            .map(|h| &h.name)
            .chain(&self.fas)
            .chain(&self.cns)
            .chain(&self.routers)
        {
            t.add_node(name)?;
        }
        for e in &self.edges {
            t.add_edge(&e.a, &e.b, e.delay)?;
        }
        Ok(t)
    }

    /// All semantic problems, in a stable order.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut push = |subject, message: String| issues.push(Issue { subject, message });

        if self.duration == SimDuration::ZERO {
            push(Subject::Setting("duration"), "duration must be positive".into());
        }
        if self.heartbeat_period == SimDuration::ZERO {
            push(Subject::Setting("heartbeat_period"), "heartbeat_period must be positive".into());
        }
        if self.mn_timeout_periods == 0 {
            push(Subject::Setting("mn_timeout_periods"), "mn_timeout_periods must be positive".into());
        }
        if self.binding_lifetime == 0 {
            push(Subject::Setting("binding_lifetime"), "binding_lifetime must be positive".into());
        }
        if !SUPPORTED_BITS.contains(&self.security_bits) {
            push(
                Subject::Setting("security_bits"),
                format!("security_bits must be one of 64, 512, 1024, got {}", self.security_bits),
            );
        }

        let mut names = BTreeSet::new();
        let mut dup = |subject, name: &str, push: &mut dyn FnMut(Subject, String)| {
            if !names.insert(String::from(name)) {
                push(subject, format!("duplicate node name {name}"));
            }
        };
        for (i, h) in self.has.iter().enumerate() {
            dup(Subject::Ha(i), &h.name, &mut push);
            if h.capacity == 0 {
                push(Subject::Ha(i), format!("{}: capacity must be positive", h.name));
            }
            if !(h.throughput_max > 0.0) {
                push(Subject::Ha(i), format!("{}: throughput_max must be positive", h.name));
            }
        }
        for (i, f) in self.fas.iter().enumerate() {
            dup(Subject::Fa(i), f, &mut push);
        }
        for (i, c) in self.cns.iter().enumerate() {
            dup(Subject::Cn(i), c, &mut push);
        }
        for (i, r) in self.routers.iter().enumerate() {
            dup(Subject::Router(i), r, &mut push);
        }
        let mut mn_names = BTreeSet::new();
        for (i, m) in self.mns.iter().enumerate() {
            if !mn_names.insert(m.name.as_str()) || names.contains(&m.name) {
                push(Subject::Mn(i), format!("duplicate node name {}", m.name));
            }
            if self.fa_index(&m.at).is_none() {
                push(Subject::Mn(i), format!("{}: unknown foreign agent {}", m.name, m.at));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            for end in [&e.a, &e.b] {
                if !names.contains(end) {
                    push(Subject::Edge(i), format!("edge endpoint {end} is not a wired node"));
                }
            }
        }
        if let Ok(t) = self.topology() {
            if !t.is_connected() {
                push(Subject::Topology, "topology is not connected".into());
            }
        }

        let active = self.has.iter().filter(|h| h.role == ConfiguredRole::Active).count();
        if active != 1 {
            push(Subject::Topology, format!("exactly one active HA required, found {active}"));
        }
        if self.mode == Mode::Vhaha {
            if self.group_links().len() < 2 {
                push(Subject::Topology, "vhaha mode needs HAs on at least two home links".into());
            }
            if self.backup_count() == 0 {
                push(Subject::Topology, "vhaha mode needs at least one backup HA".into());
            }
        }
        if let Some(k) = self.backups_per_mn {
            if k != self.backup_count() {
                push(
                    Subject::Setting("backups_per_mn"),
                    format!("backups_per_mn = {k} but {} backup HAs are configured", self.backup_count()),
                );
            }
        }

        let end = SimTime::ZERO + self.duration;
        for (i, t) in self.traffic.iter().enumerate() {
            if !self.cns.contains(&t.cn) {
                push(Subject::Traffic(i), format!("unknown correspondent {}", t.cn));
            }
            if self.mn_index(&t.mn).is_none() {
                push(Subject::Traffic(i), format!("unknown mobile node {}", t.mn));
            }
            if !(t.rate > 0.0) || !t.rate.is_finite() {
                push(Subject::Traffic(i), "rate must be positive".into());
            }
            if t.start >= t.stop {
                push(Subject::Traffic(i), "start must precede stop".into());
            }
        }
        for (i, f) in self.failures.iter().enumerate() {
            match &f.target {
                FailTarget::Ha(n) if self.ha_index(n).is_none() => {
                    push(Subject::Failure(i), format!("unknown HA {n}"));
                }
                FailTarget::Link(l) if !self.has.iter().any(|h| h.link == *l) => {
                    push(Subject::Failure(i), format!("no HA on link {l}"));
                }
                _ => {}
            }
            if f.at > end {
                push(Subject::Failure(i), "failure scheduled after the end of the run".into());
            }
        }
        for (i, r) in self.recoveries.iter().enumerate() {
            if self.ha_index(&r.ha).is_none() {
                push(Subject::Recover(i), format!("unknown HA {}", r.ha));
            }
        }
        for (i, r) in self.registrations.iter().enumerate() {
            if self.mn_index(&r.mn).is_none() {
                push(Subject::Register(i), format!("unknown mobile node {}", r.mn));
            }
        }
        for (i, m) in self.moves.iter().enumerate() {
            if self.mn_index(&m.mn).is_none() {
                push(Subject::Move(i), format!("unknown mobile node {}", m.mn));
            }
            if self.fa_index(&m.to).is_none() {
                push(Subject::Move(i), format!("unknown foreign agent {}", m.to));
            }
        }
        issues
    }
}
