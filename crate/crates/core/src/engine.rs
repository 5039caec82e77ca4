//! Runs one scenario: HA redundancy, heartbeat detection, recovery,
//! registration and the CN→MN data plane on a single event queue.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::{recover, DetectorError, DetectorState, Heartbeat, PeerStatus, RecoveryAction};
use crate::forwarding::{
    cn_send, decapsulate_at_coa, route_to_active, select_pickup_ha, tunnel_to_coa, LossReason, Packet,
};
use crate::ha::{compute_priority, highest_priority, Address, GlobalHaAddress, HaError, HaId, HaRole, HaState, MobilityBinding};
use crate::metrics::{FailureReport, MetricsReport, RegistrationReport, Suspicion};
use crate::registration::crypto::{rng_for, ta_setup, CryptoError};
use crate::registration::protocol::{ForeignAgent, HomeRegistrar, MobileNode, RegistryError};
use crate::registration::wire::{peek_kind, Advertisement, Kind, WireMessage};
use crate::scenario::{ConfiguredRole, FailTarget, Issue, Mode, ScenarioConfig};
use crate::simnet::{EventQueue, NodeIx, Router, SimError};
use crate::time::{SimDuration, SimTime};

/// Virtual address every MN and CN uses for the HA group.
pub const GLOBAL_ADDRESS: &str = "global:vhaha";
/// Principal identity the HA group registers under.
pub const HA_PRINCIPAL: &str = "ha:global";
/// Throughput is averaged over this many heartbeat periods.
pub const THROUGHPUT_WINDOW_PERIODS: u64 = 10;

const MAX_VIOLATIONS: usize = 32;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario ({} issue(s)): {}", .0.len(), .0.first().map(|i| i.message.as_str()).unwrap_or(""))]
    Invalid(Vec<Issue>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Ha(#[from] HaError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Report plus the full event trace it was computed from.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: MetricsReport,
    pub trace: Vec<String>,
}

pub fn run_experiment(cfg: &ScenarioConfig) -> Result<Outcome, EngineError> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(EngineError::Invalid(issues));
    }
    let mut sim = Sim::new(cfg)?;
    sim.run()?;
    Ok(sim.finish())
}

/// SHA-256 over the trace lines, newline-terminated, as lowercase hex.
pub fn trace_hash(trace: &[String]) -> String {
    let mut h = Sha256::new();
    for line in trace {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hop {
    FaToMn,
    MnToFa,
    FaToHa(usize),
    HaToFa(usize),
}

#[derive(Debug, Clone)]
enum Control {
    Takeover { faulty: usize, new_active: Option<usize> },
    Promote,
    Recruit,
    Sync(Vec<MobilityBinding>),
    Replace,
}

impl Control {
    fn name(&self) -> &'static str {
        match self {
            Control::Takeover { .. } => "takeover",
            Control::Promote => "promote",
            Control::Recruit => "recruit",
            Control::Sync(_) => "sync",
            Control::Replace => "replace",
        }
    }
}

#[derive(Debug, Clone)]
enum Ev {
    HbTimer(usize),
    HbArrive { to: usize, hb: Heartbeat },
    DetectorTick(usize),
    RecoveryTimer { actor: usize, faulty: usize },
    Control { from: usize, to: usize, msg: Control, failure: Option<usize> },
    RegStart { mn: usize, for_failure: Option<usize> },
    RegSend { reg: usize, hop: Hop, frame: Vec<u8> },
    RegArrive { reg: usize, hop: Hop, frame: Vec<u8> },
    RegDone { reg: usize },
    BuArrive { reg: usize, to: usize, binding: MobilityBinding, sent: SimTime },
    Move { mn: usize, fa: usize },
    CnSend { flow: usize, k: u64 },
    AtPickup { pkt: usize, ha: usize },
    AtActive { pkt: usize, ha: usize },
    AtCoa { pkt: usize, fa: usize },
    Fail(usize),
    Recover(usize),
    MnTimeout { mn: usize, failure: usize },
}

/// Failures and recoveries run after every ordinary event of their instant.
const PHASE_FAULT: u8 = 1;

#[derive(Debug, Clone, Copy)]
struct PeerView {
    role: HaRole,
    workload: f64,
}

struct HaRt {
    name: String,
    node: NodeIx,
    spare: bool,
    alive: bool,
    capacity: u32,
    throughput_max: f64,
    state: HaState,
    detector: DetectorState,
    view: BTreeMap<HaId, PeerView>,
    tick_at: Option<SimTime>,
    handled: VecDeque<SimTime>,
}

struct FaRt {
    name: String,
    node: NodeIx,
    agent: ForeignAgent,
}

struct MnRt {
    name: String,
    home: Address,
    fa: usize,
    attached_coa: Option<String>,
    node: MobileNode,
    binding_seq: u64,
}

struct Flow {
    cn: usize,
    mn: usize,
    interval: SimDuration,
    start: SimTime,
    stop: SimTime,
}

struct PacketRec {
    mn: usize,
    payload: Vec<u8>,
    packet: Option<Packet>,
    done: bool,
}

struct RegRec {
    mn: usize,
    fa: usize,
    started: SimTime,
    sends: [Option<SimTime>; 4],
    done: Option<SimTime>,
    bu_sent: u32,
    bu_transit: SimDuration,
    failed: Option<String>,
    for_failure: Option<usize>,
}

struct FailRec {
    target: String,
    at: SimTime,
    failed: Vec<usize>,
    active_lost: bool,
    permanent: bool,
    predicted: SimDuration,
    actor_suspicion: Option<SimDuration>,
    suspicions: Vec<Suspicion>,
    recovered_at: Option<SimTime>,
    by_redundancy: bool,
    actions: Vec<String>,
    in_flight: u64,
    /// Failed members whose recovery has not run yet.
    pending: BTreeSet<usize>,
    resolved: bool,
    ota: u64,
}

struct Sim<'c> {
    cfg: &'c ScenarioConfig,
    end: SimTime,
    queue: EventQueue<Ev>,
    router: Router,
    rng: ChaCha20Rng,
    has: Vec<HaRt>,
    ids: BTreeMap<HaId, usize>,
    global: GlobalHaAddress,
    registrar: HomeRegistrar,
    fas: Vec<FaRt>,
    mns: Vec<MnRt>,
    cn_nodes: Vec<NodeIx>,
    flows: Vec<Flow>,
    packets: Vec<PacketRec>,
    regs: Vec<RegRec>,
    failures: Vec<FailRec>,
    registered: BTreeSet<Address>,
    coa_owner: BTreeMap<String, usize>,
    pending_bu: u64,
    pending_control: u64,
    loss_times: Vec<SimTime>,
    report: MetricsReport,
    violations_total: u64,
    trace: Vec<String>,
}

fn ha_id(cfg: &ScenarioConfig, i: usize) -> HaId {
    HaId::new(cfg.has[i].link, i as u32 + 1)
}

fn role_of(r: ConfiguredRole) -> HaRole {
    match r {
        ConfiguredRole::Active => HaRole::Active,
        ConfiguredRole::Backup => HaRole::Backup,
        ConfiguredRole::Inactive | ConfiguredRole::Spare => HaRole::Inactive,
    }
}

fn mn_principal(name: &str) -> String {
    format!("nai:{name}@home")
}

impl<'c> Sim<'c> {
    fn new(cfg: &'c ScenarioConfig) -> Result<Self, EngineError> {
        let topo = cfg.topology()?;
        let seed = cfg.seed.to_be_bytes();
        let mut ta = ta_setup(cfg.security_bits, &seed)?;
        let params = ta.params().clone();
        let ha_keys = ta.enroll(HA_PRINCIPAL)?;
        let mut registrar = HomeRegistrar::new(params.clone(), ha_keys, rng_for(&seed, "HA"));

        let mut has = Vec::new();
        let mut ids = BTreeMap::new();
        let active_link = cfg
            .has
            .iter()
            .find(|h| h.role == ConfiguredRole::Active)
            .map(|h| h.link)
            .unwrap_or_default();
        let mut members = Vec::new();
        for (i, spec) in cfg.has.iter().enumerate() {
            let id = ha_id(cfg, i);
            ids.insert(id, i);
            let spare = spec.role == ConfiguredRole::Spare;
            let member = match cfg.mode {
                _ if spare => false,
                Mode::Vhaha => true,
                Mode::SingleLinkRedundancy => spec.link == active_link,
                Mode::NoRedundancy => spec.role == ConfiguredRole::Active,
            };
            if member {
                members.push(id);
            }
            has.push(HaRt {
                name: spec.name.clone(),
                node: topo.node(&spec.name)?,
                spare,
                alive: true,
                capacity: spec.capacity,
                throughput_max: spec.throughput_max,
                state: HaState::new(id, role_of(spec.role), spec.capacity, spec.throughput_max)?,
                detector: DetectorState::new(cfg.heartbeat_period)?,
                view: BTreeMap::new(),
                tick_at: None,
                handled: VecDeque::new(),
            });
        }
        let mut global = GlobalHaAddress::new(Address::new(GLOBAL_ADDRESS), members);
        for (i, spec) in cfg.has.iter().enumerate() {
            if spec.role == ConfiguredRole::Active {
                global.map_active(ha_id(cfg, i))?;
            }
        }

        let mut fas = Vec::new();
        for name in &cfg.fas {
            let keys = ta.enroll(name)?;
            fas.push(FaRt {
                name: name.clone(),
                node: topo.node(name)?,
                agent: ForeignAgent::new(params.clone(), keys, rng_for(&seed, &format!("FA {name}"))),
            });
        }
        let mut mns = Vec::new();
        for spec in &cfg.mns {
            let id_mn = mn_principal(&spec.name);
            let home = format!("hoa:{}", spec.name);
            let keys = ta.enroll(&id_mn)?;
            let provision = registrar.initial_registration(&id_mn, &home)?;
            mns.push(MnRt {
                name: spec.name.clone(),
                home: Address::new(home),
                fa: cfg.fa_index(&spec.at).unwrap_or_default(),
                attached_coa: None,
                node: MobileNode::new(params.clone(), &id_mn, keys, provision, rng_for(&seed, &format!("MN {}", spec.name))),
                binding_seq: 0,
            });
        }
        let cn_nodes = cfg.cns.iter().map(|c| topo.node(c)).collect::<Result<Vec<_>, _>>()?;
        let flows = cfg
            .traffic
            .iter()
            .map(|t| Flow {
                cn: cfg.cns.iter().position(|c| *c == t.cn).unwrap_or_default(),
                mn: cfg.mn_index(&t.mn).unwrap_or_default(),
                interval: t.interval(),
                start: t.start,
                stop: t.stop,
            })
            .collect();

        let mut report = MetricsReport::empty(cfg.mode, cfg.seed);
        report.duration = cfg.duration;
        report.heartbeat_period = cfg.heartbeat_period;
        let mut sim = Sim {
            cfg,
            end: SimTime::ZERO + cfg.duration,
            queue: EventQueue::new(cfg.max_events),
            router: Router::new(topo),
            rng: rng_for(&seed, "net"),
            has,
            ids,
            global,
            registrar,
            fas,
            mns,
            cn_nodes,
            flows,
            packets: Vec::new(),
            regs: Vec::new(),
            failures: Vec::new(),
            registered: BTreeSet::new(),
            coa_owner: BTreeMap::new(),
            pending_bu: 0,
            pending_control: 0,
            loss_times: Vec::new(),
            report,
            violations_total: 0,
            trace: Vec::new(),
        };
        sim.bootstrap()?;
        Ok(sim)
    }

    fn bootstrap(&mut self) -> Result<(), EngineError> {
        let cfg = self.cfg;
        let members: Vec<usize> = self.member_indices();
        for &i in &members {
            for &j in &members {
                if i == j {
                    continue;
                }
                let delay = self.path_delay(self.has[j].node, self.has[i].node).unwrap_or(SimDuration::ZERO);
                let peer = self.has[j].state.id;
                let role = self.has[j].state.role();
                self.has[i].detector.watch(peer, SimTime::ZERO, delay);
                self.has[i].view.insert(peer, PeerView { role, workload: 0.0 });
            }
            self.arm_tick(i)?;
        }
        if cfg.mode != Mode::NoRedundancy {
            for i in 0..self.has.len() {
                self.queue.schedule(SimTime::ZERO + cfg.heartbeat_period, Ev::HbTimer(i))?;
            }
        }
        for mn in 0..self.mns.len() {
            self.queue.schedule(SimTime::ZERO, Ev::RegStart { mn, for_failure: None })?;
        }
        for r in &cfg.registrations {
            if let Some(mn) = cfg.mn_index(&r.mn) {
                self.queue.schedule(r.at, Ev::RegStart { mn, for_failure: None })?;
            }
        }
        for m in &cfg.moves {
            if let (Some(mn), Some(fa)) = (cfg.mn_index(&m.mn), cfg.fa_index(&m.to)) {
                self.queue.schedule(m.at, Ev::Move { mn, fa })?;
            }
        }
        for (flow, f) in self.flows.iter().enumerate() {
            self.queue.schedule(f.start, Ev::CnSend { flow, k: 0 })?;
        }
        for (i, f) in cfg.failures.iter().enumerate() {
            self.queue.schedule_in_phase(f.at, PHASE_FAULT, Ev::Fail(i))?;
        }
        for r in &cfg.recoveries {
            if let Some(ha) = cfg.ha_index(&r.ha) {
                self.queue.schedule_in_phase(r.at, PHASE_FAULT, Ev::Recover(ha))?;
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), EngineError> {
        while let Some((now, ev)) = self.queue.pop_until(self.end)? {
            self.handle(now, ev)?;
            if self.cfg.mode == Mode::Vhaha {
                self.check_invariants(now);
            }
        }
        // packets already sent are followed to delivery or loss; nothing
        // else runs past the horizon
        while let Some((now, ev)) = self.queue.pop_until(SimTime::from_micros(u64::MAX))? {
            if matches!(ev, Ev::AtPickup { .. } | Ev::AtActive { .. } | Ev::AtCoa { .. }) {
                self.handle(now, ev)?;
            }
        }
        Ok(())
    }

    // ---- helpers ----

    fn log(&mut self, now: SimTime, body: fmt::Arguments<'_>) {
        self.trace.push(format!("t={now} {body}"));
    }

    fn path_delay(&mut self, from: NodeIx, to: NodeIx) -> Option<SimDuration> {
        self.router.route(from, to).map(|r| r.delay)
    }

    fn jittered(&mut self, d: SimDuration) -> SimDuration {
        let j = self.cfg.jitter.as_micros();
        if j == 0 {
            d
        } else {
            d + SimDuration::from_micros(self.rng.next_u64() % (j + 1))
        }
    }

    fn member_indices(&self) -> Vec<usize> {
        self.global.members().iter().map(|id| self.ids[id]).collect()
    }

    fn active_index(&self) -> Option<usize> {
        self.global.active().map(|id| self.ids[&id])
    }

    fn recovery_open(&self) -> bool {
        self.failures.iter().any(|f| !f.resolved)
    }

    fn arm_tick(&mut self, i: usize) -> Result<(), EngineError> {
        let Some(d) = self.has[i].detector.next_deadline() else {
            return Ok(());
        };
        if self.has[i].tick_at.is_none_or(|t| d < t) {
            let d = d.max(self.queue.now());
            self.has[i].tick_at = Some(d);
            self.queue.schedule(d, Ev::DetectorTick(i))?;
        }
        Ok(())
    }

    /// Latest failure that took `ha` down and is still in effect.
    fn failure_of(&self, ha: usize) -> Option<usize> {
        if self.has[ha].alive {
            return None;
        }
        self.failures.iter().rposition(|f| f.failed.contains(&ha))
    }

    fn settle(&mut self, f: usize, ha: usize, now: SimTime) {
        let rec = &mut self.failures[f];
        rec.pending.remove(&ha);
        if rec.pending.is_empty() && !rec.resolved {
            rec.resolved = true;
            if rec.recovered_at.is_none() && !rec.active_lost {
                rec.recovered_at = Some(now);
                rec.by_redundancy = true;
            }
        }
    }

    fn count_ota(&mut self) {
        self.report.messages.ota += 1;
        let mut during = false;
        for f in self.failures.iter_mut().filter(|f| !f.resolved) {
            f.ota += 1;
            during = true;
        }
        if during {
            self.report.messages.ota_during_recovery += 1;
        }
    }

    fn send_control(&mut self, now: SimTime, from: usize, to: usize, msg: Control, failure: Option<usize>) -> Result<(), EngineError> {
        self.report.messages.recovery += 1;
        let kind = msg.name();
        let (src, dst) = (self.has[from].name.clone(), self.has[to].name.clone());
        self.log(now, format_args!("ev={kind} src={src} dst={dst}"));
        match self.path_delay(self.has[from].node, self.has[to].node) {
            Some(d) => {
                let d = self.jittered(d);
                self.pending_control += 1;
                self.queue.schedule(now + d, Ev::Control { from, to, msg, failure })?;
            }
            None => self.report.messages.dropped += 1,
        }
        Ok(())
    }

    // ---- dispatch ----

    fn handle(&mut self, now: SimTime, ev: Ev) -> Result<(), EngineError> {
        match ev {
            Ev::HbTimer(i) => self.on_hb_timer(now, i),
            Ev::HbArrive { to, hb } => self.on_hb_arrive(now, to, hb),
            Ev::DetectorTick(i) => self.on_detector_tick(now, i),
            Ev::RecoveryTimer { actor, faulty } => self.on_recovery_timer(now, actor, faulty),
            Ev::Control { from, to, msg, failure } => self.on_control(now, from, to, msg, failure),
            Ev::RegStart { mn, for_failure } => self.on_reg_start(now, mn, for_failure),
            Ev::RegSend { reg, hop, frame } => self.on_reg_send(now, reg, hop, frame),
            Ev::RegArrive { reg, hop, frame } => self.on_reg_arrive(now, reg, hop, frame),
            Ev::RegDone { reg } => self.on_reg_done(now, reg),
            Ev::BuArrive { reg, to, binding, sent } => self.on_bu_arrive(now, reg, to, binding, sent),
            Ev::Move { mn, fa } => self.on_move(now, mn, fa),
            Ev::CnSend { flow, k } => self.on_cn_send(now, flow, k),
            Ev::AtPickup { pkt, ha } => self.on_pickup(now, pkt, ha),
            Ev::AtActive { pkt, ha } => self.on_active(now, pkt, ha),
            Ev::AtCoa { pkt, fa } => self.on_coa(now, pkt, fa),
            Ev::Fail(f) => self.on_fail(now, f),
            Ev::Recover(ha) => self.on_recover(now, ha),
            Ev::MnTimeout { mn, failure } => self.on_mn_timeout(now, mn, failure),
        }
    }

    // ---- heartbeats and detection ----

    fn on_hb_timer(&mut self, now: SimTime, i: usize) -> Result<(), EngineError> {
        let period = self.cfg.heartbeat_period;
        if now + period <= self.end {
            self.queue.schedule(now + period, Ev::HbTimer(i))?;
        }
        let id = self.has[i].state.id;
        if !self.has[i].alive || !self.global.is_member(&id) {
            return Ok(());
        }
        let window = period.saturating_mul(THROUGHPUT_WINDOW_PERIODS);
        let ha = &mut self.has[i];
        while ha.handled.front().is_some_and(|&t| now.since(t) >= window) {
            ha.handled.pop_front();
        }
        ha.state.set_throughput(ha.handled.len() as f64 / window.as_secs_f64());
        let hb = Heartbeat {
            sender: id,
            seq: now.as_micros() / period.as_micros(),
            sent_at: now,
            role: ha.state.role(),
            workload: ha.state.workload(),
        };
        let name = ha.name.clone();
        self.log(now, format_args!("ev=heartbeat src={name} dst=* seq={}", hb.seq));
        for j in self.member_indices() {
            if j == i {
                continue;
            }
            self.report.messages.heartbeat += 1;
            match self.path_delay(self.has[i].node, self.has[j].node) {
                Some(d) => {
                    let d = self.jittered(d);
                    self.queue.schedule(now + d, Ev::HbArrive { to: j, hb: hb.clone() })?;
                }
                None => self.report.messages.dropped += 1,
            }
        }
        Ok(())
    }

    fn on_hb_arrive(&mut self, now: SimTime, to: usize, hb: Heartbeat) -> Result<(), EngineError> {
        let me = self.has[to].state.id;
        if !self.has[to].alive || !self.global.is_member(&me) {
            self.report.messages.dropped += 1;
            return Ok(());
        }
        if !self.global.is_member(&hb.sender) {
            return Ok(());
        }
        let ha = &mut self.has[to];
        ha.view.insert(
            hb.sender,
            PeerView {
                role: hb.role,
                workload: hb.workload,
            },
        );
        ha.state.peer_table.insert(hb.sender, now);
        if ha.detector.on_heartbeat(&hb, now) {
            let (src, dst) = (ha.name.clone(), self.has[self.ids[&hb.sender]].name.clone());
            self.log(now, format_args!("ev=unsuspect src={src} dst={dst}"));
        }
        self.arm_tick(to)
    }

    fn on_detector_tick(&mut self, now: SimTime, i: usize) -> Result<(), EngineError> {
        if self.has[i].tick_at != Some(now) {
            return Ok(());
        }
        self.has[i].tick_at = None;
        let me = self.has[i].state.id;
        if !self.has[i].alive || !self.global.is_member(&me) {
            return Ok(());
        }
        let newly = self.has[i].detector.tick(now);
        for x_id in newly {
            let x = self.ids[&x_id];
            let (src, dst) = (self.has[i].name.clone(), self.has[x].name.clone());
            self.log(now, format_args!("ev=suspect src={src} dst={dst}"));
            let failure = self.failure_of(x);
            if let Some(f) = failure {
                let rec = &mut self.failures[f];
                rec.suspicions.push(Suspicion {
                    watcher: src,
                    suspect: dst,
                    after: now.since(rec.at),
                });
            }
            if self.should_act(i, x_id) {
                if let Some(f) = failure {
                    let rec = &mut self.failures[f];
                    rec.actor_suspicion.get_or_insert(now.since(rec.at));
                }
                let at = now + self.cfg.heartbeat_period;
                self.queue.schedule(at, Ev::RecoveryTimer { actor: i, faulty: x })?;
            }
        }
        self.arm_tick(i)
    }

    fn viewed_role(&self, observer: usize, peer: HaId) -> HaRole {
        if peer == self.has[observer].state.id {
            return self.has[observer].state.role();
        }
        self.has[observer]
            .view
            .get(&peer)
            .map(|v| v.role)
            .unwrap_or_else(|| role_of(self.cfg.has[self.ids[&peer]].role))
    }

    /// Only the best live Backup acts on the Active's failure; the Active
    /// acts on every other member's failure.
    fn should_act(&self, i: usize, faulty: HaId) -> bool {
        let me = &self.has[i];
        match self.viewed_role(i, faulty) {
            HaRole::Active => {
                if me.state.role() != HaRole::Backup {
                    return false;
                }
                let others = me.view.iter().filter(|(id, v)| {
                    **id != faulty && v.role == HaRole::Backup && self.global.is_member(id) && !me.detector.is_suspected(id)
                });
                let candidates = others
                    .map(|(id, v)| (*id, compute_priority(v.workload)))
                    .chain([(me.state.id, me.state.priority())]);
                highest_priority(candidates) == Some(me.state.id)
            }
            _ => me.state.role() == HaRole::Active,
        }
    }

    fn on_recovery_timer(&mut self, now: SimTime, actor: usize, x: usize) -> Result<(), EngineError> {
        let x_id = self.has[x].state.id;
        if !self.has[actor].alive || !self.global.is_member(&x_id) || !self.has[actor].detector.is_suspected(&x_id) {
            return Ok(());
        }
        let x_role = self.viewed_role(actor, x_id);
        let permanent = self
            .failure_of(x)
            .map(|f| self.failures[f].permanent)
            .unwrap_or(false);
        let peers = self.peer_statuses(actor, x_id);
        let failure = self.failure_of(x);
        let actor_name = self.has[actor].name.clone();
        match recover(x_id, x_role, permanent, &peers) {
            Ok(plan) => {
                let promote = plan.iter().find_map(|a| match a {
                    RecoveryAction::PromoteBackup(b) => Some(self.ids[b]),
                    _ => None,
                });
                for action in plan {
                    let label = self.action_label(&action);
                    self.log(now, format_args!("ev=recovery src={actor_name} action={label}"));
                    if let Some(f) = failure {
                        self.failures[f].actions.push(label);
                    }
                    match action {
                        RecoveryAction::DeleteFaultyEntry(_) => {
                            self.delete_member(now, actor, x, promote, failure)?;
                        }
                        RecoveryAction::PromoteBackup(b) => {
                            let b = self.ids[&b];
                            if b == actor {
                                self.promote(now, b, failure)?;
                            } else {
                                self.send_control(now, actor, b, Control::Promote, failure)?;
                            }
                        }
                        RecoveryAction::RecruitBackup(r) => {
                            let r = self.ids[&r];
                            let source = self.active_index().unwrap_or(actor);
                            let snapshot = self.has[source].state.binding_snapshot();
                            let r_id = self.has[r].state.id;
                            if let Some(v) = self.has[actor].view.get_mut(&r_id) {
                                v.role = HaRole::Backup;
                            }
                            self.send_recruit(now, actor, r, snapshot, failure)?;
                        }
                        RecoveryAction::ReplaceInactive(s) => {
                            let s = self.ids[&s];
                            self.send_control(now, actor, s, Control::Replace, failure)?;
                        }
                        RecoveryAction::NoOp => {
                            if let Some(f) = failure {
                                self.settle(f, x, now);
                            }
                        }
                    }
                }
            }
            Err(e) => {
                self.log(now, format_args!("ev=recovery-failed src={actor_name} reason=\"{e}\""));
                if let Some(f) = failure {
                    self.failures[f].actions.push("no-candidate".into());
                }
                if x_role != HaRole::Active {
                    // the faulty entry is still removed; the group runs degraded
                    self.delete_member(now, actor, x, None, failure)?;
                }
            }
        }
        Ok(())
    }

    fn action_label(&self, a: &RecoveryAction) -> String {
        let name = |id: &HaId| self.has[self.ids[id]].name.clone();
        match a {
            RecoveryAction::DeleteFaultyEntry(id) => format!("delete:{}", name(id)),
            RecoveryAction::PromoteBackup(id) => format!("promote:{}", name(id)),
            RecoveryAction::RecruitBackup(id) => format!("recruit:{}", name(id)),
            RecoveryAction::ReplaceInactive(id) => format!("replace:{}", name(id)),
            RecoveryAction::NoOp => "noop".into(),
        }
    }

    fn peer_statuses(&self, actor: usize, faulty: HaId) -> Vec<PeerStatus> {
        let me = &self.has[actor];
        let mut out = Vec::new();
        for id in self.global.members() {
            if *id == faulty {
                continue;
            }
            if *id == me.state.id {
                out.push(PeerStatus {
                    id: *id,
                    role: me.state.role(),
                    priority: me.state.priority(),
                    live: true,
                    spare: false,
                });
            } else if let Some(v) = me.view.get(id) {
                out.push(PeerStatus {
                    id: *id,
                    role: v.role,
                    priority: compute_priority(v.workload),
                    live: !me.detector.is_suspected(id),
                    spare: false,
                });
            }
        }
        for h in self.has.iter().filter(|h| h.spare && !self.global.is_member(&h.state.id)) {
            out.push(PeerStatus {
                id: h.state.id,
                role: HaRole::Inactive,
                priority: h.state.priority(),
                live: h.alive,
                spare: true,
            });
        }
        out
    }

    fn delete_member(
        &mut self,
        now: SimTime,
        actor: usize,
        x: usize,
        new_active: Option<usize>,
        failure: Option<usize>,
    ) -> Result<(), EngineError> {
        let x_id = self.has[x].state.id;
        self.global.remove_member(&x_id);
        let a = &mut self.has[actor];
        a.detector.forget(&x_id);
        a.view.remove(&x_id);
        a.state.forget_peer(&x_id);
        for j in self.member_indices() {
            if j != actor {
                self.send_control(now, actor, j, Control::Takeover { faulty: x, new_active }, None)?;
            }
        }
        if let Some(f) = failure {
            self.settle(f, x, now);
        }
        Ok(())
    }

    fn promote(&mut self, now: SimTime, b: usize, failure: Option<usize>) -> Result<(), EngineError> {
        let id = self.has[b].state.id;
        self.has[b].state.apply_role_transition(HaRole::Active)?;
        self.global.map_active(id)?;
        let name = self.has[b].name.clone();
        self.log(now, format_args!("ev=promote src={name} dst=*"));
        if let Some(f) = failure {
            let rec = &mut self.failures[f];
            rec.recovered_at.get_or_insert(now);
            rec.by_redundancy = true;
        }
        // failures the new Active is now responsible for
        let suspected: Vec<HaId> = self.has[b].detector.suspected().iter().copied().collect();
        for y in suspected {
            if self.global.is_member(&y) {
                self.queue.schedule(now, Ev::RecoveryTimer { actor: b, faulty: self.ids[&y] })?;
            }
        }
        Ok(())
    }

    fn send_recruit(
        &mut self,
        now: SimTime,
        from: usize,
        to: usize,
        snapshot: Vec<MobilityBinding>,
        failure: Option<usize>,
    ) -> Result<(), EngineError> {
        // both legs share one delay so the sync never overtakes the recruit
        self.report.messages.recovery += 2;
        let (src, dst) = (self.has[from].name.clone(), self.has[to].name.clone());
        self.log(now, format_args!("ev=recruit src={src} dst={dst}"));
        self.log(now, format_args!("ev=sync src={src} dst={dst} bindings={}", snapshot.len()));
        match self.path_delay(self.has[from].node, self.has[to].node) {
            Some(d) => {
                let at = now + self.jittered(d);
                self.pending_control += 2;
                self.queue.schedule(at, Ev::Control { from, to, msg: Control::Recruit, failure: None })?;
                self.queue.schedule(at, Ev::Control { from, to, msg: Control::Sync(snapshot), failure })?;
            }
            None => self.report.messages.dropped += 2,
        }
        Ok(())
    }

    fn on_control(&mut self, now: SimTime, _from: usize, to: usize, msg: Control, failure: Option<usize>) -> Result<(), EngineError> {
        self.pending_control -= 1;
        if !self.has[to].alive {
            self.report.messages.dropped += 1;
            return Ok(());
        }
        match msg {
            Control::Takeover { faulty, new_active } => {
                let x_id = self.has[faulty].state.id;
                let ha = &mut self.has[to];
                ha.detector.forget(&x_id);
                ha.view.remove(&x_id);
                ha.state.forget_peer(&x_id);
                if let Some(a) = new_active {
                    let a_id = self.has[a].state.id;
                    if let Some(v) = self.has[to].view.get_mut(&a_id) {
                        v.role = HaRole::Active;
                    }
                }
            }
            Control::Promote => {
                if self.has[to].state.role() == HaRole::Backup {
                    self.promote(now, to, failure)?;
                }
            }
            Control::Recruit => {
                if self.has[to].state.role() == HaRole::Inactive {
                    self.has[to].state.apply_role_transition(HaRole::Backup)?;
                }
            }
            Control::Sync(bindings) => {
                if self.has[to].state.role() == HaRole::Backup {
                    self.has[to].state.sync_from_active(&bindings, false)?;
                }
                if let Some(f) = failure {
                    let rec = &mut self.failures[f];
                    if !rec.active_lost {
                        rec.recovered_at.get_or_insert(now);
                    }
                }
            }
            Control::Replace => {
                let id = self.has[to].state.id;
                self.global.add_member(id);
                self.has[to].spare = false;
                self.rewatch(now, to);
                self.arm_tick(to)?;
                let name = self.has[to].name.clone();
                self.log(now, format_args!("ev=join src={name} role=inactive"));
                if let Some(f) = failure {
                    self.failures[f].recovered_at.get_or_insert(now);
                }
            }
        }
        Ok(())
    }

    /// Fresh detector and view for an HA entering (or re-entering) the group.
    fn rewatch(&mut self, now: SimTime, i: usize) {
        let period = self.cfg.heartbeat_period;
        let mut det = DetectorState::new(period).expect("validated period");
        let mut view = BTreeMap::new();
        for j in self.member_indices() {
            if j == i {
                continue;
            }
            let d = self.path_delay(self.has[j].node, self.has[i].node).unwrap_or(SimDuration::ZERO);
            let id = self.has[j].state.id;
            det.watch(id, now, d);
            view.insert(
                id,
                PeerView {
                    role: self.has[j].state.role(),
                    workload: self.has[j].state.workload(),
                },
            );
        }
        let ha = &mut self.has[i];
        ha.detector = det;
        ha.view = view;
        ha.tick_at = None;
    }

    // ---- failure injection ----

    fn on_fail(&mut self, now: SimTime, f: usize) -> Result<(), EngineError> {
        let spec = &self.cfg.failures[f];
        let targets: Vec<usize> = match &spec.target {
            FailTarget::Ha(n) => self.cfg.ha_index(n).into_iter().collect(),
            FailTarget::CurrentActive => self.active_index().into_iter().collect(),
            FailTarget::Link(l) => (0..self.has.len()).filter(|&i| self.cfg.has[i].link == *l).collect(),
        };
        let targets: Vec<usize> = targets.into_iter().filter(|&i| self.has[i].alive).collect();
        let target = match &spec.target {
            FailTarget::CurrentActive => targets
                .first()
                .map(|&i| self.has[i].name.clone())
                .unwrap_or_else(|| "active".into()),
            t => t.to_string(),
        };
        let active_lost = self.active_index().is_some_and(|a| targets.contains(&a));
        for &i in &targets {
            let ha = &mut self.has[i];
            ha.alive = false;
            ha.state.mark_failed();
            self.router.set_down(ha.node, true);
            let name = ha.name.clone();
            self.log(now, format_args!("ev=fail src={name} permanent={}", spec.permanent));
        }
        let pending: BTreeSet<usize> = targets
            .iter()
            .copied()
            .filter(|&i| self.global.is_member(&self.has[i].state.id))
            .collect();
        let mut prop = SimDuration::ZERO;
        for &x in &pending {
            for m in self.member_indices() {
                if self.has[m].alive {
                    if let Some(d) = self.path_delay(self.has[x].node, self.has[m].node) {
                        prop = prop.max(d);
                    }
                }
            }
        }
        let in_flight = self.packets.iter().filter(|p| !p.done).count() as u64;
        let resolved = pending.is_empty();
        self.failures.push(FailRec {
            target,
            at: now,
            failed: targets,
            active_lost,
            permanent: spec.permanent,
            predicted: self.cfg.heartbeat_period.saturating_mul(3) + prop,
            actor_suspicion: None,
            suspicions: Vec::new(),
            recovered_at: None,
            by_redundancy: false,
            actions: Vec::new(),
            in_flight,
            pending,
            resolved,
            ota: 0,
        });
        let idx = self.failures.len() - 1;
        if active_lost && self.cfg.mode != Mode::Vhaha {
            let at = now + self.cfg.heartbeat_period.saturating_mul(self.cfg.mn_timeout_periods as u64);
            for mn in 0..self.mns.len() {
                self.queue.schedule(at, Ev::MnTimeout { mn, failure: idx })?;
            }
        }
        Ok(())
    }

    fn on_recover(&mut self, now: SimTime, i: usize) -> Result<(), EngineError> {
        if self.has[i].alive {
            return Ok(());
        }
        let id = self.has[i].state.id;
        let failure = self.failure_of(i);
        self.has[i].alive = true;
        self.router.set_down(self.has[i].node, false);
        let name = self.has[i].name.clone();
        if self.global.is_member(&id) {
            self.has[i].state.revive();
            let role = self.has[i].state.role();
            if role == HaRole::Active && self.global.active() != Some(id) {
                self.has[i].state.rejoin_as_inactive();
                self.report.zombies += 1;
                self.log(now, format_args!("ev=zombie src={name}"));
            }
            self.log(now, format_args!("ev=recover src={name} role={}", self.has[i].state.role()));
            if let Some(f) = failure {
                self.settle(f, i, now);
            }
        } else if !self.has[i].spare {
            let was_active = self.has[i].state.role() == HaRole::Active;
            self.has[i].state.rejoin_as_inactive();
            if self.cfg.mode == Mode::Vhaha {
                self.global.add_member(id);
            }
            if was_active {
                self.report.zombies += 1;
                self.log(now, format_args!("ev=zombie src={name}"));
            }
            self.log(now, format_args!("ev=recover src={name} role=inactive"));
        } else {
            self.has[i].state.revive();
            self.log(now, format_args!("ev=recover src={name} role=spare"));
        }
        if self.global.is_member(&id) {
            self.rewatch(now, i);
            self.arm_tick(i)?;
        }
        Ok(())
    }

    /// Baseline behaviour: the MN notices its HA is gone and registers with
    /// the first live HA it can find.
    fn on_mn_timeout(&mut self, now: SimTime, mn: usize, failure: usize) -> Result<(), EngineError> {
        if let Some(a) = self.active_index() {
            if self.has[a].alive && self.has[a].state.role() == HaRole::Active {
                if self.has[a].state.binding(&self.mns[mn].home).is_none() {
                    self.queue.schedule(now, Ev::RegStart { mn, for_failure: Some(failure) })?;
                }
                return Ok(());
            }
        }
        let Some(new) = (0..self.has.len()).find(|&i| self.has[i].alive && !self.has[i].spare) else {
            let mn_name = self.mns[mn].name.clone();
            self.log(now, format_args!("ev=fallback-failed mn={mn_name}"));
            return Ok(());
        };
        let link = self.cfg.has[new].link;
        let group: Vec<usize> = match self.cfg.mode {
            Mode::NoRedundancy => vec![new],
            _ => (0..self.has.len())
                .filter(|&i| self.has[i].alive && !self.has[i].spare && self.cfg.has[i].link == link)
                .collect(),
        };
        let name = self.has[new].name.clone();
        self.global = GlobalHaAddress::new(Address::new(format!("ha:{name}")), group.iter().map(|&i| self.has[i].state.id));
        let id = self.has[new].state.id;
        if self.has[new].state.role() == HaRole::Backup {
            self.has[new].state.apply_role_transition(HaRole::Active)?;
        } else if self.has[new].state.role() != HaRole::Active {
            let h = &self.has[new];
            self.has[new].state = HaState::new(id, HaRole::Active, h.capacity, h.throughput_max)?;
        }
        for &g in &group {
            if g != new && self.has[g].state.role() == HaRole::Inactive {
                self.has[g].state.apply_role_transition(HaRole::Backup)?;
            }
        }
        self.global.map_active(id)?;
        let mn_name = self.mns[mn].name.clone();
        self.log(now, format_args!("ev=fallback src={name} mn={mn_name}"));
        for &g in &group {
            self.rewatch(now, g);
            self.arm_tick(g)?;
        }
        self.queue.schedule(now, Ev::RegStart { mn, for_failure: Some(failure) })?;
        Ok(())
    }

    // ---- registration ----

    fn on_reg_start(&mut self, now: SimTime, mn: usize, for_failure: Option<usize>) -> Result<(), EngineError> {
        let fa = self.mns[mn].fa;
        let reg = self.regs.len();
        self.regs.push(RegRec {
            mn,
            fa,
            started: now,
            sends: [None; 4],
            done: None,
            bu_sent: 0,
            bu_transit: SimDuration::ZERO,
            failed: None,
            for_failure,
        });
        let adv = self.fas[fa].agent.advertise();
        if let Ok(a) = Advertisement::decode(&adv) {
            self.coa_owner.insert(a.mn_coa, fa);
        }
        self.queue.schedule(now, Ev::RegSend { reg, hop: Hop::FaToMn, frame: adv })?;
        Ok(())
    }

    fn hop_names(&self, reg: usize, hop: Hop) -> (String, String) {
        let r = &self.regs[reg];
        let mn = self.mns[r.mn].name.clone();
        let fa = self.fas[r.fa].name.clone();
        match hop {
            Hop::FaToMn => (fa, mn),
            Hop::MnToFa => (mn, fa),
            Hop::FaToHa(h) => (fa, self.has[h].name.clone()),
            Hop::HaToFa(h) => (self.has[h].name.clone(), fa),
        }
    }

    fn fail_reg(&mut self, now: SimTime, reg: usize, reason: &str) {
        self.regs[reg].failed.get_or_insert_with(|| reason.into());
        let mn = self.mns[self.regs[reg].mn].name.clone();
        self.log(now, format_args!("ev=reg-fail mn={mn} reason={reason}"));
    }

    fn on_reg_send(&mut self, now: SimTime, reg: usize, hop: Hop, frame: Vec<u8>) -> Result<(), EngineError> {
        let kind = peek_kind(&frame).map(Kind::as_str).unwrap_or("unknown");
        let slot = match peek_kind(&frame) {
            Ok(Kind::Request) => Some(0),
            Ok(Kind::ForwardedRequest) => Some(1),
            Ok(Kind::Reply) => Some(2),
            Ok(Kind::InnerReply) => Some(3),
            _ => None,
        };
        if let Some(s) = slot {
            self.regs[reg].sends[s] = Some(now);
        }
        self.report.messages.registration += 1;
        let size = self.report.sizes.entry(kind.into()).or_insert(0);
        *size = (*size).max(frame.len() as u64);
        let (src, dst) = self.hop_names(reg, hop);
        self.log(now, format_args!("ev=reg-send kind={kind} src={src} dst={dst} bytes={}", frame.len()));
        let fa_node = self.fas[self.regs[reg].fa].node;
        let delay = match hop {
            Hop::FaToMn | Hop::MnToFa => {
                self.count_ota();
                Some(self.cfg.wireless)
            }
            Hop::FaToHa(h) => self.path_delay(fa_node, self.has[h].node),
            Hop::HaToFa(h) => self.path_delay(self.has[h].node, fa_node),
        };
        match delay {
            Some(d) => {
                let d = self.jittered(d);
                self.queue.schedule(now + d, Ev::RegArrive { reg, hop, frame })?;
            }
            None => {
                self.report.messages.dropped += 1;
                self.fail_reg(now, reg, "unreachable");
            }
        }
        Ok(())
    }

    fn on_reg_arrive(&mut self, now: SimTime, reg: usize, hop: Hop, frame: Vec<u8>) -> Result<(), EngineError> {
        let p = self.cfg.processing;
        let (mn, fa) = (self.regs[reg].mn, self.regs[reg].fa);
        match hop {
            Hop::FaToMn => {
                if self.mns[mn].fa != fa {
                    self.report.messages.dropped += 1;
                    self.fail_reg(now, reg, "detached");
                    return Ok(());
                }
                match peek_kind(&frame) {
                    Ok(Kind::Advertisement) => match self.mns[mn].node.on_advertisement(&frame) {
                        Ok(r1) => {
                            self.mns[mn].attached_coa = Advertisement::decode(&frame).ok().map(|a| a.mn_coa);
                            self.queue.schedule(now + p, Ev::RegSend { reg, hop: Hop::MnToFa, frame: r1 })?;
                        }
                        Err(e) => self.fail_reg(now, reg, &e.to_string()),
                    },
                    _ => match self.mns[mn].node.on_inner_reply(&frame) {
                        Ok(()) => self.queue.schedule(now + p, Ev::RegDone { reg })?,
                        Err(e) => self.fail_reg(now, reg, &e.to_string()),
                    },
                }
            }
            Hop::MnToFa => match self.fas[fa].agent.on_request(&frame) {
                Ok(r3) => match self.active_index() {
                    Some(a) => self.queue.schedule(now + p, Ev::RegSend { reg, hop: Hop::FaToHa(a), frame: r3 })?,
                    None => self.fail_reg(now, reg, "no-active"),
                },
                Err(e) => self.fail_reg(now, reg, &e.to_string()),
            },
            Hop::FaToHa(h) => {
                if !self.has[h].alive {
                    self.report.messages.dropped += 1;
                    self.fail_reg(now, reg, "node-failed");
                    return Ok(());
                }
                if self.has[h].state.role() != HaRole::Active {
                    self.fail_reg(now, reg, "not-active");
                    return Ok(());
                }
                match self.registrar.on_forwarded_request(&frame) {
                    Ok((r5, accepted)) => {
                        self.accept_binding(now + p, reg, h, Address::new(accepted.coa))?;
                        self.queue.schedule(now + p, Ev::RegSend { reg, hop: Hop::HaToFa(h), frame: r5 })?;
                    }
                    Err(e) => self.fail_reg(now, reg, &e.to_string()),
                }
            }
            Hop::HaToFa(_) => match self.fas[fa].agent.on_reply(&frame) {
                Ok(r7) => self.queue.schedule(now + p, Ev::RegSend { reg, hop: Hop::FaToMn, frame: r7 })?,
                Err(e) => self.fail_reg(now, reg, &e.to_string()),
            },
        }
        Ok(())
    }

    /// Install the binding at the Active and push it to every Backup.
    fn accept_binding(&mut self, at: SimTime, reg: usize, h: usize, coa: Address) -> Result<(), EngineError> {
        let mn = self.regs[reg].mn;
        self.mns[mn].binding_seq += 1;
        let binding = MobilityBinding {
            mn_home_address: self.mns[mn].home.clone(),
            coa,
            lifetime: self.cfg.binding_lifetime,
            sequence: self.mns[mn].binding_seq,
        };
        self.has[h].state.upsert_binding(binding.clone())?;
        self.registered.insert(binding.mn_home_address.clone());
        let backups: Vec<usize> = self
            .member_indices()
            .into_iter()
            .filter(|&b| b != h && self.has[b].state.role() == HaRole::Backup)
            .collect();
        for b in backups {
            self.report.messages.binding_update += 1;
            self.regs[reg].bu_sent += 1;
            let (src, dst) = (self.has[h].name.clone(), self.has[b].name.clone());
            let mn_name = self.mns[mn].name.clone();
            self.log(at, format_args!("ev=bu-send src={src} dst={dst} mn={mn_name}"));
            match self.path_delay(self.has[h].node, self.has[b].node) {
                Some(d) => {
                    let d = self.jittered(d);
                    self.pending_bu += 1;
                    self.queue.schedule(
                        at + d,
                        Ev::BuArrive {
                            reg,
                            to: b,
                            binding: binding.clone(),
                            sent: at,
                        },
                    )?;
                }
                None => self.report.messages.dropped += 1,
            }
        }
        Ok(())
    }

    fn on_bu_arrive(&mut self, now: SimTime, reg: usize, to: usize, binding: MobilityBinding, sent: SimTime) -> Result<(), EngineError> {
        self.pending_bu -= 1;
        if !self.has[to].alive {
            self.report.messages.dropped += 1;
            return Ok(());
        }
        let r = &mut self.regs[reg];
        r.bu_transit = r.bu_transit.max(now.since(sent));
        if matches!(self.has[to].state.role(), HaRole::Backup | HaRole::Active) {
            // a stale update loses to a newer one already applied
            let _ = self.has[to].state.upsert_binding(binding);
        }
        Ok(())
    }

    fn on_reg_done(&mut self, now: SimTime, reg: usize) -> Result<(), EngineError> {
        self.regs[reg].done = Some(now);
        let r = &self.regs[reg];
        let mn = self.mns[r.mn].name.clone();
        let coa = self.mns[r.mn].node.coa().unwrap_or("-").to_string();
        let total = r.sends[0].map(|s0| now.since(s0)).unwrap_or(SimDuration::ZERO);
        let for_failure = r.for_failure;
        self.log(now, format_args!("ev=registered mn={mn} coa={coa} total={total}"));
        if let Some(f) = for_failure {
            let rec = &mut self.failures[f];
            if rec.recovered_at.is_none() {
                rec.recovered_at = Some(now);
            }
            rec.resolved = true;
        }
        Ok(())
    }

    fn on_move(&mut self, now: SimTime, mn: usize, fa: usize) -> Result<(), EngineError> {
        let m = &mut self.mns[mn];
        m.fa = fa;
        m.attached_coa = None;
        let (name, fa_name) = (m.name.clone(), self.fas[fa].name.clone());
        self.log(now, format_args!("ev=move mn={name} dst={fa_name}"));
        self.on_reg_start(now, mn, None)
    }

    // ---- data plane ----

    fn lose(&mut self, now: SimTime, pkt: usize, reason: LossReason) {
        self.packets[pkt].done = true;
        self.packets[pkt].packet = None;
        *self.report.packets.lost.entry(reason).or_insert(0) += 1;
        self.loss_times.push(now);
        self.log(now, format_args!("ev=loss reason={reason} pkt={pkt}"));
    }

    fn on_cn_send(&mut self, now: SimTime, flow: usize, k: u64) -> Result<(), EngineError> {
        let f = &self.flows[flow];
        if now >= f.stop {
            return Ok(());
        }
        let next = f.start + f.interval.saturating_mul(k + 1);
        if next < f.stop && next <= self.end {
            self.queue.schedule(next, Ev::CnSend { flow, k: k + 1 })?;
        }
        let (cn, mn) = (f.cn, f.mn);
        let pkt = self.packets.len();
        let payload = format!("flow{flow}:{k}").into_bytes();
        self.packets.push(PacketRec {
            mn,
            payload: payload.clone(),
            packet: None,
            done: false,
        });
        self.report.packets.sent += 1;
        let cn_name = self.cfg.cns[cn].clone();
        let mn_name = self.mns[mn].name.clone();
        self.log(now, format_args!("ev=send pkt={pkt} src={cn_name} dst={mn_name}"));
        let built = cn_send(
            &Address::new(cn_name),
            &self.mns[mn].home,
            &self.global,
            &self.registered,
            payload,
        );
        let packet = match built {
            Ok(p) => p,
            Err(e) => {
                self.lose(now, pkt, e.loss_reason());
                return Ok(());
            }
        };
        let fa_node = self.fas[self.mns[mn].fa].node;
        let cn_node = self.cn_nodes[cn];
        let mut hops = BTreeMap::new();
        let mut reach = BTreeMap::new();
        for i in self.member_indices() {
            if !self.has[i].alive {
                continue;
            }
            let node = self.has[i].node;
            if let (Some(to_mn), Some(from_cn)) = (self.router.route(node, fa_node), self.router.route(cn_node, node)) {
                hops.insert(self.has[i].state.id, to_mn.hops);
                reach.insert(i, from_cn.delay);
            }
        }
        match select_pickup_ha(&self.global, self.has.iter().map(|h| &h.state), |id| hops.get(id).copied()) {
            Ok(id) => {
                let ha = self.ids[&id];
                let d = self.jittered(reach[&ha]);
                self.packets[pkt].packet = Some(packet);
                self.queue.schedule(now + d, Ev::AtPickup { pkt, ha })?;
            }
            Err(e) => self.lose(now, pkt, e.loss_reason()),
        }
        Ok(())
    }

    fn on_pickup(&mut self, now: SimTime, pkt: usize, ha: usize) -> Result<(), EngineError> {
        if !self.has[ha].alive {
            self.lose(now, pkt, LossReason::NodeFailed);
            return Ok(());
        }
        let Some(a) = self.active_index() else {
            self.lose(now, pkt, LossReason::NoActive);
            return Ok(());
        };
        let packet = self.packets[pkt].packet.take().expect("packet in flight");
        let packet = match route_to_active(packet, self.has[ha].state.id, self.has[a].state.id) {
            Ok(p) => p,
            Err(e) => {
                self.lose(now, pkt, e.loss_reason());
                return Ok(());
            }
        };
        self.has[ha].handled.push_back(now);
        let (src, dst) = (self.has[ha].name.clone(), self.has[a].name.clone());
        self.log(now, format_args!("ev=pickup pkt={pkt} src={src} dst={dst}"));
        match self.path_delay(self.has[ha].node, self.has[a].node) {
            Some(d) => {
                let d = if a == ha { d } else { self.jittered(d) };
                self.packets[pkt].packet = Some(packet);
                self.queue.schedule(now + d, Ev::AtActive { pkt, ha: a })?;
            }
            None => self.lose(now, pkt, LossReason::NodeFailed),
        }
        Ok(())
    }

    fn on_active(&mut self, now: SimTime, pkt: usize, ha: usize) -> Result<(), EngineError> {
        if !self.has[ha].alive {
            self.lose(now, pkt, LossReason::NodeFailed);
            return Ok(());
        }
        let packet = self.packets[pkt].packet.take().expect("packet in flight");
        let packet = match tunnel_to_coa(packet, &self.has[ha].state) {
            Ok(p) => p,
            Err(e) => {
                self.lose(now, pkt, e.loss_reason());
                return Ok(());
            }
        };
        if self.has[ha].handled.back() != Some(&now) {
            self.has[ha].handled.push_back(now);
        }
        let coa = match packet.outer() {
            Some(crate::forwarding::Header::Tunnel { coa, .. }) => coa.as_str().to_string(),
            _ => unreachable!("tunnel header just pushed"),
        };
        let name = self.has[ha].name.clone();
        self.log(now, format_args!("ev=tunnel pkt={pkt} src={name} dst={coa}"));
        let Some(&fa) = self.coa_owner.get(&coa) else {
            self.lose(now, pkt, LossReason::WrongCoa);
            return Ok(());
        };
        match self.path_delay(self.has[ha].node, self.fas[fa].node) {
            Some(d) => {
                let d = self.jittered(d) + self.cfg.wireless;
                self.packets[pkt].packet = Some(packet);
                self.queue.schedule(now + d, Ev::AtCoa { pkt, fa })?;
            }
            None => self.lose(now, pkt, LossReason::NodeFailed),
        }
        Ok(())
    }

    fn on_coa(&mut self, now: SimTime, pkt: usize, fa: usize) -> Result<(), EngineError> {
        let mn = self.packets[pkt].mn;
        let packet = self.packets[pkt].packet.take().expect("packet in flight");
        let attachment = match (&self.mns[mn].attached_coa, self.mns[mn].fa == fa) {
            (Some(c), true) => Address::new(c.clone()),
            _ => {
                self.lose(now, pkt, LossReason::Detached);
                return Ok(());
            }
        };
        match decapsulate_at_coa(packet, &attachment) {
            Ok(d) => {
                self.packets[pkt].done = true;
                self.report.packets.delivered += 1;
                if d.payload != self.packets[pkt].payload {
                    self.report.packets.corrupted += 1;
                }
                let name = self.mns[mn].name.clone();
                self.report
                    .global_addresses
                    .entry(name.clone())
                    .or_default()
                    .insert(d.dst_global.as_str().to_string());
                self.log(now, format_args!("ev=deliver pkt={pkt} dst={name}"));
            }
            Err(e) => self.lose(now, pkt, e.loss_reason()),
        }
        Ok(())
    }

    // ---- checking and reporting ----

    fn violation(&mut self, now: SimTime, what: String) {
        self.violations_total += 1;
        if self.report.invariant_violations.len() < MAX_VIOLATIONS {
            self.report.invariant_violations.push(format!("t={now} {what}"));
        }
    }

    fn check_invariants(&mut self, now: SimTime) {
        if self.recovery_open() || self.pending_control > 0 || self.pending_bu > 0 {
            return;
        }
        let live: Vec<usize> = self.member_indices().into_iter().filter(|&i| self.has[i].alive).collect();
        let actives: Vec<usize> = live
            .iter()
            .copied()
            .filter(|&i| self.has[i].state.role() == HaRole::Active)
            .collect();
        if actives.len() != 1 {
            self.violation(now, format!("{} live active HAs", actives.len()));
            return;
        }
        let a = actives[0];
        if self.global.active() != Some(self.has[a].state.id) {
            let name = self.has[a].name.clone();
            self.violation(now, format!("global address not mapped to active {name}"));
        }
        let mut problems = Vec::new();
        for b in self.has[a].state.bindings() {
            let holders = live
                .iter()
                .filter(|&&i| {
                    i == a
                        || (self.has[i].state.role() == HaRole::Backup
                            && self.has[i].state.binding(&b.mn_home_address) == Some(b))
                })
                .count();
            if holders < 2 {
                problems.push(format!("binding for {} held by {holders} HA(s)", b.mn_home_address.as_str()));
            }
        }
        for &i in &live {
            if self.has[i].state.role() == HaRole::Inactive && self.has[i].state.binding_count() > 0 {
                problems.push(format!("inactive {} holds bindings", self.has[i].name));
            }
        }
        for p in problems {
            self.violation(now, p);
        }
    }

    fn finish(mut self) -> Outcome {
        if self.violations_total > MAX_VIOLATIONS as u64 {
            let extra = self.violations_total - MAX_VIOLATIONS as u64;
            self.report.invariant_violations.push(format!("{extra} further violation(s) suppressed"));
        }
        let mut failures = Vec::new();
        for (i, f) in self.failures.iter().enumerate() {
            let next = self.failures.get(i + 1).map(|n| n.at);
            let losses = self
                .loss_times
                .iter()
                .filter(|&&t| t >= f.at && next.is_none_or(|n| t < n))
                .count() as u64;
            let mut failed: Vec<String> = f.failed.iter().map(|&h| self.has[h].name.clone()).collect();
            failed.sort();
            let first = f.suspicions.iter().map(|s| s.after).min();
            failures.push(FailureReport {
                target: f.target.clone(),
                at: f.at,
                failed,
                active_lost: f.active_lost,
                permanent: f.permanent,
                t_fd_r_predicted: f.predicted,
                t_fd_r_measured: f.actor_suspicion.or(first),
                suspicions: f.suspicions.clone(),
                recovered_after: f.recovered_at.map(|t| t.since(f.at)),
                by_redundancy: f.by_redundancy,
                actions: f.actions.clone(),
                losses,
                in_flight: f.in_flight,
                ota_messages: f.ota,
            });
        }
        self.report.failures = failures;
        self.report.registrations = self
            .regs
            .iter()
            .map(|r| {
                let legs = match (r.sends, r.done) {
                    ([Some(a), Some(b), Some(c), Some(d)], Some(e)) => {
                        Some([b.since(a), c.since(b), d.since(c), e.since(d)])
                    }
                    _ => None,
                };
                let total = legs.map(|l| l[0] + l[1] + l[2] + l[3]);
                RegistrationReport {
                    mn: self.mns[r.mn].name.clone(),
                    fa: self.fas[r.fa].name.clone(),
                    started: r.started,
                    legs,
                    total,
                    backup_updates: r.bu_sent,
                    backup_update_transit: r.bu_transit,
                    home_total: total.map(|t| t + r.bu_transit),
                    failed: r.failed.clone(),
                }
            })
            .collect();
        self.report.events = self.queue.processed();
        self.report.trace_hash = trace_hash(&self.trace);
        Outcome {
            report: self.report,
            trace: self.trace,
        }
    }
}
