//! Home-agent identity, service tiers, workload/priority and the replicated
//! binding cache.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use thiserror::Error;

use crate::time::SimTime;

/// Identifier of a home link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

/// A home agent's local (per-link) address token. Unique across a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalAddress(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HaId {
    pub home_link: LinkId,
    pub local_address: LocalAddress,
}

impl HaId {
    pub fn new(home_link: u32, local_address: u32) -> Self {
        HaId {
            home_link: LinkId(home_link),
            local_address: LocalAddress(local_address),
        }
    }
}

impl fmt::Display for HaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ha{}.{}", self.home_link.0, self.local_address.0)
    }
}

/// Opaque network address token (home address, care-of address, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The static virtual address shared by every member of the redundancy group.
///
/// Correspondents and mobile nodes only ever see `virtual_id`; the mapping to
/// the current Active member is internal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalHaAddress {
    virtual_id: Address,
    members: BTreeSet<HaId>,
    active: Option<HaId>,
}

impl GlobalHaAddress {
    pub fn new(virtual_id: Address, members: impl IntoIterator<Item = HaId>) -> Self {
        GlobalHaAddress {
            virtual_id,
            members: members.into_iter().collect(),
            active: None,
        }
    }

    pub fn virtual_id(&self) -> &Address {
        &self.virtual_id
    }

    pub fn members(&self) -> &BTreeSet<HaId> {
        &self.members
    }

    pub fn is_member(&self, id: &HaId) -> bool {
        self.members.contains(id)
    }

    pub fn add_member(&mut self, id: HaId) {
        self.members.insert(id);
    }

    pub fn remove_member(&mut self, id: &HaId) {
        self.members.remove(id);
        if self.active.as_ref() == Some(id) {
            self.active = None;
        }
    }

    /// Member currently mapped to the virtual address.
    pub fn active(&self) -> Option<HaId> {
        self.active
    }

    /// Re-point the virtual address at `id`. The virtual id itself never changes.
    pub fn map_active(&mut self, id: HaId) -> Result<(), HaError> {
        if !self.members.contains(&id) {
            return Err(HaError::NotMember(id));
        }
        self.active = Some(id);
        Ok(())
    }

    /// Home links spanned by the member set.
    pub fn home_links(&self) -> BTreeSet<LinkId> {
        self.members.iter().map(|m| m.home_link).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HaRole {
    Active,
    Backup,
    Inactive,
}

impl HaRole {
    pub fn as_str(self) -> &'static str {
        match self {
            HaRole::Active => "active",
            HaRole::Backup => "backup",
            HaRole::Inactive => "inactive",
        }
    }
}

impl fmt::Display for HaRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-service enable flags.
///
/// Exclusive: home registration, deregistration, registration refresh, IKE,
/// DHAD. Regular: tunneling, reverse tunneling, return routability, neighbor
/// discovery. Active runs everything, Backup the regular set, Inactive
/// tunneling only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Services {
    pub home_registration: bool,
    pub deregistration: bool,
    pub registration_refresh: bool,
    pub ike: bool,
    pub dhad: bool,
    pub tunneling: bool,
    pub reverse_tunneling: bool,
    pub return_routability: bool,
    pub neighbor_discovery: bool,
}

impl Services {
    pub const NONE: Services = Services {
        home_registration: false,
        deregistration: false,
        registration_refresh: false,
        ike: false,
        dhad: false,
        tunneling: false,
        reverse_tunneling: false,
        return_routability: false,
        neighbor_discovery: false,
    };

    pub fn for_role(role: HaRole) -> Services {
        let regular = Services {
            tunneling: true,
            reverse_tunneling: true,
            return_routability: true,
            neighbor_discovery: true,
            ..Services::NONE
        };
        match role {
            HaRole::Active => Services {
                home_registration: true,
                deregistration: true,
                registration_refresh: true,
                ike: true,
                dhad: true,
                ..regular
            },
            HaRole::Backup => regular,
            HaRole::Inactive => Services {
                tunneling: true,
                ..Services::NONE
            },
        }
    }

    pub fn exclusive_all(&self) -> bool {
        self.home_registration
            && self.deregistration
            && self.registration_refresh
            && self.ike
            && self.dhad
    }

    pub fn exclusive_any(&self) -> bool {
        self.home_registration
            || self.deregistration
            || self.registration_refresh
            || self.ike
            || self.dhad
    }
}

/// Home address to care-of address association.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobilityBinding {
    pub mn_home_address: Address,
    pub coa: Address,
    /// Lifetime in simulated seconds.
    pub lifetime: u32,
    pub sequence: u64,
}

/// Scheduling priority derived from workload.
///
/// `Max` is the idle sentinel and orders above every finite value.
#[derive(Debug, Clone, Copy)]
pub enum Priority {
    Finite(f64),
    Max,
}

pub const PRIORITY_MAX: Priority = Priority::Max;

impl PartialEq for Priority {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Priority::Max, Priority::Max) => Ordering::Equal,
            (Priority::Max, _) => Ordering::Greater,
            (_, Priority::Max) => Ordering::Less,
            (Priority::Finite(a), Priority::Finite(b)) => a.total_cmp(b),
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Priority::Finite(p) => write!(f, "{p:.6}"),
            Priority::Max => f.write_str("max"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HaError {
    #[error("capacity must be positive (bindings_max={bindings_max}, throughput_max={throughput_max})")]
    CapacityZero { bindings_max: u32, throughput_max: f64 },
    #[error("workload input out of range")]
    OutOfRange,
    #[error("operation `{op}` not permitted in role {role}")]
    Role { role: HaRole, op: &'static str },
    #[error("binding cache full ({max} entries)")]
    CacheFull { max: u32 },
    #[error("stale binding for {home}: sequence {offered} not greater than {existing}")]
    Stale { home: Address, existing: u64, offered: u64 },
    #[error("binding lifetime must be positive")]
    ZeroLifetime,
    #[error("illegal role transition {from} -> {to}")]
    IllegalTransition { from: HaRole, to: HaRole },
    #[error("{0} is not a member of the global HA address")]
    NotMember(HaId),
    #[error("{0} is marked failed")]
    Failed(HaId),
}

/// `(bindings × throughput) / (bindings_max × throughput_max)`.
pub fn compute_workload(
    bindings_count: u32,
    bindings_max: u32,
    throughput_current: f64,
    throughput_max: f64,
) -> Result<f64, HaError> {
    if bindings_max == 0 || !(throughput_max > 0.0) {
        return Err(HaError::CapacityZero {
            bindings_max,
            throughput_max,
        });
    }
    if bindings_count > bindings_max
        || !(0.0..=throughput_max).contains(&throughput_current)
    {
        return Err(HaError::OutOfRange);
    }
    Ok((bindings_count as f64 * throughput_current) / (bindings_max as f64 * throughput_max))
}

/// Inverse workload, with the idle case mapped to [`PRIORITY_MAX`].
pub fn compute_priority(workload: f64) -> Priority {
    if workload > 0.0 {
        Priority::Finite(1.0 / workload)
    } else {
        PRIORITY_MAX
    }
}

/// Pick the best candidate: highest priority, ties to the lowest local address.
pub fn highest_priority<I>(candidates: I) -> Option<HaId>
where
    I: IntoIterator<Item = (HaId, Priority)>,
{
    candidates
        .into_iter()
        .max_by(|(a_id, a_p), (b_id, b_p)| {
            a_p.cmp(b_p)
                .then_with(|| b_id.local_address.cmp(&a_id.local_address))
        })
        .map(|(id, _)| id)
}

/// One home agent's protocol state.
#[derive(Debug, Clone)]
pub struct HaState {
    pub id: HaId,
    role: HaRole,
    failed: bool,
    bindings: BTreeMap<Address, MobilityBinding>,
    bindings_max: u32,
    throughput_current: f64,
    throughput_max: f64,
    workload: f64,
    priority: Priority,
    /// Last heartbeat time per peer.
    pub peer_table: BTreeMap<HaId, SimTime>,
    services: Services,
}

impl HaState {
    pub fn new(id: HaId, role: HaRole, bindings_max: u32, throughput_max: f64) -> Result<Self, HaError> {
        // validates the capacities
        compute_workload(0, bindings_max, 0.0, throughput_max)?;
        Ok(HaState {
            id,
            role,
            failed: false,
            bindings: BTreeMap::new(),
            bindings_max,
            throughput_current: 0.0,
            throughput_max,
            workload: 0.0,
            priority: PRIORITY_MAX,
            peer_table: BTreeMap::new(),
            services: Services::for_role(role),
        })
    }

    pub fn role(&self) -> HaRole {
        self.role
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    pub fn workload(&self) -> f64 {
        self.workload
    }

    pub fn priority(&self) -> Priority {
        self.priority
    }

    pub fn services(&self) -> Services {
        self.services
    }

    pub fn bindings_max(&self) -> u32 {
        self.bindings_max
    }

    pub fn throughput_current(&self) -> f64 {
        self.throughput_current
    }

    pub fn throughput_max(&self) -> f64 {
        self.throughput_max
    }

    pub fn binding(&self, home: &Address) -> Option<&MobilityBinding> {
        self.bindings.get(home)
    }

    pub fn bindings(&self) -> impl Iterator<Item = &MobilityBinding> {
        self.bindings.values()
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len()
    }

    /// Update the measured throughput (clamped to the configured maximum).
    pub fn set_throughput(&mut self, rate: f64) {
        self.throughput_current = rate.clamp(0.0, self.throughput_max);
        self.recompute();
    }

    fn recompute(&mut self) {
        // inputs are kept in range by construction
        self.workload = compute_workload(
            self.bindings.len() as u32,
            self.bindings_max,
            self.throughput_current,
            self.throughput_max,
        )
        .unwrap_or(1.0);
        self.priority = compute_priority(self.workload);
    }

    fn check_live(&self) -> Result<(), HaError> {
        if self.failed {
            Err(HaError::Failed(self.id))
        } else {
            Ok(())
        }
    }

    /// Insert or refresh a binding. Sequence numbers must strictly increase
    /// per home address.
    pub fn upsert_binding(&mut self, binding: MobilityBinding) -> Result<(), HaError> {
        self.check_live()?;
        if self.role == HaRole::Inactive {
            return Err(HaError::Role {
                role: self.role,
                op: "upsert_binding",
            });
        }
        if binding.lifetime == 0 {
            return Err(HaError::ZeroLifetime);
        }
        match self.bindings.get(&binding.mn_home_address) {
            Some(existing) if binding.sequence <= existing.sequence => {
                return Err(HaError::Stale {
                    home: binding.mn_home_address.clone(),
                    existing: existing.sequence,
                    offered: binding.sequence,
                });
            }
            None if self.bindings.len() as u32 >= self.bindings_max => {
                return Err(HaError::CacheFull {
                    max: self.bindings_max,
                });
            }
            _ => {}
        }
        self.bindings.insert(binding.mn_home_address.clone(), binding);
        self.recompute();
        Ok(())
    }

    /// Replace the whole cache with the Active's copy.
    ///
    /// An Inactive HA may only be synced while it is being promoted.
    pub fn sync_from_active<'a, I>(&mut self, active_bindings: I, promoting: bool) -> Result<(), HaError>
    where
        I: IntoIterator<Item = &'a MobilityBinding>,
    {
        self.check_live()?;
        match self.role {
            HaRole::Backup => {}
            HaRole::Inactive if promoting => {}
            role => {
                return Err(HaError::Role {
                    role,
                    op: "sync_from_active",
                })
            }
        }
        let copy: BTreeMap<Address, MobilityBinding> = active_bindings
            .into_iter()
            .map(|b| (b.mn_home_address.clone(), b.clone()))
            .collect();
        if copy.len() as u32 > self.bindings_max {
            return Err(HaError::CacheFull {
                max: self.bindings_max,
            });
        }
        self.bindings = copy;
        self.recompute();
        Ok(())
    }

    /// Move to `new_role`. Only Backup→Active and Inactive→Backup are legal;
    /// staying in the same role is a no-op.
    pub fn apply_role_transition(&mut self, new_role: HaRole) -> Result<(), HaError> {
        self.check_live()?;
        match (self.role, new_role) {
            (from, to) if from == to => {}
            (HaRole::Backup, HaRole::Active) | (HaRole::Inactive, HaRole::Backup) => {}
            (from, to) => return Err(HaError::IllegalTransition { from, to }),
        }
        self.role = new_role;
        self.services = Services::for_role(new_role);
        Ok(())
    }

    /// Any role may be marked failed. A failed HA runs no services.
    pub fn mark_failed(&mut self) {
        self.failed = true;
        self.services = Services::NONE;
    }

    /// A revived HA comes back as an empty Inactive; its old slot has
    /// already been refilled by recovery.
    pub fn rejoin_as_inactive(&mut self) {
        self.failed = false;
        self.role = HaRole::Inactive;
        self.bindings.clear();
        self.services = Services::for_role(HaRole::Inactive);
        self.peer_table.clear();
        self.recompute();
    }

    /// A revived HA whose slot was never reassigned resumes its role with
    /// the state it held when it failed.
    pub fn revive(&mut self) {
        self.failed = false;
        self.services = Services::for_role(self.role);
    }

    pub fn forget_peer(&mut self, peer: &HaId) {
        self.peer_table.remove(peer);
    }

    /// Snapshot of the cache for a full-state sync message.
    pub fn binding_snapshot(&self) -> Vec<MobilityBinding> {
        self.bindings.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn binding(home: &str, coa: &str, seq: u64) -> MobilityBinding {
        MobilityBinding {
            mn_home_address: Address::new(home),
            coa: Address::new(coa),
            lifetime: 60,
            sequence: seq,
        }
    }

    fn ha(role: HaRole) -> HaState {
        HaState::new(HaId::new(1, 1), role, 100, 80.0).unwrap()
    }

    #[test]
    fn workload_examples() {
        assert_eq!(compute_workload(100, 100, 80.0, 80.0).unwrap(), 1.0);
        assert_eq!(compute_workload(0, 100, 0.0, 80.0).unwrap(), 0.0);
        // (50 * 40) / (100 * 80) = 2000 / 8000
        assert_eq!(compute_workload(50, 100, 40.0, 80.0).unwrap(), 0.25);
    }

    #[test]
    fn workload_rejects_zero_capacity() {
        assert!(matches!(
            compute_workload(0, 0, 0.0, 80.0),
            Err(HaError::CapacityZero { .. })
        ));
        assert!(matches!(
            compute_workload(0, 10, 0.0, 0.0),
            Err(HaError::CapacityZero { .. })
        ));
        assert_eq!(compute_workload(11, 10, 1.0, 2.0), Err(HaError::OutOfRange));
    }

    #[test]
    fn priority_examples() {
        assert_eq!(compute_priority(1.0), Priority::Finite(1.0));
        assert_eq!(compute_priority(0.25), Priority::Finite(4.0));
        assert_eq!(compute_priority(0.0), PRIORITY_MAX);
        assert!(PRIORITY_MAX > Priority::Finite(f64::MAX));
    }

    #[test]
    fn highest_priority_breaks_ties_by_lowest_address() {
        let a = HaId::new(1, 7);
        let b = HaId::new(2, 3);
        let c = HaId::new(1, 9);
        assert_eq!(
            highest_priority(vec![(a, PRIORITY_MAX), (b, PRIORITY_MAX), (c, Priority::Finite(4.0))]),
            Some(b)
        );
        assert_eq!(
            highest_priority(vec![(a, Priority::Finite(2.0)), (c, Priority::Finite(4.0))]),
            Some(c)
        );
        assert_eq!(highest_priority(Vec::new()), None);
    }

    #[test]
    fn upsert_insert_refresh_and_stale() {
        let mut s = ha(HaRole::Active);
        s.upsert_binding(binding("hoa:1", "coa:a", 4)).unwrap();
        assert_eq!(s.binding_count(), 1);
        s.upsert_binding(binding("hoa:1", "coa:b", 5)).unwrap();
        assert_eq!(s.binding(&Address::new("hoa:1")).unwrap().coa, Address::new("coa:b"));
        let err = s.upsert_binding(binding("hoa:1", "coa:c", 3)).unwrap_err();
        assert!(matches!(err, HaError::Stale { existing: 5, offered: 3, .. }));
        assert_eq!(s.binding(&Address::new("hoa:1")).unwrap().coa, Address::new("coa:b"));
    }

    #[test]
    fn upsert_role_and_capacity_errors() {
        let mut inactive = ha(HaRole::Inactive);
        assert!(matches!(
            inactive.upsert_binding(binding("hoa:1", "coa:a", 1)),
            Err(HaError::Role { .. })
        ));
        let mut small = HaState::new(HaId::new(1, 2), HaRole::Backup, 1, 10.0).unwrap();
        small.upsert_binding(binding("hoa:1", "coa:a", 1)).unwrap();
        assert_eq!(
            small.upsert_binding(binding("hoa:2", "coa:a", 1)),
            Err(HaError::CacheFull { max: 1 })
        );
        // refreshing an existing entry is allowed at capacity
        small.upsert_binding(binding("hoa:1", "coa:b", 2)).unwrap();
    }

    #[test]
    fn workload_tracks_bindings_and_throughput() {
        let mut s = ha(HaRole::Active);
        assert_eq!(s.priority(), PRIORITY_MAX);
        s.upsert_binding(binding("hoa:1", "coa:a", 1)).unwrap();
        assert_eq!(s.workload(), 0.0, "no throughput yet");
        s.set_throughput(40.0);
        assert_eq!(s.workload(), (1.0 * 40.0) / (100.0 * 80.0));
        s.set_throughput(1e9);
        assert_eq!(s.throughput_current(), 80.0);
    }

    #[test]
    fn sync_copies_exactly() {
        let mut active = ha(HaRole::Active);
        for (i, coa) in ["coa:a", "coa:b", "coa:c"].iter().enumerate() {
            active
                .upsert_binding(binding(&alloc::format!("hoa:{i}"), coa, 1))
                .unwrap();
        }
        let mut backup = HaState::new(HaId::new(2, 5), HaRole::Backup, 10, 80.0).unwrap();
        backup.upsert_binding(binding("hoa:stale", "coa:z", 9)).unwrap();
        backup.sync_from_active(active.bindings(), false).unwrap();
        assert_eq!(backup.binding_snapshot(), active.binding_snapshot());

        backup.sync_from_active(core::iter::empty(), false).unwrap();
        assert_eq!(backup.binding_count(), 0);

        let mut tiny = HaState::new(HaId::new(2, 6), HaRole::Backup, 2, 80.0).unwrap();
        assert_eq!(
            tiny.sync_from_active(active.bindings(), false),
            Err(HaError::CacheFull { max: 2 })
        );
    }

    #[test]
    fn sync_into_inactive_requires_promotion_flag() {
        let active = ha(HaRole::Active);
        let mut inactive = ha(HaRole::Inactive);
        assert!(matches!(
            inactive.sync_from_active(active.bindings(), false),
            Err(HaError::Role { .. })
        ));
        inactive.sync_from_active(active.bindings(), true).unwrap();
    }

    #[test]
    fn role_transitions() {
        let mut b = ha(HaRole::Backup);
        b.apply_role_transition(HaRole::Active).unwrap();
        assert!(b.services().exclusive_all());
        assert_eq!(
            b.apply_role_transition(HaRole::Backup),
            Err(HaError::IllegalTransition {
                from: HaRole::Active,
                to: HaRole::Backup
            })
        );

        let mut i = ha(HaRole::Inactive);
        assert_eq!(
            i.apply_role_transition(HaRole::Active),
            Err(HaError::IllegalTransition {
                from: HaRole::Inactive,
                to: HaRole::Active
            })
        );
        i.apply_role_transition(HaRole::Backup).unwrap();
        assert_eq!(i.services(), Services::for_role(HaRole::Backup));
        assert_eq!(i.binding_count(), 0, "cache stays empty until synced");
    }

    #[test]
    fn exclusive_services_iff_active() {
        for role in [HaRole::Active, HaRole::Backup, HaRole::Inactive] {
            let s = Services::for_role(role);
            assert_eq!(s.exclusive_all(), role == HaRole::Active);
            assert_eq!(s.exclusive_any(), role == HaRole::Active);
        }
        assert!(Services::for_role(HaRole::Inactive).tunneling);
        assert!(!Services::for_role(HaRole::Inactive).reverse_tunneling);
    }

    #[test]
    fn failed_then_rejoin() {
        let mut a = ha(HaRole::Active);
        a.upsert_binding(binding("hoa:1", "coa:a", 1)).unwrap();
        a.mark_failed();
        assert!(!a.services().exclusive_any());
        assert!(matches!(
            a.upsert_binding(binding("hoa:2", "coa:a", 1)),
            Err(HaError::Failed(_))
        ));
        a.rejoin_as_inactive();
        assert_eq!(a.role(), HaRole::Inactive);
        assert_eq!(a.binding_count(), 0);
    }

    #[test]
    fn revive_keeps_role_and_cache() {
        let mut a = ha(HaRole::Active);
        a.upsert_binding(binding("hoa:1", "coa:a", 1)).unwrap();
        a.mark_failed();
        a.revive();
        assert_eq!(a.role(), HaRole::Active);
        assert_eq!(a.binding_count(), 1);
        assert!(a.services().exclusive_all());
    }

    #[test]
    fn global_address_mapping() {
        let a = HaId::new(1, 1);
        let b = HaId::new(2, 2);
        let mut g = GlobalHaAddress::new(Address::new("global:vhaha"), [a, b]);
        g.map_active(a).unwrap();
        assert_eq!(g.active(), Some(a));
        assert_eq!(g.map_active(HaId::new(3, 3)), Err(HaError::NotMember(HaId::new(3, 3))));
        g.map_active(b).unwrap();
        assert_eq!(g.virtual_id().as_str(), "global:vhaha");
        assert_eq!(g.home_links().len(), 2);
    }
}
