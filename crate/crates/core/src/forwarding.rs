//! Data-path encapsulation: correspondent → global address → pickup HA →
//! Active HA → care-of address → mobile node.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::ha::{Address, GlobalHaAddress, HaId, HaRole, HaState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Header {
    /// Correspondent → mobile node, addressed via the global HA address.
    OuterGlobal {
        src: Address,
        dst_mn: Address,
        dst_global: Address,
    },
    /// Added by the HA that picked the packet up, naming the Active.
    Pickup { nearest: HaId, active: HaId },
    /// Active HA → care-of address.
    Tunnel { active: HaId, coa: Address },
}

/// Which stage of the pipeline a packet's layer stack corresponds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `[OuterGlobal]`: as sent by the correspondent, and as finally seen by
    /// the mobile node.
    Addressed,
    /// `[Pickup, OuterGlobal]`: nearest HA towards the Active.
    ToActive,
    /// `[Tunnel, OuterGlobal]`: Active towards the care-of address.
    Tunneled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    /// Innermost header first; the outermost is the last element.
    layers: Vec<Header>,
    payload: Vec<u8>,
}

impl Packet {
    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Headers from outermost to innermost.
    pub fn headers_outer_first(&self) -> impl Iterator<Item = &Header> {
        self.layers.iter().rev()
    }

    pub fn outer(&self) -> Option<&Header> {
        self.layers.last()
    }

    /// The correspondent-level addressing every stage carries innermost.
    pub fn addressing(&self) -> Option<(&Address, &Address, &Address)> {
        match self.layers.first() {
            Some(Header::OuterGlobal {
                src,
                dst_mn,
                dst_global,
            }) => Some((src, dst_mn, dst_global)),
            _ => None,
        }
    }

    pub fn shape(&self) -> Option<Shape> {
        match self.layers.as_slice() {
            [Header::OuterGlobal { .. }] => Some(Shape::Addressed),
            [Header::OuterGlobal { .. }, Header::Pickup { .. }] => Some(Shape::ToActive),
            [Header::OuterGlobal { .. }, Header::Tunnel { .. }] => Some(Shape::Tunneled),
            _ => None,
        }
    }

    #[cfg(test)]
    fn from_parts(layers: Vec<Header>, payload: Vec<u8>) -> Self {
        Packet { layers, payload }
    }
}

/// Why a packet did not reach the mobile node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossReason {
    UnknownMn,
    NoLiveHa,
    NoActive,
    /// Arrived at, or routed through, a failed node.
    NodeFailed,
    NotActive,
    NoBinding,
    WrongCoa,
    Detached,
}

impl LossReason {
    pub const ALL: [LossReason; 8] = [
        LossReason::UnknownMn,
        LossReason::NoLiveHa,
        LossReason::NoActive,
        LossReason::NodeFailed,
        LossReason::NotActive,
        LossReason::NoBinding,
        LossReason::WrongCoa,
        LossReason::Detached,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossReason::UnknownMn => "unknown-mn",
            LossReason::NoLiveHa => "no-live-ha",
            LossReason::NoActive => "no-active",
            LossReason::NodeFailed => "node-failed",
            LossReason::NotActive => "not-active",
            LossReason::NoBinding => "no-binding",
            LossReason::WrongCoa => "wrong-coa",
            LossReason::Detached => "detached",
        }
    }

    pub fn parse(s: &str) -> Option<LossReason> {
        LossReason::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for LossReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForwardingError {
    #[error("{0} is not registered under the global HA address")]
    UnknownMn(Address),
    #[error("no live home agent can pick up the packet")]
    NoLiveHa,
    #[error("packet has shape {found:?}, expected {expected:?}")]
    Shape { expected: Shape, found: Option<Shape> },
    #[error("{0} is not the Active HA")]
    NotActive(HaId),
    #[error("no binding for {0}")]
    NoBinding(Address),
    #[error("tunnel addressed to {expected}, received at {actual}")]
    WrongCoa { expected: Address, actual: Address },
}

impl ForwardingError {
    pub fn loss_reason(&self) -> LossReason {
        match self {
            ForwardingError::UnknownMn(_) => LossReason::UnknownMn,
            ForwardingError::NoLiveHa => LossReason::NoLiveHa,
            ForwardingError::Shape { .. } => LossReason::NotActive,
            ForwardingError::NotActive(_) => LossReason::NotActive,
            ForwardingError::NoBinding(_) => LossReason::NoBinding,
            ForwardingError::WrongCoa { .. } => LossReason::WrongCoa,
        }
    }
}

fn expect_shape(pkt: &Packet, expected: Shape) -> Result<(), ForwardingError> {
    let found = pkt.shape();
    if found == Some(expected) {
        Ok(())
    } else {
        Err(ForwardingError::Shape { expected, found })
    }
}

/// Build the correspondent's packet.
pub fn cn_send(
    cn: &Address,
    mn_home: &Address,
    global: &GlobalHaAddress,
    registered_homes: &BTreeSet<Address>,
    payload: Vec<u8>,
) -> Result<Packet, ForwardingError> {
    if !registered_homes.contains(mn_home) {
        return Err(ForwardingError::UnknownMn(mn_home.clone()));
    }
    Ok(Packet {
        layers: alloc::vec![Header::OuterGlobal {
            src: cn.clone(),
            dst_mn: mn_home.clone(),
            dst_global: global.virtual_id().clone(),
        }],
        payload,
    })
}

/// Choose which live member picks the packet up: fewest hops to the mobile
/// node's current link, then lowest workload, then lowest local address.
pub fn select_pickup_ha<'a, I, F>(global: &GlobalHaAddress, peers: I, hops_to_mn: F) -> Result<HaId, ForwardingError>
where
    I: IntoIterator<Item = &'a HaState>,
    F: Fn(&HaId) -> Option<u32>,
{
    peers
        .into_iter()
        .filter(|s| !s.is_failed() && global.is_member(&s.id))
        .filter_map(|s| hops_to_mn(&s.id).map(|h| (h, s.workload(), s.id)))
        .min_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.1.total_cmp(&b.1))
                .then_with(|| a.2.local_address.cmp(&b.2.local_address))
        })
        .map(|(_, _, id)| id)
        .ok_or(ForwardingError::NoLiveHa)
}

/// Nearest HA hands the packet to the Active. Always pushes the header, even
/// when the pickup HA is the Active itself.
pub fn route_to_active(mut pkt: Packet, pickup: HaId, active: HaId) -> Result<Packet, ForwardingError> {
    expect_shape(&pkt, Shape::Addressed)?;
    pkt.layers.push(Header::Pickup {
        nearest: pickup,
        active,
    });
    Ok(pkt)
}

/// Active HA swaps the pickup header for a tunnel to the care-of address.
pub fn tunnel_to_coa(mut pkt: Packet, state: &HaState) -> Result<Packet, ForwardingError> {
    expect_shape(&pkt, Shape::ToActive)?;
    if state.role() != HaRole::Active || state.is_failed() {
        return Err(ForwardingError::NotActive(state.id));
    }
    let dst_mn = match pkt.addressing() {
        Some((_, dst_mn, _)) => dst_mn.clone(),
        None => unreachable!("shape checked"),
    };
    let binding = state
        .binding(&dst_mn)
        .ok_or_else(|| ForwardingError::NoBinding(dst_mn.clone()))?;
    let coa = binding.coa.clone();
    pkt.layers.pop();
    pkt.layers.push(Header::Tunnel { active: state.id, coa });
    Ok(pkt)
}

/// What the mobile node finally receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub src: Address,
    pub dst_mn: Address,
    pub dst_global: Address,
    pub payload: Vec<u8>,
}

/// Strip the tunnel at the care-of address the mobile node is attached to.
pub fn decapsulate_at_coa(mut pkt: Packet, attachment: &Address) -> Result<Delivered, ForwardingError> {
    expect_shape(&pkt, Shape::Tunneled)?;
    match pkt.layers.last() {
        Some(Header::Tunnel { coa, .. }) if coa == attachment => {}
        Some(Header::Tunnel { coa, .. }) => {
            return Err(ForwardingError::WrongCoa {
                expected: coa.clone(),
                actual: attachment.clone(),
            })
        }
        _ => unreachable!("shape checked"),
    }
    pkt.layers.pop();
    match pkt.layers.pop() {
        Some(Header::OuterGlobal {
            src,
            dst_mn,
            dst_global,
        }) => Ok(Delivered {
            src,
            dst_mn,
            dst_global,
            payload: pkt.payload,
        }),
        _ => unreachable!("shape checked"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ha::MobilityBinding;
    use alloc::vec;

    fn setup() -> (GlobalHaAddress, BTreeSet<Address>, HaState, HaState) {
        let a = HaId::new(1, 1);
        let b = HaId::new(2, 2);
        let mut g = GlobalHaAddress::new(Address::new("global:0"), [a, b]);
        g.map_active(a).unwrap();
        let mut active = HaState::new(a, HaRole::Active, 10, 100.0).unwrap();
        active
            .upsert_binding(MobilityBinding {
                mn_home_address: Address::new("hoa:1"),
                coa: Address::new("coa:x"),
                lifetime: 60,
                sequence: 1,
            })
            .unwrap();
        let backup = HaState::new(b, HaRole::Backup, 10, 100.0).unwrap();
        let homes = [Address::new("hoa:1")].into_iter().collect();
        (g, homes, active, backup)
    }

    #[test]
    fn cn_send_builds_addressed_shape() {
        let (g, homes, ..) = setup();
        let p = cn_send(&Address::new("cn:1"), &Address::new("hoa:1"), &g, &homes, vec![1, 2, 3]).unwrap();
        assert_eq!(p.shape(), Some(Shape::Addressed));
        assert_eq!(p.headers_outer_first().count(), 1);
        assert_eq!(
            cn_send(&Address::new("cn:1"), &Address::new("hoa:9"), &g, &homes, vec![]),
            Err(ForwardingError::UnknownMn(Address::new("hoa:9")))
        );
    }

    #[test]
    fn full_pipeline_preserves_payload() {
        let (g, homes, active, _) = setup();
        let payload = b"payload bytes \x00\xff".to_vec();
        let p = cn_send(&Address::new("cn:1"), &Address::new("hoa:1"), &g, &homes, payload.clone()).unwrap();
        let p = route_to_active(p, HaId::new(2, 2), active.id).unwrap();
        assert_eq!(p.shape(), Some(Shape::ToActive));
        assert_eq!(
            p.outer(),
            Some(&Header::Pickup {
                nearest: HaId::new(2, 2),
                active: active.id
            })
        );
        let p = tunnel_to_coa(p, &active).unwrap();
        assert_eq!(p.shape(), Some(Shape::Tunneled));
        assert_eq!(
            p.outer(),
            Some(&Header::Tunnel {
                active: active.id,
                coa: Address::new("coa:x")
            })
        );
        let d = decapsulate_at_coa(p, &Address::new("coa:x")).unwrap();
        assert_eq!(d.payload, payload);
        assert_eq!(d.dst_global, Address::new("global:0"));
        assert_eq!(d.src, Address::new("cn:1"));
    }

    #[test]
    fn self_route_still_pushes_header() {
        let (g, homes, active, _) = setup();
        let p = cn_send(&Address::new("cn:1"), &Address::new("hoa:1"), &g, &homes, vec![]).unwrap();
        let p = route_to_active(p, active.id, active.id).unwrap();
        assert_eq!(p.shape(), Some(Shape::ToActive));
    }

    #[test]
    fn shape_errors() {
        let (g, homes, active, _) = setup();
        let p = cn_send(&Address::new("cn:1"), &Address::new("hoa:1"), &g, &homes, vec![]).unwrap();
        let p = route_to_active(p, active.id, active.id).unwrap();
        let tunneled = tunnel_to_coa(p, &active).unwrap();
        assert!(matches!(
            route_to_active(tunneled.clone(), active.id, active.id),
            Err(ForwardingError::Shape {
                expected: Shape::Addressed,
                found: Some(Shape::Tunneled)
            })
        ));
        let junk = Packet::from_parts(vec![], vec![]);
        assert_eq!(junk.shape(), None);
        assert!(decapsulate_at_coa(junk, &Address::new("coa:x")).is_err());
    }

    #[test]
    fn tunnel_errors() {
        let (g, homes, active, backup) = setup();
        let mk = |home: &str| {
            let mut h = homes.clone();
            h.insert(Address::new(home));
            let p = cn_send(&Address::new("cn:1"), &Address::new(home), &g, &h, vec![]).unwrap();
            route_to_active(p, active.id, active.id).unwrap()
        };
        assert_eq!(
            tunnel_to_coa(mk("hoa:1"), &backup),
            Err(ForwardingError::NotActive(backup.id))
        );
        let err = tunnel_to_coa(mk("hoa:2"), &active).unwrap_err();
        assert_eq!(err.loss_reason(), LossReason::NoBinding);
    }

    #[test]
    fn stale_coa_is_rejected() {
        let (g, homes, active, _) = setup();
        let p = cn_send(&Address::new("cn:1"), &Address::new("hoa:1"), &g, &homes, vec![]).unwrap();
        let p = tunnel_to_coa(route_to_active(p, active.id, active.id).unwrap(), &active).unwrap();
        let err = decapsulate_at_coa(p, &Address::new("coa:moved")).unwrap_err();
        assert_eq!(err.loss_reason(), LossReason::WrongCoa);
    }

    #[test]
    fn pickup_selection() {
        let (g, _, mut active, mut backup) = setup();
        // single live HA
        let mut dead = backup.clone();
        dead.mark_failed();
        assert_eq!(select_pickup_ha(&g, [&active, &dead], |_| Some(1)), Ok(active.id));

        // equal distance, lower workload wins
        active.set_throughput(50.0); // workload 1*50/(10*100) = 0.05
        backup
            .sync_from_active([&MobilityBinding {
                mn_home_address: Address::new("hoa:1"),
                coa: Address::new("coa:x"),
                lifetime: 60,
                sequence: 1,
            }], false)
            .unwrap();
        backup.set_throughput(20.0); // 0.02
        assert_eq!(select_pickup_ha(&g, [&active, &backup], |_| Some(2)), Ok(backup.id));

        // distance dominates workload
        let a_id = active.id;
        assert_eq!(
            select_pickup_ha(&g, [&active, &backup], |id| Some(if *id == a_id { 1 } else { 3 })),
            Ok(a_id)
        );

        // all failed
        let mut a2 = active.clone();
        a2.mark_failed();
        assert_eq!(select_pickup_ha(&g, [&a2, &dead], |_| Some(1)), Err(ForwardingError::NoLiveHa));
    }

    #[test]
    fn loss_reason_names_round_trip() {
        for r in LossReason::ALL {
            assert_eq!(LossReason::parse(r.as_str()), Some(r));
        }
    }
}
