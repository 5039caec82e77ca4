//! Discrete-event plumbing: the node graph with per-edge delays, and an
//! event queue ordered by time, phase, then insertion.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("event at {at} scheduled while the clock reads {now}")]
    TimeTravel { at: SimTime, now: SimTime },
    #[error("event bound of {0} exceeded")]
    Livelock(u64),
}

pub type NodeIx = usize;

/// Undirected graph of named nodes with constant per-edge delays.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    names: Vec<String>,
    index: BTreeMap<String, NodeIx>,
    adj: Vec<Vec<(NodeIx, SimDuration)>>,
}

/// Cost of the best path between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub delay: SimDuration,
    pub hops: u32,
}

impl Topology {
    pub fn new() -> Self {
        Topology::default()
    }

    pub fn add_node(&mut self, name: &str) -> Result<NodeIx, SimError> {
        if self.index.contains_key(name) {
            return Err(SimError::DuplicateNode(name.into()));
        }
        let ix = self.names.len();
        self.names.push(name.into());
        self.index.insert(name.into(), ix);
        self.adj.push(Vec::new());
        Ok(ix)
    }

    pub fn add_edge(&mut self, a: &str, b: &str, delay: SimDuration) -> Result<(), SimError> {
        let a = self.node(a)?;
        let b = self.node(b)?;
        self.adj[a].push((b, delay));
        self.adj[b].push((a, delay));
        Ok(())
    }

    pub fn node(&self, name: &str) -> Result<NodeIx, SimError> {
        self.index.get(name).copied().ok_or_else(|| SimError::UnknownNode(name.into()))
    }

    pub fn name(&self, ix: NodeIx) -> &str {
        &self.names[ix]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn neighbours(&self, ix: NodeIx) -> impl Iterator<Item = (NodeIx, SimDuration)> + '_ {
        self.adj[ix].iter().copied()
    }

    /// Best routes from `from` to every node, never transiting a node in
    /// `down` (endpoints may be down; delivery then fails at the far end).
    /// Minimises delay, then hop count.
    pub fn routes_from(&self, from: NodeIx, down: &BTreeSet<NodeIx>) -> Vec<Option<Route>> {
        let mut best: Vec<Option<Route>> = alloc::vec![None; self.len()];
        let mut heap = BinaryHeap::new();
        best[from] = Some(Route {
            delay: SimDuration::ZERO,
            hops: 0,
        });
        heap.push(Reverse((SimDuration::ZERO, 0u32, from)));
        while let Some(Reverse((d, h, u))) = heap.pop() {
            if best[u] != Some(Route { delay: d, hops: h }) {
                continue;
            }
            if u != from && down.contains(&u) {
                continue;
            }
            for &(v, w) in &self.adj[u] {
                let cand = Route {
                    delay: d + w,
                    hops: h + 1,
                };
                let better = match best[v] {
                    None => true,
                    Some(cur) => (cand.delay, cand.hops) < (cur.delay, cur.hops),
                };
                if better {
                    best[v] = Some(cand);
                    heap.push(Reverse((cand.delay, cand.hops, v)));
                }
            }
        }
        best
    }

    pub fn route(&self, from: NodeIx, to: NodeIx, down: &BTreeSet<NodeIx>) -> Option<Route> {
        self.routes_from(from, down)[to]
    }

    /// Whether every node reaches every other.
    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.routes_from(0, &BTreeSet::new()).iter().all(Option::is_some)
    }
}

/// Caches [`Topology::routes_from`] for the current set of down nodes.
#[derive(Debug, Clone)]
pub struct Router {
    topo: Topology,
    down: BTreeSet<NodeIx>,
    cache: BTreeMap<NodeIx, Vec<Option<Route>>>,
}

impl Router {
    pub fn new(topo: Topology) -> Self {
        Router {
            topo,
            down: BTreeSet::new(),
            cache: BTreeMap::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn set_down(&mut self, node: NodeIx, down: bool) {
        let changed = if down { self.down.insert(node) } else { self.down.remove(&node) };
        if changed {
            self.cache.clear();
        }
    }

    pub fn is_down(&self, node: NodeIx) -> bool {
        self.down.contains(&node)
    }

    pub fn route(&mut self, from: NodeIx, to: NodeIx) -> Option<Route> {
        let topo = &self.topo;
        let down = &self.down;
        self.cache.entry(from).or_insert_with(|| topo.routes_from(from, down))[to]
    }
}

struct Entry<E> {
    at: SimTime,
    phase: u8,
    seq: u64,
    event: E,
}

impl<E> Entry<E> {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.at, self.phase, self.seq)
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on the key
        other.key().cmp(&self.key())
    }
}

/// Events fire in `(at, phase, seq)` order: phases let every ordinary event
/// of an instant run before, say, a failure injected at that instant.
pub struct EventQueue<E> {
    now: SimTime,
    seq: u64,
    processed: u64,
    max_events: u64,
    heap: BinaryHeap<Entry<E>>,
}

impl<E> EventQueue<E> {
    pub fn new(max_events: u64) -> Self {
        EventQueue {
            now: SimTime::ZERO,
            seq: 0,
            processed: 0,
            max_events,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<(), SimError> {
        self.schedule_in_phase(at, 0, event)
    }

    pub fn schedule_in_phase(&mut self, at: SimTime, phase: u8, event: E) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::TimeTravel { at, now: self.now });
        }
        self.heap.push(Entry {
            at,
            phase,
            seq: self.seq,
            event,
        });
        self.seq += 1;
        Ok(())
    }

    /// Next event at or before `until`, advancing the clock to it.
    pub fn pop_until(&mut self, until: SimTime) -> Result<Option<(SimTime, E)>, SimError> {
        match self.heap.peek() {
            Some(e) if e.at <= until => {}
            _ => return Ok(None),
        }
        if self.processed >= self.max_events {
            return Err(SimError::Livelock(self.max_events));
        }
        let e = self.heap.pop().expect("peeked");
        self.now = e.at;
        self.processed += 1;
        Ok(Some((e.at, e.event)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Topology {
        let mut t = Topology::new();
        for n in ["a", "b", "c", "d"] {
            t.add_node(n).unwrap();
        }
        t.add_edge("a", "b", SimDuration::from_millis(1)).unwrap();
        t.add_edge("b", "c", SimDuration::from_millis(1)).unwrap();
        t.add_edge("a", "c", SimDuration::from_millis(5)).unwrap();
        t.add_edge("c", "d", SimDuration::from_millis(1)).unwrap();
        t
    }

    #[test]
    fn shortest_delay_then_hops() {
        let t = line();
        let r = t.route(0, 3, &BTreeSet::new()).unwrap();
        assert_eq!(r.delay, SimDuration::from_millis(3));
        assert_eq!(r.hops, 3);
        assert!(t.is_connected());
    }

    #[test]
    fn down_nodes_are_not_transited() {
        let t = line();
        let down: BTreeSet<_> = [1].into_iter().collect();
        let r = t.route(0, 3, &down).unwrap();
        assert_eq!(r.delay, SimDuration::from_millis(6));
        // a down endpoint is still reachable as a destination
        assert_eq!(t.route(0, 1, &down).unwrap().delay, SimDuration::from_millis(1));
        let cut: BTreeSet<_> = [2].into_iter().collect();
        assert_eq!(t.route(0, 3, &cut), None);
    }

    #[test]
    fn router_cache_follows_failures() {
        let mut r = Router::new(line());
        assert_eq!(r.route(0, 3).unwrap().delay, SimDuration::from_millis(3));
        r.set_down(1, true);
        assert_eq!(r.route(0, 3).unwrap().delay, SimDuration::from_millis(6));
        r.set_down(1, false);
        assert_eq!(r.route(0, 3).unwrap().delay, SimDuration::from_millis(3));
    }

    #[test]
    fn duplicate_and_unknown_nodes() {
        let mut t = line();
        assert_eq!(t.add_node("a"), Err(SimError::DuplicateNode("a".into())));
        assert_eq!(
            t.add_edge("a", "zz", SimDuration::ZERO),
            Err(SimError::UnknownNode("zz".into()))
        );
    }

    #[test]
    fn equal_times_fire_in_schedule_order_and_phases_last() {
        let mut q = EventQueue::new(100);
        let t = SimTime::from_millis(1);
        q.schedule_in_phase(t, 1, "late").unwrap();
        q.schedule(t, "first").unwrap();
        q.schedule(t, "second").unwrap();
        q.schedule(SimTime::ZERO, "zero").unwrap();
        let order: Vec<_> = core::iter::from_fn(|| q.pop_until(SimTime::from_secs(1)).unwrap().map(|(_, e)| e)).collect();
        assert_eq!(order, ["zero", "first", "second", "late"]);
    }

    #[test]
    fn past_events_and_livelock_are_errors() {
        let mut q = EventQueue::new(2);
        q.schedule(SimTime::from_millis(5), 0).unwrap();
        q.pop_until(SimTime::from_secs(1)).unwrap();
        assert_eq!(
            q.schedule(SimTime::from_millis(4), 1),
            Err(SimError::TimeTravel {
                at: SimTime::from_millis(4),
                now: SimTime::from_millis(5)
            })
        );
        q.schedule(SimTime::from_millis(5), 1).unwrap();
        q.schedule(SimTime::from_millis(6), 2).unwrap();
        q.pop_until(SimTime::from_secs(1)).unwrap();
        assert_eq!(q.pop_until(SimTime::from_secs(1)), Err(SimError::Livelock(2)));
    }

    #[test]
    fn pop_until_respects_horizon() {
        let mut q = EventQueue::new(10);
        q.schedule(SimTime::from_secs(2), ()).unwrap();
        assert_eq!(q.pop_until(SimTime::from_secs(1)), Ok(None));
        assert_eq!(q.len(), 1);
    }
}
