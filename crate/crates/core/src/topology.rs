//! The sorted virtual-node cycle, neighbor maintenance and De Bruijn routing.

use std::collections::BTreeMap;

use crate::label::{in_arc, Hashing, Kind, Label, NodeRef, VirtualNodeId};

/// A node's linear neighbors. Kinds are carried inside the references.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborState {
    pub pred: NodeRef,
    pub succ: NodeRef,
}

impl NeighborState {
    /// Whether `me` owns `key`, i.e. `me <= key < succ` cycle-wise.
    pub fn owns(&self, me: &NodeRef, key: Label) -> bool {
        if self.succ.id == me.id {
            return true;
        }
        in_arc(me.label, self.succ.label, key)
    }

    /// Learns about `candidate`; adopts it on whichever side it is closer.
    ///
    /// An edge is only dropped in favour of a strictly closer node, so the
    /// cycle never loses connectivity. Returns whether anything changed.
    pub fn offer(&mut self, me: &NodeRef, candidate: NodeRef) -> bool {
        if candidate.id == me.id {
            return false;
        }
        let mut changed = false;
        if self.succ.id == me.id || strictly_between(me, &self.succ, &candidate) {
            self.succ = candidate;
            changed = true;
        }
        if self.pred.id == me.id || strictly_between(&self.pred, me, &candidate) {
            self.pred = candidate;
            changed = true;
        }
        changed
    }

    /// Repoints every reference to `old` at `new`.
    pub fn replace(&mut self, old: VirtualNodeId, new: NodeRef) {
        if self.pred.id == old {
            self.pred = new;
        }
        if self.succ.id == old {
            self.succ = new;
        }
    }
}

/// Whether `x` sits strictly inside the clockwise open arc `(a, b)` in the
/// total order (label, pid, kind).
pub fn strictly_between(a: &NodeRef, b: &NodeRef, x: &NodeRef) -> bool {
    let (ka, kb, kx) = (a.order_key(), b.order_key(), x.order_key());
    if ka < kb {
        ka < kx && kx < kb
    } else {
        kx > ka || kx < kb
    }
}

/// Per-message routing progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteState {
    /// De Bruijn bits still to consume; bit `remaining` of the target is next.
    pub remaining: u32,
    pub hops: u32,
    /// Walking toward the predecessor to reach a middle node, because the
    /// successor side wrapped around the cycle.
    pub reverse: bool,
}

impl RouteState {
    /// Number of De Bruijn hops for a network of `n` processes.
    pub fn new(n: usize) -> RouteState {
        RouteState {
            remaining: ceil_log2(n.max(1)) + 2,
            hops: 0,
            reverse: false,
        }
    }

    /// Skips the De Bruijn phase: pure linear walk.
    pub fn linear() -> RouteState {
        RouteState {
            remaining: 0,
            hops: 0,
            reverse: false,
        }
    }
}

pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Outcome of one routing decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hop {
    /// The current node owns the target point.
    Arrived,
    Forward(VirtualNodeId, RouteState),
}

/// Chooses the next hop toward the owner of `target`.
///
/// Phase one performs De Bruijn jumps: from a middle node it moves to its left
/// or right sibling (prepending one target bit to the label); elsewhere it
/// walks linearly to the nearest middle node. Phase two walks linearly to the
/// node `u` with `u <= target < succ(u)`.
pub fn next_hop(me: &NodeRef, nb: &NeighborState, target: Label, state: RouteState) -> Hop {
    let mut st = state;
    st.hops += 1;
    if state.remaining > 0 {
        if me.id.kind == Kind::Middle {
            let kind = if target.bit(state.remaining.min(64)) {
                Kind::Right
            } else {
                Kind::Left
            };
            st.remaining = state.remaining - 1;
            st.reverse = false;
            return Hop::Forward(me.id.sibling(kind), st);
        }
        // Never cross the wrap point: that would move the label by almost 1.
        let pred_ok = nb.pred.label < me.label;
        let succ_ok = nb.succ.label > me.label;
        let next = if nb.pred.id.kind == Kind::Middle && pred_ok {
            nb.pred.id
        } else if !state.reverse && succ_ok {
            nb.succ.id
        } else {
            st.reverse = true;
            nb.pred.id
        };
        if next == me.id {
            st.remaining = 0;
        } else {
            return Hop::Forward(next, st);
        }
    }
    if nb.owns(me, target) {
        return Hop::Arrived;
    }
    if me.label.dist_to(target) < (1u64 << 63) {
        Hop::Forward(nb.succ.id, st)
    } else {
        Hop::Forward(nb.pred.id, st)
    }
}

/// A static snapshot of the cycle, used for bootstrapping and audits.
#[derive(Clone, Debug)]
pub struct Ring {
    nodes: Vec<NodeRef>,
    index: BTreeMap<VirtualNodeId, usize>,
}

impl Ring {
    pub fn new(mut nodes: Vec<NodeRef>) -> Ring {
        nodes.sort();
        nodes.dedup_by_key(|n| n.id);
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        Ring { nodes, index }
    }

    /// The cycle formed by all three virtual nodes of each process.
    pub fn of_processes(hashing: &Hashing, pids: impl IntoIterator<Item = u64>) -> Ring {
        let mut nodes = Vec::new();
        for pid in pids {
            for kind in Kind::ALL {
                nodes.push(hashing.node_ref(VirtualNodeId::new(pid, kind)));
            }
        }
        Ring::new(nodes)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn get(&self, id: VirtualNodeId) -> Option<NodeRef> {
        self.index.get(&id).map(|&i| self.nodes[i])
    }

    /// The minimum-label node.
    pub fn anchor(&self) -> NodeRef {
        self.nodes[0]
    }

    pub fn neighbors(&self, id: VirtualNodeId) -> NeighborState {
        let i = self.index[&id];
        let n = self.nodes.len();
        NeighborState {
            pred: self.nodes[(i + n - 1) % n],
            succ: self.nodes[(i + 1) % n],
        }
    }

    /// The unique `v` with `v <= key < succ(v)` cycle-wise.
    pub fn responsible(&self, key: Label) -> NodeRef {
        let i = self.nodes.partition_point(|n| n.label <= key);
        if i == 0 {
            *self.nodes.last().expect("empty ring")
        } else {
            self.nodes[i - 1]
        }
    }

    /// Routes from `src` to the owner of `target` using [`next_hop`].
    /// Returns the reached node and the hop count.
    pub fn route(&self, src: VirtualNodeId, target: Label) -> (NodeRef, u32) {
        let mut cur = self.get(src).expect("unknown source");
        let mut state = RouteState::new(self.len().div_ceil(3));
        let limit = 64 * self.len() as u32 + 256;
        loop {
            match next_hop(&cur, &self.neighbors(cur.id), target, state) {
                Hop::Arrived => return (cur, state.hops),
                Hop::Forward(next, st) => {
                    cur = self.get(next).expect("hop to unknown node");
                    state = st;
                    assert!(state.hops <= limit, "routing did not terminate");
                }
            }
        }
    }
}

/// Error reported by [`audit_cycle`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CycleError {
    #[error("no nodes")]
    Empty,
    #[error("succ of {0} is unknown node {1}")]
    Dangling(VirtualNodeId, VirtualNodeId),
    #[error("pred of {0} is {1}, expected {2}")]
    PredMismatch(VirtualNodeId, VirtualNodeId, VirtualNodeId),
    #[error("walk visited {0} of {1} nodes")]
    Incomplete(usize, usize),
    #[error("order broken between {0} and {1}")]
    Order(VirtualNodeId, VirtualNodeId),
}

/// Walks succ pointers from the minimum node and checks that every node is
/// visited once in label order, and that pred pointers mirror succ pointers.
pub fn audit_cycle(nodes: &BTreeMap<VirtualNodeId, (NodeRef, NeighborState)>) -> Result<(), CycleError> {
    let start = nodes.values().map(|(r, _)| *r).min().ok_or(CycleError::Empty)?;
    let mut cur = start;
    let mut seen = 0usize;
    loop {
        let (_, nb) = nodes[&cur.id];
        let next = nb.succ;
        let Some((next_ref, next_nb)) = nodes.get(&next.id) else {
            return Err(CycleError::Dangling(cur.id, next.id));
        };
        if next_nb.pred.id != cur.id {
            return Err(CycleError::PredMismatch(next.id, next_nb.pred.id, cur.id));
        }
        seen += 1;
        if next.id == start.id {
            break;
        }
        if *next_ref < cur {
            return Err(CycleError::Order(cur.id, next.id));
        }
        if seen > nodes.len() {
            return Err(CycleError::Incomplete(seen, nodes.len()));
        }
        cur = *next_ref;
    }
    if seen != nodes.len() {
        return Err(CycleError::Incomplete(seen, nodes.len()));
    }
    Ok(())
}
