//! The implicit aggregation tree, derived from local neighbor knowledge only.

use crate::label::{Kind, NodeRef, VirtualNodeId};
use crate::topology::NeighborState;

/// Parent and ordered children of one virtual node.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TreeLinks {
    pub parent: Option<VirtualNodeId>,
    pub children: Vec<VirtualNodeId>,
}

/// True for the minimum node of the cycle: it is the only node whose pred
/// has a larger position (the wrap edge), or a node alone on its cycle.
pub fn is_anchor(me: &NodeRef, nb: &NeighborState) -> bool {
    me.id.kind == Kind::Left && (nb.pred.id == me.id || nb.pred > *me)
}

/// The leftmost neighbor: `l(v)` for middles, `pred(v)` for lefts, `m(v)` for
/// rights. The anchor has none.
pub fn parent_of(me: &NodeRef, nb: &NeighborState) -> Option<VirtualNodeId> {
    match me.id.kind {
        Kind::Middle => Some(me.id.sibling(Kind::Left)),
        Kind::Right => Some(me.id.sibling(Kind::Middle)),
        Kind::Left if is_anchor(me, nb) => None,
        Kind::Left => Some(nb.pred.id),
    }
}

/// Children in fixed order: the successor (when it is a left node), then the
/// next sibling. Right nodes are leaves.
pub fn children_of(me: &NodeRef, nb: &NeighborState) -> Vec<VirtualNodeId> {
    let sibling = match me.id.kind {
        Kind::Left => me.id.sibling(Kind::Middle),
        Kind::Middle => me.id.sibling(Kind::Right),
        Kind::Right => return Vec::new(),
    };
    let mut out = Vec::with_capacity(2);
    let succ = nb.succ;
    if succ.id.kind == Kind::Left && succ.id != me.id && !is_wrap(me, &succ) {
        out.push(succ.id);
    }
    out.push(sibling);
    out
}

// The successor across the wrap point is the anchor, which has no parent.
fn is_wrap(me: &NodeRef, succ: &NodeRef) -> bool {
    *succ < *me
}

pub fn links(me: &NodeRef, nb: &NeighborState) -> TreeLinks {
    TreeLinks {
        parent: parent_of(me, nb),
        children: children_of(me, nb),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{Hashing, Label};

    fn node(pid: u64, kind: Kind, x: f64) -> NodeRef {
        NodeRef {
            id: VirtualNodeId::new(pid, kind),
            label: Label::from_f64(x),
        }
    }

    // Two interleaved processes: l(u) < l(v) < m(u) < m(v) < r(u) < r(v).
    fn interleaved_pair() -> Vec<NodeRef> {
        vec![
            node(1, Kind::Left, 0.2),
            node(2, Kind::Left, 0.3),
            node(1, Kind::Middle, 0.4),
            node(2, Kind::Middle, 0.6),
            node(1, Kind::Right, 0.7),
            node(2, Kind::Right, 0.8),
        ]
    }

    fn nb(ring: &[NodeRef], i: usize) -> NeighborState {
        let n = ring.len();
        NeighborState {
            pred: ring[(i + n - 1) % n],
            succ: ring[(i + 1) % n],
        }
    }

    #[test]
    fn interleaved_pair_parents() {
        let r = interleaved_pair();
        assert_eq!(parent_of(&r[2], &nb(&r, 2)), Some(r[0].id));
        assert_eq!(parent_of(&r[5], &nb(&r, 5)), Some(r[3].id));
        assert_eq!(parent_of(&r[0], &nb(&r, 0)), None);
        assert_eq!(parent_of(&r[1], &nb(&r, 1)), Some(r[0].id));
    }

    #[test]
    fn interleaved_pair_children() {
        let r = interleaved_pair();
        assert_eq!(children_of(&r[0], &nb(&r, 0)), vec![r[1].id, r[2].id]);
        assert!(children_of(&r[4], &nb(&r, 4)).is_empty());
        assert_eq!(children_of(&r[3], &nb(&r, 3)), vec![r[5].id]);
    }

    #[test]
    fn consistency_on_random_rings() {
        let h = Hashing::default();
        let ring = crate::topology::Ring::of_processes(&h, 0..300);
        let mut roots = 0;
        for n in ring.nodes() {
            let l = links(n, &ring.neighbors(n.id));
            match l.parent {
                None => roots += 1,
                Some(p) => {
                    let pr = ring.get(p).unwrap();
                    assert!(children_of(&pr, &ring.neighbors(p)).contains(&n.id));
                }
            }
            for c in l.children {
                let cr = ring.get(c).unwrap();
                assert_eq!(parent_of(&cr, &ring.neighbors(c)), Some(n.id));
            }
        }
        assert_eq!(roots, 1);
    }
}
