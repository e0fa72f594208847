//! Labels on the unit cycle and virtual node identities.
//!
//! A label is a 64-bit fixed-point fraction: the real number `value / 2^64`.
//! Every process emulates three virtual nodes whose labels are derived from a
//! single pseudorandom middle label.

use std::cmp::Ordering;
use std::fmt;

/// A point in `[0, 1)` stored as `value / 2^64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Label(pub u64);

impl Label {
    pub const ZERO: Label = Label(0);
    pub const HALF: Label = Label(1 << 63);

    /// Nearest label to a real number, clamped into `[0, 1)`.
    pub fn from_f64(x: f64) -> Label {
        if x <= 0.0 {
            return Label(0);
        }
        if x >= 1.0 {
            return Label(u64::MAX);
        }
        Label((x * 18_446_744_073_709_551_616.0) as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 18_446_744_073_709_551_616.0
    }

    /// `self / 2`: the left De Bruijn image.
    pub fn halve(self) -> Label {
        Label(self.0 >> 1)
    }

    /// `(self + 1) / 2`: the right De Bruijn image.
    pub fn halve_up(self) -> Label {
        Label((self.0 >> 1) | (1 << 63))
    }

    /// Clockwise distance from `self` to `other`.
    pub fn dist_to(self, other: Label) -> u64 {
        other.0.wrapping_sub(self.0)
    }

    /// Bit `i` of the binary expansion, `i = 1` being the most significant.
    pub fn bit(self, i: u32) -> bool {
        debug_assert!((1..=64).contains(&i));
        (self.0 >> (64 - i)) & 1 == 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.as_f64())
    }
}

/// Role of a virtual node within its process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Left,
    Middle,
    Right,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Left, Kind::Middle, Kind::Right];

    pub fn short(self) -> char {
        match self {
            Kind::Left => 'l',
            Kind::Middle => 'm',
            Kind::Right => 'r',
        }
    }
}

/// Address of a virtual node: the emulating process and the role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualNodeId {
    pub pid: u64,
    pub kind: Kind,
}

impl VirtualNodeId {
    pub fn new(pid: u64, kind: Kind) -> Self {
        VirtualNodeId { pid, kind }
    }

    pub fn sibling(self, kind: Kind) -> Self {
        VirtualNodeId { pid: self.pid, kind }
    }
}

impl fmt::Display for VirtualNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind.short(), self.pid)
    }
}

/// 64-bit finalizer mix (splitmix64 / Stafford variant 13).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The two public hash functions: `H` for process labels and `K` for DHT keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hashing {
    pub label_salt: u64,
    pub key_salt: u64,
}

impl Default for Hashing {
    fn default() -> Self {
        Hashing {
            label_salt: 0x6c64_625f_6c61_6265,
            key_salt: 0x6468_745f_6b65_7973,
        }
    }
}

impl Hashing {
    /// Derives both salts from one experiment seed.
    pub fn seeded(seed: u64) -> Self {
        let base = Hashing::default();
        Hashing {
            label_salt: mix64(base.label_salt ^ seed),
            key_salt: mix64(base.key_salt ^ seed.rotate_left(17)),
        }
    }

    /// Middle label `H(pid)`.
    pub fn middle(&self, pid: u64) -> Label {
        Label(mix64(pid ^ self.label_salt))
    }

    /// Label of any virtual node of `pid`.
    pub fn label_of(&self, pid: u64, kind: Kind) -> Label {
        let m = self.middle(pid);
        match kind {
            Kind::Left => m.halve(),
            Kind::Middle => m,
            Kind::Right => m.halve_up(),
        }
    }

    pub fn label(&self, id: VirtualNodeId) -> Label {
        self.label_of(id.pid, id.kind)
    }

    /// DHT key `K(position)`.
    pub fn key(&self, position: u64) -> Label {
        Label(mix64(position ^ self.key_salt))
    }

    pub fn node_ref(&self, id: VirtualNodeId) -> NodeRef {
        NodeRef {
            id,
            label: self.label(id),
        }
    }
}

/// A stored reference to a virtual node: its address plus label.
///
/// The kind travels inside `id`, so holders always know whether a neighbor
/// is a left, middle or right node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub id: VirtualNodeId,
    pub label: Label,
}

impl NodeRef {
    /// Total cycle order: label, then process id, then kind.
    pub fn order_key(&self) -> (Label, u64, Kind) {
        (self.label, self.id.pid, self.id.kind)
    }
}

impl PartialOrd for NodeRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NodeRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.label)
    }
}

/// Whether `x` lies in the half-open cycle arc `[from, to)`.
///
/// `from == to` denotes the full cycle (a single-node ring owns everything).
pub fn in_arc(from: Label, to: Label, x: Label) -> bool {
    if from == to {
        return true;
    }
    from.dist_to(x) < from.dist_to(to)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_and_right_follow_halving_formulas() {
        let m = Label::from_f64(0.6);
        assert!((m.halve().as_f64() - 0.3).abs() < 1e-12);
        assert!((m.halve_up().as_f64() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_middle_label_boundary() {
        assert_eq!(Label::ZERO.halve(), Label::ZERO);
        assert_eq!(Label::ZERO.halve_up(), Label::HALF);
    }

    #[test]
    fn labels_are_deterministic() {
        let h = Hashing::default();
        assert_eq!(h.middle(42), h.middle(42));
        assert_ne!(h.middle(42), h.middle(43));
        assert_ne!(h.key(42), h.middle(42));
    }

    #[test]
    fn left_below_half_right_at_or_above() {
        let h = Hashing::default();
        for pid in 0..1000 {
            assert!(h.label_of(pid, Kind::Left) < Label::HALF);
            assert!(h.label_of(pid, Kind::Right) >= Label::HALF);
        }
    }

    #[test]
    fn arc_membership_wraps() {
        let a = Label::from_f64(0.9);
        let b = Label::from_f64(0.1);
        assert!(in_arc(a, b, Label::from_f64(0.95)));
        assert!(in_arc(a, b, Label::from_f64(0.05)));
        assert!(in_arc(a, b, a));
        assert!(!in_arc(a, b, b));
        assert!(!in_arc(a, b, Label::from_f64(0.5)));
        assert!(in_arc(a, a, b));
    }

    #[test]
    fn bit_extraction_msb_first() {
        let x = Label::from_f64(0.75);
        assert!(x.bit(1));
        assert!(x.bit(2));
        assert!(!x.bit(3));
    }
}
