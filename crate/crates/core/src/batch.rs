//! Run-length batches of buffered requests.
//!
//! A queue batch `(op_1, ..., op_k)` alternates enqueue runs (odd indices) and
//! dequeue runs (even indices). The empty batch is `(0)`; a batch starting with
//! dequeues is `(0, d, ...)`. Stack batches are the pair `(pops, pushes)`.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BatchKind {
    Queue,
    Stack,
}

/// Request kinds recorded into batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReqKind {
    Enq,
    Deq,
    Push,
    Pop,
}

impl ReqKind {
    /// Enqueue or push: carries an element.
    pub fn is_insert(self) -> bool {
        matches!(self, ReqKind::Enq | ReqKind::Push)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Batch {
    pub kind: BatchKind,
    pub ops: Vec<u64>,
    /// Joins accounted in this batch.
    pub j: u64,
    /// Leaves accounted in this batch.
    pub l: u64,
}

impl fmt::Debug for Batch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.ops)?;
        if self.j > 0 || self.l > 0 {
            write!(f, "[j={},l={}]", self.j, self.l)?;
        }
        Ok(())
    }
}

impl Batch {
    pub fn empty(kind: BatchKind) -> Batch {
        let ops = match kind {
            BatchKind::Queue => vec![0],
            BatchKind::Stack => vec![0, 0],
        };
        Batch { kind, ops, j: 0, l: 0 }
    }

    pub fn queue(ops: &[u64]) -> Batch {
        Batch {
            kind: BatchKind::Queue,
            ops: ops.to_vec(),
            j: 0,
            l: 0,
        }
    }

    pub fn stack(pops: u64, pushes: u64) -> Batch {
        Batch {
            kind: BatchKind::Stack,
            ops: vec![pops, pushes],
            j: 0,
            l: 0,
        }
    }

    /// Total number of queue or stack requests.
    pub fn requests(&self) -> u64 {
        self.ops.iter().sum()
    }

    /// No requests and no membership counts.
    pub fn is_empty(&self) -> bool {
        self.requests() == 0 && self.j == 0 && self.l == 0
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    /// Whether run `i` (0-based) holds inserts (enqueues or pushes).
    pub fn run_is_insert(&self, i: usize) -> bool {
        match self.kind {
            BatchKind::Queue => i.is_multiple_of(2),
            BatchKind::Stack => i == 1,
        }
    }

    /// Appends one request, preserving local issue order. Returns the run
    /// index (0-based) and the new length of that run.
    pub fn record(&mut self, kind: ReqKind) -> (usize, u64) {
        match self.kind {
            BatchKind::Queue => {
                let want_odd = match kind {
                    ReqKind::Enq => true,
                    ReqKind::Deq => false,
                    _ => panic!("stack request in queue batch"),
                };
                // The 1-based tail index is odd exactly when len is odd.
                let tail_odd = self.ops.len() % 2 == 1;
                if tail_odd != want_odd {
                    self.ops.push(0);
                }
                let i = self.ops.len() - 1;
                self.ops[i] += 1;
                (i, self.ops[i])
            }
            BatchKind::Stack => {
                let i = match kind {
                    ReqKind::Pop => {
                        assert_eq!(self.ops[1], 0, "pop after an unmatched push must combine locally");
                        0
                    }
                    ReqKind::Push => 1,
                    _ => panic!("queue request in stack batch"),
                };
                self.ops[i] += 1;
                (i, self.ops[i])
            }
        }
    }

    /// Pointwise sum, padding the shorter operand with zeros.
    pub fn combine(&self, other: &Batch) -> Batch {
        assert_eq!(self.kind, other.kind, "mixed batch kinds");
        let n = self.ops.len().max(other.ops.len());
        let ops = (0..n)
            .map(|i| self.ops.get(i).copied().unwrap_or(0) + other.ops.get(i).copied().unwrap_or(0))
            .collect();
        Batch {
            kind: self.kind,
            ops,
            j: self.j + other.j,
            l: self.l + other.l,
        }
    }

    /// Structural invariant: positive runs, except a leading zero (queue) or
    /// exactly two entries (stack).
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            BatchKind::Queue => !self.ops.is_empty() && self.ops.iter().skip(1).all(|&x| x >= 1),
            BatchKind::Stack => self.ops.len() == 2,
        }
    }
}

/// A combined batch that remembers its sub-batches and their origins, in
/// combination order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Memo<O> {
    pub total: Batch,
    pub parts: Vec<(O, Batch)>,
}

impl<O> Memo<O> {
    pub fn empty(kind: BatchKind) -> Self {
        Memo {
            total: Batch::empty(kind),
            parts: Vec::new(),
        }
    }

    /// Folds `parts` left to right with [`Batch::combine`].
    pub fn combine_all(kind: BatchKind, parts: Vec<(O, Batch)>) -> Self {
        let total = parts.iter().fold(Batch::empty(kind), |acc, (_, b)| acc.combine(b));
        Memo { total, parts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_on_empty_enqueue() {
        let mut b = Batch::empty(BatchKind::Queue);
        b.record(ReqKind::Enq);
        assert_eq!(b.ops, vec![1]);
    }

    #[test]
    fn record_appends_new_run() {
        let mut b = Batch::queue(&[2, 1]);
        b.record(ReqKind::Enq);
        assert_eq!(b.ops, vec![2, 1, 1]);
        let mut b = Batch::queue(&[2, 1]);
        b.record(ReqKind::Deq);
        assert_eq!(b.ops, vec![2, 2]);
    }

    #[test]
    fn leading_dequeue_gets_zero_run() {
        let mut b = Batch::empty(BatchKind::Queue);
        assert_eq!(b.record(ReqKind::Deq), (1, 1));
        assert_eq!(b.ops, vec![0, 1]);
        assert!(b.is_well_formed());
    }

    #[test]
    fn combine_pointwise() {
        let c = Batch::queue(&[2, 1]).combine(&Batch::queue(&[1, 2, 3]));
        assert_eq!(c.ops, vec![3, 3, 3]);
        let b = Batch::queue(&[0, 4, 1]);
        assert_eq!(Batch::empty(BatchKind::Queue).combine(&b).ops, b.ops);
    }

    #[test]
    fn combine_counters() {
        let mut a = Batch::empty(BatchKind::Queue);
        a.j = 1;
        let mut b = Batch::empty(BatchKind::Queue);
        b.j = 2;
        b.l = 1;
        let c = a.combine(&b);
        assert_eq!((c.j, c.l), (3, 1));
    }

    #[test]
    fn stack_batches_stay_pairs() {
        let mut b = Batch::empty(BatchKind::Stack);
        b.record(ReqKind::Pop);
        b.record(ReqKind::Push);
        b.record(ReqKind::Push);
        assert_eq!(b.ops, vec![1, 2]);
        assert_eq!(b.combine(&Batch::stack(3, 0)).ops, vec![4, 2]);
    }

    #[test]
    fn memo_keeps_order() {
        let m = Memo::combine_all(
            BatchKind::Queue,
            vec![("a", Batch::queue(&[2])), ("b", Batch::queue(&[1]))],
        );
        assert_eq!(m.total.ops, vec![3]);
        assert_eq!(m.parts[0].0, "a");
    }
}
