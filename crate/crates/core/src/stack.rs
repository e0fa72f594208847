//! Local request streams and stack combining.
//!
//! A stream buffers the requests one origin issued since the last batch. In
//! stack mode a pop that follows an unmatched push of the same stream is
//! answered on the spot with that push's element; only the residual requests
//! (pops first, then pushes) travel up the tree.

use crate::batch::{Batch, BatchKind, ReqKind};
use crate::protocol::{LocalRecord, ReqRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pending {
    pub req: ReqRef,
    pub kind: ReqKind,
    pub issued: u64,
}

#[derive(Clone, Debug)]
struct Entry {
    p: Pending,
    run: usize,
    matched: bool,
}

#[derive(Clone, Debug)]
pub struct LocalStream {
    pub batch: Batch,
    entries: Vec<Entry>,
    open_pushes: Vec<usize>,
}

/// A stream frozen into a batch part.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub ops: Vec<u64>,
    /// Residual requests grouped by run, in issue order.
    pub runs: Vec<Vec<Pending>>,
    pub record: LocalRecord,
}

impl LocalStream {
    pub fn new(kind: BatchKind) -> Self {
        LocalStream {
            batch: Batch::empty(kind),
            entries: Vec::new(),
            open_pushes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records a request. Returns `(push, pop)` when a stack pop was combined
    /// with the latest unmatched push.
    pub fn record(&mut self, p: Pending) -> Option<(Pending, Pending)> {
        if p.kind == ReqKind::Pop {
            if let Some(i) = self.open_pushes.pop() {
                self.entries[i].matched = true;
                self.batch.ops[1] -= 1;
                let push = self.entries[i].p;
                self.entries.push(Entry {
                    p,
                    run: 0,
                    matched: true,
                });
                return Some((push, p));
            }
        }
        let (run, _) = self.batch.record(p.kind);
        if p.kind == ReqKind::Push {
            self.open_pushes.push(self.entries.len());
        }
        self.entries.push(Entry { p, run, matched: false });
        None
    }

    pub fn freeze(self) -> Frozen {
        let ops = self.batch.ops.clone();
        let mut runs: Vec<Vec<Pending>> = vec![Vec::new(); ops.len()];
        let mut record = LocalRecord {
            ops: ops.clone(),
            runs: vec![Vec::new(); ops.len()],
            ..LocalRecord::default()
        };
        let mut residuals = 0usize;
        let mut block: Vec<ReqRef> = Vec::new();
        for e in &self.entries {
            if e.matched {
                block.push(e.p.req);
                continue;
            }
            if !block.is_empty() {
                record.blocks.push((residuals, std::mem::take(&mut block)));
            }
            runs[e.run].push(e.p);
            record.runs[e.run].push(e.p.req);
            record.residual_order.push((e.run, e.p.req));
            residuals += 1;
        }
        if !block.is_empty() {
            record.blocks.push((residuals, block));
        }
        Frozen { ops, runs, record }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(index: u64, kind: ReqKind) -> Pending {
        Pending {
            req: ReqRef { pid: 1, index },
            kind,
            issued: 0,
        }
    }

    #[test]
    fn pop_matches_latest_push() {
        let mut s = LocalStream::new(BatchKind::Stack);
        assert!(s.record(p(1, ReqKind::Push)).is_none());
        assert!(s.record(p(2, ReqKind::Push)).is_none());
        let (push, _) = s.record(p(3, ReqKind::Pop)).unwrap();
        assert_eq!(push.req.index, 2);
        assert_eq!(s.batch.ops, vec![0, 1]);
        let f = s.freeze();
        assert_eq!(f.runs[1].len(), 1);
        assert_eq!(
            f.record.blocks,
            vec![(1, vec![ReqRef { pid: 1, index: 2 }, ReqRef { pid: 1, index: 3 }])]
        );
    }

    #[test]
    fn residual_pops_precede_pushes() {
        let mut s = LocalStream::new(BatchKind::Stack);
        s.record(p(1, ReqKind::Pop));
        s.record(p(2, ReqKind::Push));
        s.record(p(3, ReqKind::Pop));
        s.record(p(4, ReqKind::Push));
        assert_eq!(s.batch.ops, vec![1, 1]);
        let f = s.freeze();
        assert_eq!(f.runs[0][0].req.index, 1);
        assert_eq!(f.runs[1][0].req.index, 4);
        assert_eq!(f.record.blocks.len(), 1);
        assert_eq!(f.record.blocks[0].0, 1);
    }

    #[test]
    fn queue_stream_keeps_runs() {
        let mut s = LocalStream::new(BatchKind::Queue);
        for (i, k) in [ReqKind::Deq, ReqKind::Enq, ReqKind::Enq, ReqKind::Deq]
            .into_iter()
            .enumerate()
        {
            assert!(s.record(p(i as u64 + 1, k)).is_none());
        }
        let f = s.freeze();
        assert_eq!(f.ops, vec![0, 1, 2, 1]);
        assert_eq!(f.runs[2].len(), 2);
    }
}
