//! Anchor-side interval assignment and top-down decomposition.
//!
//! The anchor turns a combined batch into one position interval per run.
//! Every inner node splits the intervals it receives among its memorized
//! sub-batches in combination order, and finally hands single positions to
//! its own requests.

use crate::batch::BatchKind;
use crate::protocol::Interval;

/// Queue anchor step. Enqueue runs extend `last`; dequeue runs consume from
/// `first` but never past `last`. Returns the intervals and `(first, last)`
/// after each run.
pub fn assign_queue(first: &mut i64, last: &mut i64, ops: &[u64]) -> (Vec<Interval>, Vec<(i64, i64)>) {
    let mut out = Vec::with_capacity(ops.len());
    let mut trace = Vec::with_capacity(ops.len());
    for (i, &k) in ops.iter().enumerate() {
        let k = k as i64;
        if i % 2 == 0 {
            out.push(Interval::new(*last + 1, *last + k));
            *last += k;
        } else {
            out.push(Interval::new(*first, (*first + k - 1).min(*last)));
            *first = (*first + k).min(*last + 1);
        }
        trace.push((*first, *last));
    }
    (out, trace)
}

/// Stack anchor step on `(pops, pushes)`. Pops take the top `pops` positions
/// and carry the ticket bound in force before this batch's pushes; pushes get
/// fresh positions and consecutive tickets.
pub fn assign_stack(last: &mut i64, ticket: &mut u64, ops: &[u64]) -> Vec<Interval> {
    assert_eq!(ops.len(), 2, "stack batches are pairs");
    let (pops, pushes) = (ops[0] as i64, ops[1] as i64);
    let pop = Interval {
        x: (*last - pops + 1).max(1),
        y: *last,
        ticket: *ticket,
    };
    *last = (*last - pops).max(0);
    let push = Interval {
        x: *last + 1,
        y: *last + pushes,
        ticket: *ticket + 1,
    };
    *last += pushes;
    *ticket += pushes as u64;
    vec![pop, push]
}

fn is_insert(kind: BatchKind, run: usize) -> bool {
    match kind {
        BatchKind::Queue => run.is_multiple_of(2),
        BatchKind::Stack => run == 1,
    }
}

/// Splits the intervals of a combined batch among its parts, in order.
///
/// Insert runs hand out consecutive positions. Queue removals take from the
/// front and may run dry; stack pops take from the top downward.
pub fn decompose(kind: BatchKind, intervals: &[Interval], parts: &[&[u64]]) -> Vec<Vec<Interval>> {
    let mut cursor: Vec<i64> = intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| match kind {
            BatchKind::Stack if i == 0 => iv.y,
            _ => iv.x,
        })
        .collect();
    let mut out = Vec::with_capacity(parts.len());
    for ops in parts {
        let mut sub = Vec::with_capacity(ops.len());
        for (i, &k) in ops.iter().enumerate() {
            let iv = intervals[i];
            let k = k as i64;
            let s = if is_insert(kind, i) {
                let s = Interval {
                    x: cursor[i],
                    y: cursor[i] + k - 1,
                    ticket: match kind {
                        BatchKind::Stack => iv.ticket + (cursor[i] - iv.x) as u64,
                        BatchKind::Queue => 0,
                    },
                };
                cursor[i] += k;
                s
            } else if kind == BatchKind::Queue {
                let s = Interval::new(cursor[i], (cursor[i] + k - 1).min(iv.y));
                cursor[i] = (cursor[i] + k).min(iv.y + 1);
                s
            } else {
                let hi = cursor[i];
                let lo = (hi - k + 1).max(iv.x);
                cursor[i] = cursor[i].min(lo - 1);
                Interval {
                    x: lo,
                    y: hi,
                    ticket: iv.ticket,
                }
            };
            sub.push(s);
        }
        out.push(sub);
    }
    out
}

/// Position and ticket of the `k`-th (0-based) request of a run inside its
/// final interval, or `None` for bottom.
pub fn slot(kind: BatchKind, run: usize, iv: &Interval, k: usize) -> Option<(u64, u64)> {
    let k = k as i64;
    if is_insert(kind, run) {
        let p = iv.x + k;
        debug_assert!(p <= iv.y);
        let ticket = if kind == BatchKind::Stack {
            iv.ticket + k as u64
        } else {
            0
        };
        Some((p as u64, ticket))
    } else if kind == BatchKind::Queue {
        let p = iv.x + k;
        (p <= iv.y).then_some((p as u64, 0))
    } else {
        let p = iv.y - k;
        (p >= iv.x && p >= 1).then_some((p as u64, iv.ticket))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_anchor_intervals() {
        let (mut f, mut l) = (1, 0);
        let (iv, _) = assign_queue(&mut f, &mut l, &[3, 5, 2]);
        assert_eq!(iv[0], Interval::new(1, 3));
        assert_eq!(iv[1], Interval::new(1, 3));
        assert_eq!(iv[2], Interval::new(4, 5));
        assert_eq!((f, l), (4, 5));
    }

    #[test]
    fn queue_dequeues_on_empty_run_dry() {
        let (mut f, mut l) = (1, 0);
        let (iv, tr) = assign_queue(&mut f, &mut l, &[0, 2]);
        assert_eq!(iv[1].width(), 0);
        assert_eq!(tr[1], (1, 0));
    }

    #[test]
    fn decompose_queue_in_part_order() {
        let iv = vec![Interval::new(10, 14), Interval::new(3, 5)];
        let a: &[u64] = &[2, 2];
        let b: &[u64] = &[3, 2];
        let d = decompose(BatchKind::Queue, &iv, &[a, b]);
        assert_eq!(d[0][0], Interval::new(10, 11));
        assert_eq!(d[1][0], Interval::new(12, 14));
        assert_eq!(d[0][1], Interval::new(3, 4));
        assert_eq!(d[1][1].x, 5);
        assert_eq!(d[1][1].y, 5);
        assert_eq!(slot(BatchKind::Queue, 1, &d[1][1], 1), None);
    }

    #[test]
    fn stack_anchor_and_split() {
        let (mut last, mut t) = (0, 0);
        let iv = assign_stack(&mut last, &mut t, &[0, 3]);
        assert_eq!((iv[1].x, iv[1].y, iv[1].ticket), (1, 3, 1));
        let iv = assign_stack(&mut last, &mut t, &[2, 1]);
        assert_eq!((iv[0].x, iv[0].y, iv[0].ticket), (2, 3, 3));
        assert_eq!((iv[1].x, iv[1].y, iv[1].ticket), (2, 2, 4));
        assert_eq!((last, t), (2, 4));
        let a: &[u64] = &[1, 0];
        let b: &[u64] = &[1, 1];
        let d = decompose(BatchKind::Stack, &iv, &[a, b]);
        assert_eq!(slot(BatchKind::Stack, 0, &d[0][0], 0), Some((3, 3)));
        assert_eq!(slot(BatchKind::Stack, 0, &d[1][0], 0), Some((2, 3)));
        assert_eq!(slot(BatchKind::Stack, 1, &d[1][1], 0), Some((2, 4)));
    }

    #[test]
    fn stack_pops_beyond_size_are_bottom() {
        let (mut last, mut t) = (1, 1);
        let iv = assign_stack(&mut last, &mut t, &[3, 0]);
        let a: &[u64] = &[3, 0];
        let d = decompose(BatchKind::Stack, &iv, &[a]);
        assert_eq!(slot(BatchKind::Stack, 0, &d[0][0], 0), Some((1, 1)));
        assert_eq!(slot(BatchKind::Stack, 0, &d[0][0], 1), None);
        assert_eq!(last, 0);
    }
}
