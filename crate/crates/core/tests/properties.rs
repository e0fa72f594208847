mod common;

use std::collections::{BTreeMap, HashMap, HashSet};

use common::{drive, Scenario};
use ldbq::batch::{Batch, BatchKind, ReqKind};
use ldbq::checker::{assign_values, brute_force_exists, verify, History, Request, Value, ValuedRequest};
use ldbq::harness::check_world;
use ldbq::kernel::{EventKind, LogLevel, Outcome, SchedulerPolicy};
use ldbq::label::{Hashing, Label};
use ldbq::protocol::ReqRef;
use ldbq::topology::{audit_cycle, Ring};
use ldbq::tree;
use proptest::prelude::*;

fn mode_strategy() -> impl Strategy<Value = BatchKind> {
    prop_oneof![Just(BatchKind::Queue), Just(BatchKind::Stack)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn protocol_runs_keep_every_invariant(
        n in 2usize..10,
        mode in mode_strategy(),
        delay in 1u64..8,
        seed in any::<u64>(),
        joins in 0usize..3,
        leaves in 0usize..3,
    ) {
        let mut sc = Scenario::new(n, mode, SchedulerPolicy::random(seed, delay), seed);
        sc.joins = joins;
        sc.leaves = leaves.min(n - 1);
        sc.log = LogLevel::Messages;
        let w = drive(&sc);
        let trace = w.trace();

        // Every request completes and the order passes the checker.
        check_world(&w).map_err(|e| TestCaseError::fail(e.to_string()))?;
        w.audit().map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(w.members().len(), n + joins - sc.leaves);

        // Messages are delivered once, within the delay bound.
        let mut sent = HashMap::new();
        for e in trace.iter().filter(|e| e.kind == EventKind::MessageSent) {
            prop_assert!(sent.insert(e.op_index, e.time).is_none());
        }
        let mut delivered = HashSet::new();
        for e in trace.iter().filter(|e| e.kind == EventKind::MessageDelivered) {
            prop_assert!(delivered.insert(e.op_index));
            let t = sent[&e.op_index];
            prop_assert!(e.time > t && e.time - t <= delay);
        }
        for (id, t) in &sent {
            prop_assert!(delivered.contains(id) || t + delay >= w.now());
        }

        let sink = w.sink();
        // The anchor counter advances by the size of every batch.
        for pair in sink.anchors.windows(2) {
            prop_assert_eq!(pair[1].c_before, pair[0].c_before + pair[0].ops.iter().sum::<u64>());
        }
        // Insert intervals cover their runs exactly; removal intervals never
        // exceed them.
        for a in &sink.anchors {
            for (i, (iv, &k)) in a.intervals.iter().zip(&a.ops).enumerate() {
                let insert = match mode {
                    BatchKind::Queue => i % 2 == 0,
                    BatchKind::Stack => i == 1,
                };
                if insert {
                    prop_assert_eq!(iv.width(), k);
                } else {
                    prop_assert!(iv.width() <= k);
                }
            }
        }
        // Positions (queue) or (position, ticket) pairs (stack) are unique
        // per kind.
        let mut seen = HashSet::new();
        for m in &sink.meta {
            if let Some(p) = m.position {
                let key = match mode {
                    BatchKind::Queue => (m.kind, p, 0),
                    BatchKind::Stack if m.kind == ReqKind::Push => (m.kind, p, m.ticket.unwrap()),
                    BatchKind::Stack => continue,
                };
                prop_assert!(seen.insert(key), "position handed out twice: {:?}", m);
            }
        }
        if mode == BatchKind::Stack {
            prop_assert!(sink.batch_lens.iter().all(|&l| l <= 2));
        }

        // Stored elements are exactly the inserts nobody removed.
        let h = History::from_trace(trace).unwrap();
        let inserts = h.requests.iter().filter(|r| r.kind.is_insert()).count();
        let taken = h.requests.iter().filter(|r| r.matched_insert().is_some()).count();
        let stored: usize = w.loads().iter().map(|(_, l)| l).sum();
        prop_assert_eq!(stored, inserts - taken);
    }

    #[test]
    fn replay_is_identical(n in 2usize..8, mode in mode_strategy(), seed in any::<u64>()) {
        let mut sc = Scenario::new(n, mode, SchedulerPolicy::random(seed, 5), seed);
        sc.joins = 1;
        sc.leaves = 1;
        sc.log = LogLevel::Messages;
        let a: Vec<String> = drive(&sc).trace().iter().map(|e| e.to_string()).collect();
        let b: Vec<String> = drive(&sc).trace().iter().map(|e| e.to_string()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tree_spans_the_cycle(n in 1u64..300, seed in any::<u64>()) {
        let h = Hashing::seeded(seed);
        let ring = Ring::of_processes(&h, 0..n);
        let links: BTreeMap<_, _> = ring
            .nodes()
            .iter()
            .map(|r| (r.id, tree::links(r, &ring.neighbors(r.id))))
            .collect();
        for (id, l) in &links {
            for c in &l.children {
                prop_assert_eq!(links[c].parent, Some(*id));
            }
            if let Some(p) = l.parent {
                prop_assert!(links[&p].children.contains(id));
            }
        }
        let roots: Vec<_> = links.iter().filter(|(_, l)| l.parent.is_none()).map(|(id, _)| *id).collect();
        prop_assert_eq!(roots.len(), 1);
        // Traversal from the anchor reaches every node once.
        let mut stack = vec![(roots[0], 0u32)];
        let mut seen = HashSet::new();
        let mut height = 0;
        while let Some((id, d)) = stack.pop() {
            prop_assert!(seen.insert(id));
            height = height.max(d);
            stack.extend(links[&id].children.iter().map(|c| (*c, d + 1)));
        }
        prop_assert_eq!(seen.len(), ring.len());
        let log_n = (n.max(2) as f64).log2();
        prop_assert!(f64::from(height) <= 8.0 * log_n + 4.0, "height {} at n={}", height, n);
    }

    #[test]
    fn routes_reach_the_owner(n in 1u64..400, seed in any::<u64>(), src in any::<usize>(), target in any::<u64>()) {
        let h = Hashing::seeded(seed);
        let ring = Ring::of_processes(&h, 0..n);
        let from = ring.nodes()[src % ring.len()].id;
        let (reached, _) = ring.route(from, Label(target));
        prop_assert_eq!(reached.id, ring.responsible(Label(target)).id);
        let map = ring.nodes().iter().map(|r| (r.id, (*r, ring.neighbors(r.id)))).collect();
        prop_assert!(audit_cycle(&map).is_ok());
    }

    #[test]
    fn combine_conserves_and_associates(
        a in prop::collection::vec(0u64..5, 1..6),
        b in prop::collection::vec(0u64..5, 1..6),
        c in prop::collection::vec(0u64..5, 1..6),
        j in 0u64..3,
    ) {
        let (mut x, y, z) = (Batch::queue(&a), Batch::queue(&b), Batch::queue(&c));
        x.j = j;
        let left = x.combine(&y).combine(&z);
        let right = x.combine(&y.combine(&z));
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(left.requests(), x.requests() + y.requests() + z.requests());
        prop_assert_eq!(left.j, j);
    }

    #[test]
    fn sequential_executions_satisfy_both_checkers(
        stack in any::<bool>(),
        script in prop::collection::vec((0u64..3, any::<bool>()), 0..9),
    ) {
        let (h, order) = sequential_history(stack, &script);
        let kind = if stack { BatchKind::Stack } else { BatchKind::Queue };
        prop_assert!(verify(kind, &order).is_ok());
        prop_assert!(brute_force_exists(kind, &h));
    }

    #[test]
    fn accepted_orders_imply_the_oracle(
        stack in any::<bool>(),
        script in prop::collection::vec((0u64..3, any::<bool>(), 0u64..8), 0..8),
        perm in any::<u64>(),
    ) {
        // Arbitrary results, arbitrary valuation: whenever the constructed
        // order is accepted, some order must exist.
        let (h, order) = arbitrary_history(stack, &script, perm);
        let kind = if stack { BatchKind::Stack } else { BatchKind::Queue };
        if verify(kind, &order).is_ok() {
            prop_assert!(brute_force_exists(kind, &h));
        }
    }
}

/// Runs a sequential queue or stack on the given interleaving of
/// `(process, is_insert)` steps.
fn sequential_history(stack: bool, script: &[(u64, bool)]) -> (History, Vec<ValuedRequest>) {
    let mut next: HashMap<u64, u64> = HashMap::new();
    let mut store: std::collections::VecDeque<ReqRef> = Default::default();
    let mut reqs = Vec::new();
    for &(pid, insert) in script {
        let i = next.entry(pid).or_insert(0);
        *i += 1;
        let req = ReqRef { pid, index: *i };
        let (kind, result) = match (stack, insert) {
            (false, true) => {
                store.push_back(req);
                (ReqKind::Enq, None)
            }
            (true, true) => {
                store.push_back(req);
                (ReqKind::Push, None)
            }
            (false, false) => (ReqKind::Deq, Some(store.pop_front())),
            (true, false) => (ReqKind::Pop, Some(store.pop_back())),
        };
        let result = result.map(|r| r.map_or(Outcome::Bottom, |e| Outcome::Element(e.element())));
        reqs.push(Request {
            req,
            kind,
            result,
            issued: 0,
            completed: 0,
        });
    }
    valued(reqs, |i| i as u64)
}

fn arbitrary_history(stack: bool, script: &[(u64, bool, u64)], perm: u64) -> (History, Vec<ValuedRequest>) {
    let mut next: HashMap<u64, u64> = HashMap::new();
    let mut all: Vec<ReqRef> = Vec::new();
    let mut reqs = Vec::new();
    for &(pid, insert, pick) in script {
        let i = next.entry(pid).or_insert(0);
        *i += 1;
        let req = ReqRef { pid, index: *i };
        all.push(req);
        let kind = match (stack, insert) {
            (false, true) => ReqKind::Enq,
            (false, false) => ReqKind::Deq,
            (true, true) => ReqKind::Push,
            (true, false) => ReqKind::Pop,
        };
        let result = (!insert).then(|| match all.get(pick as usize) {
            Some(r) if *r != req => Outcome::Element(r.element()),
            _ => Outcome::Bottom,
        });
        reqs.push(Request {
            req,
            kind,
            result,
            issued: 0,
            completed: 0,
        });
    }
    let n = reqs.len().max(1) as u64;
    valued(reqs, |i| {
        (i as u64).wrapping_mul(perm | 1).wrapping_add(perm >> 7) % (n * 7919)
    })
}

fn valued(reqs: Vec<Request>, value: impl Fn(usize) -> u64) -> (History, Vec<ValuedRequest>) {
    let mut removed_by = HashMap::new();
    for r in &reqs {
        if let Some(e) = r.matched_insert() {
            removed_by.entry(e).or_insert(r.req);
        }
    }
    let mut order: Vec<ValuedRequest> = reqs
        .iter()
        .enumerate()
        .map(|(i, r)| ValuedRequest {
            req: r.req,
            kind: r.kind,
            value: Value {
                major: value(i),
                group: 1 << 31,
                minor: i as u64,
            },
            position: None,
            ticket: None,
            result: r.result,
            matched_with: if r.kind.is_insert() {
                removed_by.get(&r.req).copied()
            } else {
                r.matched_insert()
            },
            anchor_run: None,
        })
        .collect();
    order.sort_by_key(|v| v.value);
    let mut requests = reqs;
    requests.sort_by_key(|r| r.req);
    (History { requests }, order)
}

#[test]
fn small_protocol_traces_agree_with_the_oracle() {
    for seed in 0..40 {
        let mode = if seed % 2 == 0 {
            BatchKind::Queue
        } else {
            BatchKind::Stack
        };
        let mut sc = Scenario::new(3, mode, SchedulerPolicy::random(seed, 6), seed);
        sc.max_requests = 10;
        let w = drive(&sc);
        let h = History::from_trace(w.trace()).unwrap();
        let order = assign_values(&w.sink(), &h).unwrap();
        assert!(verify(mode, &order).is_ok());
        assert!(brute_force_exists(mode, &h), "seed {seed}");
    }
}
