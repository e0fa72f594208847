use ldbq::batch::{BatchKind, ReqKind};
use ldbq::checker::{assign_values, check_queue_lemmas, verify, History};
use ldbq::kernel::{EventKind, SchedulerPolicy};
use ldbq::world::{World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(mode: BatchKind, sched: SchedulerPolicy, n: usize, joins: usize, leaves: usize) -> World {
    let mut cfg = WorldConfig::default();
    cfg.protocol.mode = mode;
    cfg.scheduler = sched;
    let mut w = World::new(n, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (ins, rem) = match mode {
        BatchKind::Queue => (ReqKind::Enq, ReqKind::Deq),
        BatchKind::Stack => (ReqKind::Push, ReqKind::Pop),
    };
    for t in 0..60 {
        w.step_with(|w| {
            for p in w.issuers() {
                if rng.gen_bool(0.3) {
                    w.issue(p, if rng.gen_bool(0.5) { ins } else { rem });
                }
            }
            if t == 5 {
                for _ in 0..joins {
                    let m = w.members();
                    w.join(m[rng.gen_range(0..m.len())]);
                }
            }
            if t == 10 {
                for _ in 0..leaves {
                    let m = w.free_members();
                    w.leave(m[rng.gen_range(0..m.len())]);
                }
            }
        });
    }
    w.run_until_drained(20_000).expect("drain");
    assert_eq!(w.members().len(), n + joins - leaves);
    w
}

fn check(w: &World) {
    let issued = w.trace().iter().filter(|e| e.kind == EventKind::RequestIssued).count();
    let done = w
        .trace()
        .iter()
        .filter(|e| e.kind == EventKind::RequestCompleted)
        .count();
    assert_eq!(issued, done);
    w.audit().unwrap();
    let h = History::from_trace(w.trace()).unwrap();
    let kind = h.kind().unwrap();
    let order = assign_values(&w.sink(), &h).unwrap();
    if let Err(v) = verify(kind, &order) {
        panic!("{v}");
    }
    let bad = check_queue_lemmas(&w.sink(), &order);
    assert!(bad.is_empty(), "{}", bad[0]);
}

#[test]
fn static_queue_sync() {
    check(&run(BatchKind::Queue, SchedulerPolicy::synchronous(), 10, 0, 0));
}

#[test]
fn static_stack_async() {
    check(&run(BatchKind::Stack, SchedulerPolicy::random(3, 5), 10, 0, 0));
}

#[test]
fn churn_queue_sync() {
    check(&run(BatchKind::Queue, SchedulerPolicy::synchronous(), 10, 4, 3));
}

#[test]
fn churn_stack_async() {
    check(&run(BatchKind::Stack, SchedulerPolicy::random(5, 7), 12, 5, 4));
}
