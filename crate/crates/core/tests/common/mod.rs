#![allow(dead_code)]

use ldbq::batch::{BatchKind, ReqKind};
use ldbq::kernel::{LogLevel, SchedulerPolicy};
use ldbq::world::{World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A randomized run: requests at random processes plus scheduled churn.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub n: usize,
    pub mode: BatchKind,
    pub sched: SchedulerPolicy,
    pub seed: u64,
    pub rounds: u64,
    pub max_requests: usize,
    /// Per-process, per-round issue probability.
    pub issue_prob: f64,
    pub insert_prob: f64,
    pub joins: usize,
    pub leaves: usize,
    pub barrier: bool,
    /// Stack only: process 0 issues push, then pop and push, then pop, in
    /// three separate rounds `gaps` apart.
    pub pattern: Option<(u64, u64)>,
    pub log: LogLevel,
}

impl Scenario {
    pub fn new(n: usize, mode: BatchKind, sched: SchedulerPolicy, seed: u64) -> Scenario {
        Scenario {
            n,
            mode,
            sched,
            seed,
            rounds: 60,
            max_requests: 200,
            issue_prob: 0.3,
            insert_prob: 0.5,
            joins: 0,
            leaves: 0,
            barrier: true,
            pattern: None,
            log: LogLevel::Requests,
        }
    }
}

pub fn kinds(mode: BatchKind) -> (ReqKind, ReqKind) {
    match mode {
        BatchKind::Queue => (ReqKind::Enq, ReqKind::Deq),
        BatchKind::Stack => (ReqKind::Push, ReqKind::Pop),
    }
}

/// Builds and runs the scenario to quiescence. Without the stage-4 barrier,
/// gets that can never be served are answered with bottom at the end.
pub fn drive(sc: &Scenario) -> World {
    let mut cfg = WorldConfig {
        scheduler: sc.sched.clone(),
        hash_seed: sc.seed,
        log_level: sc.log,
        ..WorldConfig::default()
    };
    cfg.protocol.mode = sc.mode;
    cfg.protocol.stage4_barrier = sc.barrier;
    let mut w = World::new(sc.n, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0xd1ce);
    let (ins, rem) = kinds(sc.mode);
    let last = sc.rounds.max(2);
    let mut join_at: Vec<u64> = (0..sc.joins).map(|_| rng.gen_range(1..last)).collect();
    let mut leave_at: Vec<u64> = (0..sc.leaves).map(|_| rng.gen_range(1..last)).collect();
    join_at.sort_unstable();
    leave_at.sort_unstable();
    let mut issued = 0usize;
    let mut owed_leaves = 0usize;
    let mut t = 0u64;
    while t < sc.rounds || owed_leaves > 0 {
        t += 1;
        w.step_with(|w| {
            if let Some((x, y)) = sc.pattern {
                let plan: [(u64, &[ReqKind]); 3] = [(1, &[ins]), (1 + x, &[rem, ins]), (1 + x + y, &[rem])];
                for (r, ks) in plan {
                    if r == t {
                        for &k in ks {
                            w.issue(0, k);
                            issued += 1;
                        }
                    }
                }
            }
            if t <= sc.rounds {
                for p in w.issuers() {
                    if issued < sc.max_requests && rng.gen_bool(sc.issue_prob) {
                        w.issue(p, if rng.gen_bool(sc.insert_prob) { ins } else { rem });
                        issued += 1;
                    }
                }
                for _ in join_at.iter().filter(|&&r| r == t) {
                    let m = w.members();
                    w.join(m[rng.gen_range(0..m.len())]);
                }
                owed_leaves += leave_at.iter().filter(|&&r| r == t).count();
            }
            while owed_leaves > 0 {
                // Process 0 runs the scripted pattern and never leaves.
                let free: Vec<u64> = w
                    .free_members()
                    .into_iter()
                    .filter(|&p| sc.pattern.is_none() || p != 0)
                    .collect();
                if free.is_empty() || w.members().len() <= 1 {
                    break;
                }
                w.leave(free[rng.gen_range(0..free.len())]);
                owed_leaves -= 1;
            }
        });
        assert!(t < sc.rounds + 100_000, "leaves never became possible");
    }
    if w.run_until_drained(200_000).is_err() {
        assert!(!sc.barrier, "run with the barrier failed to quiesce");
        w.flush_parked();
        w.run_until_drained(200_000)
            .expect("quiesce after flushing parked gets");
    }
    w
}

/// Least-squares fit `y = a + b x`. Returns `(a, b, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (a, b, 1.0 - ss_res / ss_tot)
}

/// Least-squares fit through the origin `y = c x`. Returns `(c, r2)` with
/// the usual centered total sum of squares.
pub fn proportional_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let c = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / xs.iter().map(|x| x * x).sum::<f64>();
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - c * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (c, 1.0 - ss_res / ss_tot)
}
