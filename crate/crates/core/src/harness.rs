//! Experiment configuration, workload generation and run statistics.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::{BatchKind, ReqKind};
use crate::checker::{self, CheckError, LemmaViolation, Violation};
use crate::kernel::{LivenessFailure, LogLevel, SchedulerMode, SchedulerPolicy};
use crate::world::{World, WorldConfig};

/// How requests are injected each round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Workload {
    /// This many requests per round, each at a uniformly random process.
    Rate(u64),
    /// Every process issues one request per round with this probability.
    GenProb(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChurnAction {
    /// A new process joins through the given member.
    Join,
    /// The given member leaves.
    Leave,
}

/// One line of a churn script: `round,join|leave,process_id`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChurnEvent {
    pub round: u64,
    pub action: ChurnAction,
    pub process: u64,
}

impl FromStr for ChurnEvent {
    type Err = HarnessError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Parse(format!("bad churn line {line:?}"));
        let mut it = line.split(',').map(str::trim);
        let round = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let action = match it.next() {
            Some("join") => ChurnAction::Join,
            Some("leave") => ChurnAction::Leave,
            _ => return Err(bad()),
        };
        let process = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(ChurnEvent { round, action, process })
    }
}

/// Parses a churn script, skipping blank lines and `#` comments.
pub fn parse_churn(text: &str) -> Result<Vec<ChurnEvent>, HarnessError> {
    let mut v: Vec<ChurnEvent> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    v.sort_by_key(|e| e.round);
    Ok(v)
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Liveness(#[from] LivenessFailure),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("consistency violation: {0}")]
    Violation(Violation),
    #[error("lemma violation: {0}")]
    Lemma(LemmaViolation),
    #[error("churn script: {0}")]
    Churn(String),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub nodes: usize,
    pub rounds: u64,
    pub workload: Workload,
    /// Probability that a request is an enqueue or push.
    pub enqueue_prob: f64,
    pub mode: BatchKind,
    pub scheduler: SchedulerMode,
    /// Largest delivery delay for the asynchronous schedulers.
    pub max_delay: u64,
    pub seed: u64,
    pub churn: Vec<ChurnEvent>,
    pub update_alpha: f64,
    /// Run the consistency checker on the trace before reporting.
    pub check: bool,
    /// Steps allowed after the workload for the network to quiesce.
    pub drain_limit: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nodes: 50,
            rounds: 1000,
            workload: Workload::Rate(10),
            enqueue_prob: 0.5,
            mode: BatchKind::Queue,
            scheduler: SchedulerMode::Synchronous,
            max_delay: 4,
            seed: 0,
            churn: Vec::new(),
            update_alpha: 0.0,
            check: true,
            drain_limit: 1_000_000,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Parse(format!("bad value {value:?} for {key}")))
}

fn parse_prob(key: &str, value: &str) -> Result<f64, HarnessError> {
    let p: f64 = parse_num(key, value)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(HarnessError::Parse(format!("{key} must lie in [0, 1]")));
    }
    Ok(p)
}

pub fn parse_mode(s: &str) -> Result<BatchKind, HarnessError> {
    match s.trim() {
        "queue" => Ok(BatchKind::Queue),
        "stack" => Ok(BatchKind::Stack),
        other => Err(HarnessError::Parse(format!("unknown mode {other:?}"))),
    }
}

pub fn mode_name(m: BatchKind) -> &'static str {
    match m {
        BatchKind::Queue => "queue",
        BatchKind::Stack => "stack",
    }
}

impl ExperimentConfig {
    /// Sets one option by its flag name (without dashes). The churn script is
    /// passed as text, not as a path.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key.trim().replace('_', "-").as_str() {
            "nodes" => self.nodes = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "rate" => self.workload = Workload::Rate(parse_num(key, value)?),
            "gen-prob" => self.workload = Workload::GenProb(parse_prob(key, value)?),
            "enqueue-prob" => self.enqueue_prob = parse_prob(key, value)?,
            "mode" => self.mode = parse_mode(value)?,
            "scheduler" => self.scheduler = value.trim().parse().map_err(HarnessError::Parse)?,
            "max-delay" => self.max_delay = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "update-alpha" => self.update_alpha = parse_num(key, value)?,
            "drain-limit" => self.drain_limit = parse_num(key, value)?,
            "check" => {
                self.check = match value.trim() {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    v => return Err(HarnessError::Parse(format!("check must be on or off, not {v:?}"))),
                }
            }
            "churn-script" => self.churn = parse_churn(value)?,
            other => return Err(HarnessError::Parse(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file. Blank lines and `#` comments are
    /// skipped. A `churn-script` entry names a file read by the caller.
    pub fn apply_file(&mut self, text: &str) -> Result<Vec<(String, String)>, HarnessError> {
        let mut deferred = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Parse(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.replace('_', "-") == "churn-script" || k == "out" {
                deferred.push((k.to_string(), v.to_string()));
            } else {
                self.apply(k, v)?;
            }
        }
        Ok(deferred)
    }

    pub fn p(&self) -> f64 {
        self.enqueue_prob
    }

    fn policy(&self) -> SchedulerPolicy {
        match self.scheduler {
            SchedulerMode::Synchronous => SchedulerPolicy::synchronous(),
            SchedulerMode::AsyncRandom => SchedulerPolicy::random(self.seed, self.max_delay.max(1)),
            SchedulerMode::AsyncAdversarial => {
                SchedulerPolicy::scripted(self.seed, adversarial_script(self.seed, 1 << 16, self.max_delay.max(1)))
            }
        }
    }
}

/// Delays that alternate bursts of slow and fast messages, so later messages
/// regularly overtake earlier ones.
pub fn adversarial_script(seed: u64, len: usize, max_delay: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ad5e);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let burst = rng.gen_range(1..=8);
        let slow = rng.gen_bool(0.5);
        for _ in 0..burst {
            out.push(if slow { max_delay } else { 1 });
        }
    }
    out.truncate(len);
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub requests: usize,
    /// Rounds from issue to completion, per request.
    pub latencies: Vec<u64>,
    pub mean_rounds: f64,
    pub p50: u64,
    pub p95: u64,
    pub max_batch_len: usize,
    /// Length in rounds of every update phase.
    pub update_phase_rounds: Vec<u64>,
    /// Stored elements per integrated virtual node at quiescence.
    pub loads: Vec<usize>,
    /// Step at which the network quiesced.
    pub final_step: u64,
}

impl RunStats {
    pub fn max_update_phase_rounds(&self) -> u64 {
        self.update_phase_rounds.iter().copied().max().unwrap_or(0)
    }
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn stats_of(w: &World) -> RunStats {
    let sink = w.sink();
    let mut lat: Vec<u64> = sink.latencies.iter().map(|&(_, i, c)| c - i).collect();
    lat.sort_unstable();
    let mean = if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<u64>() as f64 / lat.len() as f64
    };
    RunStats {
        requests: lat.len(),
        mean_rounds: mean,
        p50: percentile(&lat, 0.5),
        p95: percentile(&lat, 0.95),
        latencies: lat,
        max_batch_len: sink.max_batch_len,
        update_phase_rounds: sink.update_phases.iter().map(|&(s, e)| e - s).collect(),
        loads: w.loads().into_iter().map(|(_, l)| l).collect(),
        final_step: w.now(),
    }
}

/// Runs the configured experiment to quiescence. Also returns the world for
/// inspection of the trace and lineage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunStats, World), HarnessError> {
    let mut wc = WorldConfig {
        scheduler: cfg.policy(),
        hash_seed: cfg.seed,
        log_level: LogLevel::Requests,
        ..WorldConfig::default()
    };
    wc.protocol.mode = cfg.mode;
    wc.protocol.update_alpha = cfg.update_alpha;
    wc.protocol.lineage = cfg.check;
    let mut w = World::new(cfg.nodes, wc);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x1d);
    let (ins, rem) = match cfg.mode {
        BatchKind::Queue => (ReqKind::Enq, ReqKind::Deq),
        BatchKind::Stack => (ReqKind::Push, ReqKind::Pop),
    };
    let mut churn: VecDeque<ChurnEvent> = cfg.churn.iter().copied().collect();
    let mut postponed: Vec<u64> = Vec::new();
    let mut err = None;
    for round in 1..=cfg.rounds {
        w.step_with(|w| {
            let issuers = w.issuers();
            match cfg.workload {
                Workload::Rate(k) => {
                    for _ in 0..k {
                        let p = issuers[rng.gen_range(0..issuers.len())];
                        w.issue(p, if rng.gen_bool(cfg.enqueue_prob) { ins } else { rem });
                    }
                }
                Workload::GenProb(g) => {
                    for p in issuers {
                        if rng.gen_bool(g) {
                            w.issue(p, if rng.gen_bool(cfg.enqueue_prob) { ins } else { rem });
                        }
                    }
                }
            }
            while churn.front().is_some_and(|e| e.round <= round) {
                let e = churn.pop_front().unwrap();
                match e.action {
                    ChurnAction::Join if w.is_member(e.process) => {
                        w.join(e.process);
                    }
                    ChurnAction::Leave if w.is_member(e.process) => postponed.push(e.process),
                    _ => err = Some(format!("round {}: process {} is not a member", e.round, e.process)),
                }
            }
            // A leave waits while its process is the entry of a pending join.
            let free = w.free_members();
            postponed.retain(|&p| {
                if free.contains(&p) && w.members().len() > 1 {
                    w.leave(p);
                    false
                } else {
                    true
                }
            });
        });
        if let Some(e) = err.take() {
            return Err(HarnessError::Churn(e));
        }
    }
    let limit = w.now() + cfg.drain_limit;
    while !postponed.is_empty() {
        if w.now() >= limit {
            return Err(HarnessError::Churn(format!(
                "leaves of {postponed:?} never became possible"
            )));
        }
        w.step_with(|w| {
            let free = w.free_members();
            postponed.retain(|&p| {
                if free.contains(&p) {
                    w.leave(p);
                    false
                } else {
                    true
                }
            });
        });
    }
    w.run_until_drained(limit.saturating_sub(w.now()))?;
    if cfg.check {
        check_world(&w)?;
    }
    Ok((stats_of(&w), w))
}

/// Runs the consistency checker and the queue lemmas on a finished world.
pub fn check_world(w: &World) -> Result<(), HarnessError> {
    let h = checker::History::from_trace(w.trace())?;
    let kind = w.env().cfg.mode;
    let sink = w.sink();
    let order = checker::assign_values(&sink, &h)?;
    checker::verify(kind, &order).map_err(HarnessError::Violation)?;
    if let Some(v) = checker::check_queue_lemmas(&sink, &order).into_iter().next() {
        return Err(HarnessError::Lemma(v));
    }
    Ok(())
}

pub const CSV_HEADER: [&str; 10] = [
    "n",
    "p",
    "mode",
    "scheduler",
    "seed",
    "mean_rounds",
    "p50",
    "p95",
    "max_batch_len",
    "max_update_phase_rounds",
];

/// One CSV row for a finished run.
pub fn csv_row(cfg: &ExperimentConfig, s: &RunStats) -> Vec<String> {
    vec![
        cfg.nodes.to_string(),
        cfg.p().to_string(),
        mode_name(cfg.mode).to_string(),
        cfg.scheduler.to_string(),
        cfg.seed.to_string(),
        format!("{:.4}", s.mean_rounds),
        s.p50.to_string(),
        s.p95.to_string(),
        s.max_batch_len.to_string(),
        s.max_update_phase_rounds().to_string(),
    ]
}

/// Runs every config and writes one CSV row per run, in order.
pub fn sweep<W: std::io::Write>(configs: &[ExperimentConfig], out: W) -> Result<Vec<RunStats>, HarnessError> {
    let mut wr = csv::Writer::from_writer(out);
    let io = |e: csv::Error| HarnessError::Parse(e.to_string());
    wr.write_record(CSV_HEADER).map_err(io)?;
    let mut all = Vec::with_capacity(configs.len());
    for cfg in configs {
        let (s, _) = run_experiment(cfg)?;
        wr.write_record(csv_row(cfg, &s)).map_err(io)?;
        all.push(s);
    }
    wr.flush().map_err(|e| HarnessError::Parse(e.to_string()))?;
    Ok(all)
}

impl fmt::Display for RunStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} requests, mean {:.2} rounds (p50 {}, p95 {}), max batch length {}, {} update phases (longest {} rounds)",
            self.requests,
            self.mean_rounds,
            self.p50,
            self.p95,
            self.max_batch_len,
            self.update_phase_rounds.len(),
            self.max_update_phase_rounds()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn churn_lines_parse() {
        let v = parse_churn("# script\n5,join,0\n\n3, leave ,2\n").unwrap();
        assert_eq!(
            v,
            vec![
                ChurnEvent {
                    round: 3,
                    action: ChurnAction::Leave,
                    process: 2
                },
                ChurnEvent {
                    round: 5,
                    action: ChurnAction::Join,
                    process: 0
                },
            ]
        );
        assert!(parse_churn("1,move,3").is_err());
    }

    #[test]
    fn config_file_keys_match_flags() {
        let mut c = ExperimentConfig::default();
        let rest = c
            .apply_file("nodes=7\nmode=stack\ngen-prob=0.25\nenqueue_prob=1\ncheck=off\nout=x.csv\n")
            .unwrap();
        assert_eq!(c.nodes, 7);
        assert_eq!(c.mode, BatchKind::Stack);
        assert_eq!(c.workload, Workload::GenProb(0.25));
        assert_eq!(c.enqueue_prob, 1.0);
        assert!(!c.check);
        assert_eq!(rest, vec![("out".to_string(), "x.csv".to_string())]);
        assert!(c.apply("enqueue-prob", "1.5").is_err());
        assert!(c.apply("colour", "red").is_err());
    }

    #[test]
    fn zero_rate_is_quiet() {
        let cfg = ExperimentConfig {
            nodes: 4,
            rounds: 5,
            workload: Workload::Rate(0),
            ..ExperimentConfig::default()
        };
        let (s, _) = run_experiment(&cfg).unwrap();
        assert_eq!(s.requests, 0);
        assert_eq!(s.mean_rounds, 0.0);
        assert_eq!(s.final_step, 5);
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let v: Vec<u64> = (1..=20).collect();
        assert_eq!(percentile(&v, 0.5), 10);
        assert_eq!(percentile(&v, 0.95), 19);
        assert_eq!(percentile(&[], 0.5), 0);
    }

    #[test]
    fn sweep_writes_one_row_per_config() {
        let base = ExperimentConfig {
            nodes: 3,
            rounds: 3,
            workload: Workload::Rate(2),
            ..ExperimentConfig::default()
        };
        let cfgs = vec![base.clone(), ExperimentConfig { seed: 1, ..base }];
        let mut buf = Vec::new();
        sweep(&cfgs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER.join(","));
    }
}
