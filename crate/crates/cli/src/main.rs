use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use ldbq::harness::{mode_name, sweep, ExperimentConfig};

/// Run queue and stack experiments on the simulated overlay and write one CSV
/// row per run. List-valued options (comma separated) expand into a sweep
/// over every combination.
#[derive(Parser, Debug)]
#[command(name = "ldbq", version)]
struct Args {
    /// Flat key=value file with the same keys as the flags. Flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Process count (list allowed).
    #[arg(long)]
    nodes: Option<String>,
    /// Rounds of workload injection.
    #[arg(long)]
    rounds: Option<String>,
    /// Requests per round, each at a uniformly random process.
    #[arg(long, conflicts_with = "gen_prob")]
    rate: Option<String>,
    /// Per-process, per-round request probability (list allowed).
    #[arg(long)]
    gen_prob: Option<String>,
    /// Probability that a request is an enqueue or push (list allowed).
    #[arg(long)]
    enqueue_prob: Option<String>,
    /// queue or stack (list allowed).
    #[arg(long)]
    mode: Option<String>,
    /// sync, async-random or async-adversarial.
    #[arg(long)]
    scheduler: Option<String>,
    /// Largest message delay for the asynchronous schedulers.
    #[arg(long)]
    max_delay: Option<String>,
    /// Seed (list allowed).
    #[arg(long)]
    seed: Option<String>,
    /// File with lines "round,join|leave,process_id".
    #[arg(long)]
    churn_script: Option<PathBuf>,
    #[arg(long)]
    update_alpha: Option<String>,
    /// on or off: run the consistency checker on every trace.
    #[arg(long)]
    check: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

const LISTS: [&str; 5] = ["nodes", "gen-prob", "enqueue-prob", "mode", "seed"];

fn expand(base: ExperimentConfig, opts: &[(&str, String)]) -> Result<Vec<ExperimentConfig>> {
    let mut configs = vec![base];
    for (key, value) in opts {
        let values: Vec<&str> = if LISTS.contains(key) {
            value.split(',').collect()
        } else {
            vec![value.as_str()]
        };
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for cfg in &configs {
            for v in &values {
                let mut c = cfg.clone();
                c.apply(key, v).with_context(|| format!("--{key}"))?;
                next.push(c);
            }
        }
        configs = next;
    }
    Ok(configs)
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut base = ExperimentConfig::default();
    let mut churn_path = None;
    let mut out = None;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, v) in base.apply_file(&text)? {
            if k == "out" {
                out = Some(PathBuf::from(v));
            } else {
                churn_path = Some(PathBuf::from(v));
            }
        }
    }
    churn_path = args.churn_script.clone().or(churn_path);
    out = args.out.clone().or(out);
    if let Some(path) = churn_path {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        base.apply("churn-script", &text)?;
    }

    let opts: Vec<(&str, String)> = [
        ("nodes", &args.nodes),
        ("rounds", &args.rounds),
        ("rate", &args.rate),
        ("gen-prob", &args.gen_prob),
        ("enqueue-prob", &args.enqueue_prob),
        ("mode", &args.mode),
        ("scheduler", &args.scheduler),
        ("max-delay", &args.max_delay),
        ("seed", &args.seed),
        ("update-alpha", &args.update_alpha),
        ("check", &args.check),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
    .collect();
    let configs = expand(base, &opts)?;

    let stats = match &out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            sweep(&configs, io::BufWriter::new(file))?
        }
        None => sweep(&configs, io::stdout().lock())?,
    };
    let mut err = io::stderr().lock();
    for (cfg, s) in configs.iter().zip(&stats) {
        writeln!(err, "n={} p={} {}: {s}", cfg.nodes, cfg.p(), mode_name(cfg.mode))?;
    }
    Ok(())
}
