//! The `icam` command line: `gen`, `train`, `solve`, `eval` and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command
//! that writes files also writes a run manifest next to them.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{bench_attention, evaluate, fit_slope, Mechanism, Method, ReferenceSpec};
use crate::instance::io::{load_instances, write_jsonl};
use crate::instance::{generate_set, CapacityRule, Problem};
use crate::model::{IcamModel, ModelConfig};
use crate::numeric::checkpoint;
use crate::rollout::{solve, RolloutMode};
use crate::train::{train, TrainingConfig};

pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "icam", version, about = "Instance-conditioned adaptation model for TSP and CVRP")]
struct Cli {
    /// Worker threads (default: ICAM_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate uniform random instances as JSON lines.
    Gen(GenArgs),
    /// Train a model with the three-stage schedule.
    Train(TrainArgs),
    /// Solve instances with a trained checkpoint.
    Solve(SolveArgs),
    /// Score a method against reference objectives.
    Eval(EvalArgs),
    /// Time and size AAFM against dot-product attention.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long)]
    problem: Problem,
    /// Cities (TSP) or customers (CVRP).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `by-scale`, `fixed:C` or `uniform:LO-HI` (CVRP only).
    #[arg(long, default_value = "by-scale")]
    capacity: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// TOML training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in schedule used when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Problem for the preset (ignored with --config).
    #[arg(long, default_value = "tsp")]
    problem: Problem,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON-lines instances or a CVRPLIB `.vrp` file.
    #[arg(long)]
    instances: PathBuf,
    /// `single`, `multi`, `sample` or `aug8`.
    #[arg(long, default_value = "multi")]
    mode: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Compatibility clip ξ of the checkpoint.
    #[arg(long, default_value_t = 50.0)]
    clip: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    instances: PathBuf,
    /// `icam`, `nn2opt` or `exact`.
    #[arg(long, default_value = "icam")]
    method: String,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Inference mode for `icam`.
    #[arg(long, default_value = "multi")]
    mode: String,
    #[arg(long, default_value_t = 50.0)]
    clip: f64,
    /// `exact`, `nn2opt`, `auto`, `file:PATH` or `auto:PATH`.
    #[arg(long = "ref", default_value = "auto")]
    reference: String,
    /// CSV report path; the summary goes to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a Markdown table.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    /// Comma-separated: `aafm`, `mha`.
    #[arg(long, default_value = "aafm,mha", value_delimiter = ',')]
    mechanism: Vec<String>,
    /// Embedding widths, comma-separated.
    #[arg(long, default_value = "128", value_delimiter = ',')]
    dims: Vec<usize>,
    /// Node counts, comma-separated.
    #[arg(long, default_value = "128,256,512,1024,2048", value_delimiter = ',')]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("ICAM_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn parse_capacity(s: &str) -> Result<CapacityRule> {
    let bad = || Error::Argument(format!("bad capacity rule {s:?} (by-scale, fixed:C, uniform:LO-HI)"));
    if s == "by-scale" {
        return Ok(CapacityRule::ByScale);
    }
    if let Some(c) = s.strip_prefix("fixed:") {
        return Ok(CapacityRule::Fixed {
            capacity: c.parse().map_err(|_| bad())?,
        });
    }
    if let Some(r) = s.strip_prefix("uniform:") {
        let (lo, hi) = r.split_once('-').ok_or_else(bad)?;
        return Ok(CapacityRule::Uniform {
            lo: lo.parse().map_err(|_| bad())?,
            hi: hi.parse().map_err(|_| bad())?,
        });
    }
    Err(bad())
}

fn load_model(path: &Path, clip: f64) -> Result<IcamModel> {
    let params = checkpoint::load(path)?;
    let cfg = ModelConfig {
        clip,
        ..ModelConfig::infer(&params)?
    };
    IcamModel::from_params(cfg, params)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let capacity = parse_capacity(&a.capacity)?;
    let mut m = RunManifest::begin("gen", &a, Some(a.seed), &a.out)?;
    let set = generate_set(a.problem, a.n, capacity, a.seed, a.count)?;
    write_jsonl(&a.out, &set)?;
    m.finish(vec![a.out.clone()])
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::preset(&a.preset, a.problem)?,
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.batches_per_epoch {
        cfg.batches_per_epoch = b;
    }
    cfg.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::file(&a.out, e))?;
    let mut m = RunManifest::begin("train", &cfg, Some(cfg.seed), &a.out.join("manifest.json"))?;
    let mut model = match &a.init {
        Some(p) => {
            let params = checkpoint::load(p)?;
            IcamModel::from_params(cfg.model.clone(), params)?
        }
        None => IcamModel::new(cfg.model.clone(), cfg.seed)?,
    };
    let total = cfg.total_epochs();
    let outcome = train(&cfg, &mut model, Some(&a.out), &mut |e| {
        println!(
            "epoch {}/{} stage {} length {:.4} loss {:.4e} ({:.1}s)",
            e.epoch, total, e.stage, e.mean_length, e.loss, e.seconds
        );
    })?;
    let mut outputs = vec![a.out.join("config.toml"), a.out.join("metrics.csv")];
    outputs.extend(outcome.checkpoints);
    m.finish(outputs)
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let mode: RolloutMode = a.mode.parse()?;
    let model = load_model(&a.ckpt, a.clip)?;
    let mut m = RunManifest::begin("solve", &a, a.seed, &a.out)?;
    let instances = load_instances(&a.instances)?;
    use rayon::prelude::*;
    let records = instances
        .par_iter()
        .map(|inst| solve(&model, inst, mode, a.seed))
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&a.out, &records)?;
    m.finish(vec![a.out.clone()])
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let method = match a.method.as_str() {
        "icam" => Method::Icam(a.mode.parse()?),
        "nn2opt" => Method::Nn2opt,
        "exact" => Method::Exact,
        other => return Err(Error::Argument(format!("unknown method {other:?} (icam, nn2opt, exact)"))),
    };
    let refs: ReferenceSpec = a.reference.parse()?;
    let model = match (&a.ckpt, method) {
        (Some(p), _) => Some(load_model(p, a.clip)?),
        (None, Method::Icam(_)) => return Err(Error::Argument("--method icam needs --ckpt".into())),
        (None, _) => None,
    };
    let mut manifest = match &a.out {
        Some(out) => Some(RunManifest::begin("eval", &a, None, out)?),
        None => None,
    };
    let instances = load_instances(&a.instances)?;
    let report = evaluate(&instances, method, model.as_ref(), &refs)?;
    println!(
        "{}: {} instances, mean objective {:.6}, mean gap {:.4}%, time {:.2}s",
        method.label(),
        report.rows.len(),
        report.mean_objective,
        report.mean_gap,
        report.total_seconds
    );
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        fs::write(out, report.to_csv()).map_err(|e| Error::file(out, e))?;
        outputs.push(out.clone());
    }
    if let Some(md) = &a.markdown {
        fs::write(md, report.to_markdown()).map_err(|e| Error::file(md, e))?;
        outputs.push(md.clone());
    }
    if let Some(m) = manifest.as_mut() {
        m.finish(outputs)?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mechs = a.mechanism.iter().map(|s| s.parse()).collect::<Result<Vec<Mechanism>>>()?;
    let mut manifest = match &a.out {
        Some(out) => Some(RunManifest::begin("bench", &a, Some(a.seed), out)?),
        None => None,
    };
    let mut csv = String::from("mechanism,n,d,seconds,peak_bytes\n");
    for &d in &a.dims {
        let records = bench_attention(&a.ns, d, a.repeats, &mechs, a.seed)?;
        for r in &records {
            csv.push_str(&format!("{},{},{},{:.6},{}\n", r.mechanism.label(), r.n, r.d, r.seconds, r.peak_bytes));
        }
        for &mech in &mechs {
            let rows: Vec<_> = records.iter().filter(|r| r.mechanism == mech).collect();
            if rows.len() >= 2 {
                let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
                let mem: Vec<f64> = rows.iter().map(|r| r.peak_bytes as f64).collect();
                let time: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
                println!(
                    "{} d={d}: memory slope {:.3}, time slope {:.3}",
                    mech.label(),
                    fit_slope(&ns, &mem),
                    fit_slope(&ns, &time)
                );
            }
        }
    }
    print!("{csv}");
    if let (Some(out), Some(m)) = (&a.out, manifest.as_mut()) {
        fs::write(out, &csv).map_err(|e| Error::file(out, e))?;
        m.finish(vec![out.clone()])?;
    }
    Ok(())
}
