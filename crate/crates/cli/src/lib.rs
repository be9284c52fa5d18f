//! Command implementations behind the `les` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use les_core::config::{Config, ConfigError};
use les_core::kernels::{KernelInputs, TunableKernel};
use les_core::model::{self, ModelError, RunOptions};
use les_core::perf::{self, PerfError};
use les_core::tuner::{self, Clock, SyntheticClock, TuneError, TuneSetup, TuningSpace, WallClock};
use les_core::verify::{self, VerifyError};
use les_core::{Executor, Schedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("verification failed: max relative difference {max_rel:.3e} exceeds {tol}")]
    Mismatch { max_rel: f64, tol: f64 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Model(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Model(ModelError::Grid(_) | ModelError::Halo { .. } | ModelError::Restart(_)) => EXIT_CONFIG,
            CliError::Tune(TuneError::EmptySpace | TuneError::Space { .. }) => EXIT_CONFIG,
            CliError::Mismatch { .. } => EXIT_VERIFY,
            CliError::Io { .. } | CliError::Verify(_) | CliError::Model(ModelError::Io { .. } | ModelError::Checkpoint(_)) => EXIT_CONFIG,
            _ => EXIT_USAGE,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "les", about = "Anelastic LES with schedule-driven kernels, tuning and scaling tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write profiles, timings and checkpoints.
    Run(RunArgs),
    /// Search a schedule space for one or more kernels.
    Tune(TuneArgs),
    /// Time every tunable kernel under the configured schedules.
    Bench(BenchArgs),
    /// Weak-scaling sweep over simulated ranks.
    Scale(ScaleArgs),
    /// Compare the profiles of two run directories.
    Verify(VerifyArgs),
}

/// Options shared by the commands that build a configuration.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Rank layout, e.g. `2x2`.
    #[arg(long, value_parser = parse_ranks)]
    pub ranks: Option<(usize, usize)>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// A file with a `[schedule]` section laid over the config.
    #[arg(long)]
    pub schedule_file: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub model_minutes: Option<f64>,
    #[arg(long)]
    pub spinup_steps: Option<u64>,
    /// Start from the checkpoint directory of an earlier run.
    #[arg(long)]
    pub restart: Option<PathBuf>,
    /// Let simulated ranks compute concurrently instead of one at a time.
    #[arg(long)]
    pub concurrent: bool,
}

#[derive(Debug, Args, Clone)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated kernel names.
    #[arg(long, default_value = "diffuse_scalars")]
    pub kernel: String,
    /// Space file; without it the standard 256-schedule space is used.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Scalar counts, one histogram block per value.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub scalars: Vec<usize>,
    /// Kernel extents `IxJxK`; defaults to the config grid.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize, usize)>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// Closed-form deterministic timings instead of the wall clock.
    #[arg(long)]
    pub synthetic_timer: bool,
}

#[derive(Debug, Args, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize, usize)>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Args, Clone)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 8)]
    pub max_ranks: usize,
    #[arg(long, default_value_t = 5)]
    pub steps: u64,
    /// Interleaved repetitions of the whole sweep.
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Args, Clone)]
pub struct VerifyArgs {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    /// Relative tolerance, e.g. 0.03.
    #[arg(long, default_value_t = 0.03)]
    pub tol: f64,
}

fn parse_ranks(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected PXxPY, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad rank count `{t}`"));
    Ok((p(a)?, p(b)?))
}

fn parse_size(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s.split(['x', 'X']).map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [i, j, k] if i > 0 && j > 0 && k > 0 => Ok((i, j, k)),
        _ => Err(format!("expected IxJxK, got `{s}`")),
    }
}

/// Config file, then schedule file, then command-line overrides.
pub fn load_config(c: &Common) -> Result<Config, CliError> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(p) = &c.schedule_file {
        let text = fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
        cfg = cfg.overlay(&text)?;
    }
    if let Some((px, py)) = c.ranks {
        cfg.px = px;
        cfg.py = py;
    }
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

pub fn cmd_run(a: &RunArgs) -> Result<model::RunOutcome, CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.steps {
        cfg.run.steps = Some(n);
    }
    if let Some(m) = a.model_minutes {
        cfg.run.model_minutes = m;
        if a.steps.is_none() {
            cfg.run.steps = None;
        }
    }
    if let Some(n) = a.spinup_steps {
        cfg.run.spinup_steps = n;
    }
    let opts = RunOptions { out_dir: a.common.out.clone(), restart: a.restart.clone(), device: "cpu".into(), exclusive: !a.concurrent };
    Ok(model::run(&cfg, &opts)?)
}

/// Result of a tuning command: per label, the winning schedule.
#[derive(Debug, Clone)]
pub struct TuneSummary {
    pub best: Vec<(String, TunableKernel, Option<Schedule>)>,
    pub records: usize,
}

pub fn cmd_tune(a: &TuneArgs) -> Result<TuneSummary, CliError> {
    let cfg = load_config(&a.common)?;
    let space = match &a.space {
        Some(p) => TuningSpace::parse(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => TuningSpace::standard(),
    };
    let kernels: Vec<TunableKernel> =
        a.kernel.split(',').map(|k| k.trim().parse::<TunableKernel>().map_err(CliError::Usage)).collect::<Result<_, _>>()?;
    if a.scalars.iter().any(|&n| n == 0) {
        return Err(CliError::Usage("--scalars values must be positive".into()));
    }
    let (ni, nj, nk) = a.size.unwrap_or((cfg.grid.itot, cfg.grid.jtot, cfg.grid.ktot));
    fs::create_dir_all(&a.common.out).map_err(io_err(&a.common.out))?;
    let exec = Executor::new(cfg.workers);
    let mut records = Vec::new();
    let mut defaults = Vec::new();
    let mut best = Vec::new();
    for &kernel in &kernels {
        let scalar_counts: Vec<usize> = if kernel.outputs(2) != 2 { vec![1] } else { a.scalars.clone() };
        let multi = scalar_counts.len() > 1;
        for n in scalar_counts {
            let inputs = KernelInputs::random(ni, nj, nk, n, cfg.run.seed);
            let label = if multi { format!("{}_n{n}", kernel.name()) } else { kernel.name().to_string() };
            let setup =
                TuneSetup { label: label.clone(), kernel, inputs: &inputs, exec: &exec, device: a.device.clone(), reps: a.reps, warmup: a.warmup };
            let mut wall = WallClock;
            let mut synth = SyntheticClock::new(cfg.run.seed);
            let clock: &mut dyn Clock = if a.synthetic_timer { &mut synth } else { &mut wall };
            let res = tuner::tune(&setup, &space, clock)?;
            let winner = res.best;
            match winner {
                Some(s) => println!("{label}: best {s}"),
                None => println!("{label}: no valid schedule"),
            }
            best.push((label, kernel, winner));
            records.extend(res.records);
            defaults.push(res.default);
        }
    }
    let out = &a.common.out;
    tuner::write_tuning_csv(&out.join("tuning.csv"), &records)?;
    tuner::write_histogram_csv(&out.join("histogram.csv"), &tuner::histogram(&records, &defaults, a.bins))?;
    let path = out.join("best_schedule.cfg");
    fs::write(&path, best_schedule_file(&best)).map_err(io_err(&path))?;
    Ok(TuneSummary { best, records: records.len() })
}

/// Loadable `[schedule]` section; for multi-block kernels the last block wins
/// and the other blocks are listed as comments.
fn best_schedule_file(best: &[(String, TunableKernel, Option<Schedule>)]) -> String {
    let mut comments = String::new();
    let mut chosen: Vec<(String, Schedule)> = Vec::new();
    for (label, kernel, sched) in best {
        let Some(s) = sched else { continue };
        if label != kernel.name() {
            comments += &format!("# {label} = {s}\n");
        }
        chosen.retain(|(k, _)| k != kernel.name());
        chosen.push((kernel.name().to_string(), *s));
    }
    comments + &tuner::best_schedule_text(&chosen)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    let (ni, nj, nk) = a.size.unwrap_or((cfg.grid.itot, cfg.grid.jtot, cfg.grid.ktot));
    fs::create_dir_all(&a.common.out).map_err(io_err(&a.common.out))?;
    let exec = Executor::new(cfg.workers);
    let inputs = KernelInputs::random(ni, nj, nk, cfg.run.n_scalars, cfg.run.seed);
    let mut records = Vec::new();
    for kernel in TunableKernel::ALL {
        let sched = cfg.schedules.get(kernel.name());
        let mut out = inputs.outputs(kernel);
        let mut call = || inputs.run(kernel, &exec, &sched, &mut out).expect("configured schedules are validated");
        sched.validate_for(ni, nj, nk).map_err(|e| CliError::Usage(format!("{}: {e}", kernel.name())))?;
        let r = tuner::benchmark(kernel.name(), &sched, &a.device, inputs.cells(), a.reps, 1, &mut WallClock, &mut call);
        println!("{:<18} {:>12.1} us/call/Mcells  {sched}", kernel.name(), r.metric());
        records.push(r);
    }
    tuner::write_tuning_csv(&a.common.out.join("bench.csv"), &records)?;
    Ok(())
}

pub fn cmd_scale(a: &ScaleArgs) -> Result<Vec<perf::ScalingRow>, CliError> {
    let cfg = load_config(&a.common)?;
    if a.max_ranks == 0 {
        return Err(CliError::Usage("--max-ranks must be positive".into()));
    }
    let ns: Vec<usize> = std::iter::successors(Some(1usize), |n| Some(n * 2)).take_while(|&n| n <= a.max_ranks).collect();
    let reports = model::scale(&cfg, &ns, a.steps, a.rounds, &a.device)?;
    let cells = reports[0].1.cells;
    if let Some((n, r)) = reports.iter().find(|(_, r)| r.cells != cells) {
        return Err(CliError::Usage(format!("per-rank cells changed at N={n}: {} vs {cells}", r.cells)));
    }
    let runs: Vec<(usize, Vec<(String, f64)>)> = reports.iter().map(|(n, r)| (*n, r.metrics())).collect();
    let rows = perf::weak_scaling(&runs)?;
    fs::create_dir_all(&a.common.out).map_err(io_err(&a.common.out))?;
    perf::write_scaling(&a.common.out.join("scaling.csv"), &rows)?;
    for r in &rows {
        println!("{:<16} N={:<3} {:>12.1} {:>6.3}", r.component, r.n, r.metric, r.efficiency);
    }
    Ok(rows)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<verify::CompareReport, CliError> {
    let pa = verify::read_profiles(&a.run_a.join("profiles.csv"))?;
    let pb = verify::read_profiles(&a.run_b.join("profiles.csv"))?;
    let report = verify::compare(&pa, &pb, a.tol)?;
    println!("{report}");
    if !report.pass() {
        return Err(CliError::Mismatch { max_rel: report.max_rel(), tol: a.tol });
    }
    Ok(report)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|o| println!("{} steps to t = {:.1} s, poisson residual {:.2e}", o.steps, o.time, o.residual)),
        Command::Tune(a) => cmd_tune(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a),
        Command::Scale(a) => cmd_scale(a).map(|_| ()),
        Command::Verify(a) => cmd_verify(a).map(|_| ()),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_size_flags() {
        assert_eq!(parse_ranks("2x2"), Ok((2, 2)));
        assert!(parse_ranks("2").is_err());
        assert!(parse_ranks("0x1").is_err());
        assert_eq!(parse_size("8x6x4"), Ok((8, 6, 4)));
        assert!(parse_size("8x6").is_err());
    }
}
