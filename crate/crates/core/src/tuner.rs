//! Exhaustive schedule tuning: space enumeration, repeated timing behind an
//! output-hash gate, histograms and cross-device transfer analysis.

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::kernels::{output_hash, KernelInputs, TunableKernel};
use crate::sched::{ExecError, Executor, ScalarMode, Schedule};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("tuning space file is empty")]
    EmptySpace,
    #[error("space line {line}: {msg}")]
    Space { line: usize, msg: String },
    #[error("tuning space enumerates no valid schedule")]
    NoSchedules,
    #[error("{0}")]
    Exec(#[from] ExecError),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("record sets cover different schedules")]
    Mismatch,
}

/// A predicate every enumerated schedule must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// `collapse <= max` whenever the scalar mode is `mode`.
    MaxCollapse(ScalarMode, u32),
    /// `collapse >= min` whenever the scalar mode is `mode`.
    MinCollapse(ScalarMode, u32),
    /// tile and manual_tile are never both set.
    ExclusiveTiles,
}

impl Constraint {
    pub fn allows(&self, s: &Schedule) -> bool {
        match *self {
            Constraint::MaxCollapse(m, max) => s.scalar_mode != m || s.collapse <= max,
            Constraint::MinCollapse(m, min) => s.scalar_mode != m || s.collapse >= min,
            Constraint::ExclusiveTiles => !(s.tile.is_some() && s.manual_tile.is_some()),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::MaxCollapse(m, v) => write!(f, "max_collapse {m} {v}"),
            Constraint::MinCollapse(m, v) => write!(f, "min_collapse {m} {v}"),
            Constraint::ExclusiveTiles => write!(f, "exclusive_tiles"),
        }
    }
}

/// Candidate values per schedule parameter plus constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSpace {
    pub lane_width: Vec<u32>,
    pub team_count: Vec<Option<u32>>,
    pub collapse: Vec<u32>,
    pub scalar_mode: Vec<ScalarMode>,
    pub tile: Vec<Option<[usize; 3]>>,
    pub manual_tile: Vec<Option<[usize; 2]>>,
    pub split_k1: Vec<bool>,
    pub constraints: Vec<Constraint>,
}

impl Default for TuningSpace {
    /// The single default schedule.
    fn default() -> Self {
        let d = Schedule::default();
        TuningSpace {
            lane_width: vec![d.lane_width],
            team_count: vec![d.team_count],
            collapse: vec![d.collapse],
            scalar_mode: vec![d.scalar_mode],
            tile: vec![None],
            manual_tile: vec![None],
            split_k1: vec![false],
            constraints: vec![Constraint::ExclusiveTiles],
        }
    }
}

impl TuningSpace {
    /// 8 lane widths x 8 team counts x 4 loop-nest shapes = 256 schedules.
    ///
    /// The nest shapes are sequential scalars with collapse 2 or 3 (collapse 4
    /// equals 3 on a 3-deep nest) and collapsed scalars with collapse 3 or 4.
    pub fn standard() -> TuningSpace {
        TuningSpace {
            lane_width: vec![16, 32, 64, 128, 192, 256, 384, 512],
            team_count: [256, 512, 1024, 2048, 4096, 8192, 16384, 65535].into_iter().map(Some).collect(),
            collapse: vec![2, 3, 4],
            scalar_mode: vec![ScalarMode::Sequential, ScalarMode::Collapsed],
            tile: vec![None],
            manual_tile: vec![None],
            split_k1: vec![false],
            constraints: vec![
                Constraint::ExclusiveTiles,
                Constraint::MaxCollapse(ScalarMode::Sequential, 3),
                Constraint::MinCollapse(ScalarMode::Collapsed, 3),
            ],
        }
    }

    /// The filtered Cartesian product, lexicographic in field order.
    pub fn enumerate(&self) -> Vec<Schedule> {
        let mut out = Vec::new();
        for &lane_width in &self.lane_width {
            for &team_count in &self.team_count {
                for &collapse in &self.collapse {
                    for &scalar_mode in &self.scalar_mode {
                        for &tile in &self.tile {
                            for &manual_tile in &self.manual_tile {
                                for &split_k1 in &self.split_k1 {
                                    let s = Schedule { team_count, lane_width, collapse, tile, manual_tile, scalar_mode, split_k1 };
                                    if s.validate().is_ok() && self.constraints.iter().all(|c| c.allows(&s)) {
                                        out.push(s);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Parses a space file: `key = v1, v2, ...` per parameter and
    /// `constraint = ...` lines. Parameters not mentioned keep the default
    /// schedule's value; a file without any setting is an error.
    pub fn parse(text: &str) -> Result<TuningSpace, TuneError> {
        let mut space = TuningSpace::default();
        let mut any = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TuneError::Space { line: n + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = values`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if items.is_empty() {
                return Err(err(format!("no values for `{key}`")));
            }
            let parse_sched = |item: &str, k: &str| -> Result<Schedule, TuneError> {
                format!("{k}={item}").parse::<Schedule>().map_err(|e| err(e.to_string()))
            };
            any = true;
            match key {
                "lane_width" => space.lane_width = items.iter().map(|i| parse_sched(i, key).map(|s| s.lane_width)).collect::<Result<_, _>>()?,
                "team_count" => space.team_count = items.iter().map(|i| parse_sched(i, key).map(|s| s.team_count)).collect::<Result<_, _>>()?,
                "collapse" => space.collapse = items.iter().map(|i| parse_sched(i, key).map(|s| s.collapse)).collect::<Result<_, _>>()?,
                "scalar_mode" => space.scalar_mode = items.iter().map(|i| parse_sched(i, key).map(|s| s.scalar_mode)).collect::<Result<_, _>>()?,
                "tile" => {
                    space.tile = items
                        .iter()
                        .map(|i| if *i == "none" { Ok(None) } else { parse_sched(i, key).map(|s| s.tile) })
                        .collect::<Result<_, _>>()?
                }
                "manual_tile" => {
                    space.manual_tile = items
                        .iter()
                        .map(|i| if *i == "none" { Ok(None) } else { parse_sched(i, key).map(|s| s.manual_tile) })
                        .collect::<Result<_, _>>()?
                }
                "split_k1" => space.split_k1 = items.iter().map(|i| parse_sched(i, key).map(|s| s.split_k1)).collect::<Result<_, _>>()?,
                "constraint" => {
                    let words: Vec<&str> = value.split_whitespace().collect();
                    let c = match words.as_slice() {
                        ["exclusive_tiles"] => Constraint::ExclusiveTiles,
                        [kind @ ("max_collapse" | "min_collapse"), mode, v] => {
                            let mode: ScalarMode = mode.parse().map_err(|e: crate::sched::ScheduleError| err(e.to_string()))?;
                            let v: u32 = v.parse().map_err(|_| err(format!("bad collapse bound `{v}`")))?;
                            if *kind == "max_collapse" {
                                Constraint::MaxCollapse(mode, v)
                            } else {
                                Constraint::MinCollapse(mode, v)
                            }
                        }
                        _ => return Err(err(format!("unknown constraint `{value}`"))),
                    };
                    if !space.constraints.contains(&c) {
                        space.constraints.push(c);
                    }
                }
                other => return Err(err(format!("unknown parameter `{other}`"))),
            }
        }
        if !any {
            return Err(TuneError::EmptySpace);
        }
        Ok(space)
    }
}

/// Source of per-call timings.
pub trait Clock {
    /// Time in µs of one call of `call`.
    fn sample(&mut self, kernel: &str, sched: &Schedule, rep: usize, call: &mut dyn FnMut()) -> f64;
    /// An untimed warm-up call.
    fn warm(&mut self, call: &mut dyn FnMut()) {
        call();
    }
}

/// Monotonic wall clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct WallClock;

impl Clock for WallClock {
    fn sample(&mut self, _: &str, _: &Schedule, _: usize, call: &mut dyn FnMut()) -> f64 {
        let t0 = Instant::now();
        call();
        t0.elapsed().as_secs_f64() * 1e6
    }
}

/// Deterministic timings from a closed-form cost model; the call is not run.
///
/// The minimum is at lane_width 64, team_count 2048, collapsed scalars with
/// collapse 3, no tiles, no surface split. Costs grow quadratically in the
/// log2 distance from the optimum; per-sample noise is below 0.5 µs, far
/// smaller than the cost of one step away from the optimum.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticClock {
    pub seed: u64,
    pub base_us: f64,
}

impl SyntheticClock {
    pub fn new(seed: u64) -> SyntheticClock {
        SyntheticClock { seed, base_us: 100.0 }
    }

    pub fn optimum() -> Schedule {
        Schedule { lane_width: 64, team_count: Some(2048), collapse: 3, scalar_mode: ScalarMode::Collapsed, ..Schedule::default() }
    }

    pub fn cost(&self, s: &Schedule) -> f64 {
        let l = (s.lane_width as f64 / 64.0).log2();
        let t = s.team_count.map_or(1.5, |t| (t as f64 / 2048.0).log2());
        let nest = match (s.scalar_mode, s.collapse) {
            (ScalarMode::Collapsed, 3) => 0.0,
            (ScalarMode::Collapsed, 4) => 0.15,
            (ScalarMode::Collapsed, _) => 0.4,
            (ScalarMode::Sequential, 3) => 0.25,
            (ScalarMode::Sequential, _) => 0.35,
        };
        let tiles = if s.tile.is_some() { 0.1 } else { 0.0 } + if s.manual_tile.is_some() { 0.12 } else { 0.0 };
        let split = if s.split_k1 { 0.02 } else { 0.0 };
        self.base_us * (1.0 + 0.05 * l * l + 0.03 * t * t + nest + tiles + split)
    }
}

impl Clock for SyntheticClock {
    fn sample(&mut self, kernel: &str, sched: &Schedule, rep: usize, _: &mut dyn FnMut()) -> f64 {
        let mut h = DefaultHasher::new();
        (self.seed, kernel, sched.to_string(), rep).hash(&mut h);
        let noise = (h.finish() >> 11) as f64 / (1u64 << 53) as f64 * 0.5;
        self.cost(sched) + noise
    }
    fn warm(&mut self, _: &mut dyn FnMut()) {}
}

/// Timings of one schedule of one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub kernel: String,
    pub schedule: Schedule,
    pub device: String,
    /// Per-call wall times [µs]; empty for schedules that never ran.
    pub samples: Vec<f64>,
    pub cells: usize,
    pub valid: bool,
}

impl TimingRecord {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean time per call per million cells.
    pub fn metric(&self) -> f64 {
        self.mean() / (self.cells as f64 / 1e6)
    }

    pub fn sample_metric(&self, rep: usize) -> f64 {
        self.samples[rep] / (self.cells as f64 / 1e6)
    }
}

/// `warmup` untimed calls followed by `reps` timed ones.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    kernel: &str,
    sched: &Schedule,
    device: &str,
    cells: usize,
    reps: usize,
    warmup: usize,
    clock: &mut dyn Clock,
    call: &mut dyn FnMut(),
) -> TimingRecord {
    for _ in 0..warmup {
        clock.warm(call);
    }
    let samples = (0..reps).map(|rep| clock.sample(kernel, sched, rep, call)).collect();
    TimingRecord { kernel: kernel.into(), schedule: *sched, device: device.into(), samples, cells, valid: true }
}

/// Settings of one tuning run.
pub struct TuneSetup<'a> {
    /// Label used for the kernel column and histogram block.
    pub label: String,
    pub kernel: TunableKernel,
    pub inputs: &'a KernelInputs,
    pub exec: &'a Executor,
    pub device: String,
    pub reps: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: Option<Schedule>,
    pub records: Vec<TimingRecord>,
    /// The default schedule's record, for histogram markers.
    pub default: TimingRecord,
    pub reference_hash: u64,
}

impl TuneResult {
    pub fn best_record(&self) -> Option<&TimingRecord> {
        let best = self.best?;
        self.records.iter().find(|r| r.schedule == best)
    }
}

/// Benchmarks every schedule of `space`. A schedule is valid only if it fits
/// the kernel extents and its output hash equals the sequential reference;
/// invalid schedules are recorded without samples and never win.
pub fn tune(setup: &TuneSetup, space: &TuningSpace, clock: &mut dyn Clock) -> Result<TuneResult, TuneError> {
    let schedules = space.enumerate();
    if schedules.is_empty() {
        return Err(TuneError::NoSchedules);
    }
    let inputs = setup.inputs;
    let mut out = inputs.outputs(setup.kernel);
    inputs.run_reference(setup.kernel, &mut out)?;
    let reference_hash = output_hash(&out);
    let s = inputs.shape();
    let cells = inputs.cells();
    let mut one = |sched: &Schedule, clock: &mut dyn Clock| -> TimingRecord {
        let invalid = || TimingRecord {
            kernel: setup.label.clone(),
            schedule: *sched,
            device: setup.device.clone(),
            samples: Vec::new(),
            cells,
            valid: false,
        };
        if sched.validate_for(s.imax, s.jmax, s.ktot).is_err() {
            return invalid();
        }
        for f in out.iter_mut() {
            f.fill(0.0);
        }
        if inputs.run(setup.kernel, setup.exec, sched, &mut out).is_err() || output_hash(&out) != reference_hash {
            return invalid();
        }
        let mut call = || {
            inputs.run(setup.kernel, setup.exec, sched, &mut out).expect("schedule validated above");
        };
        benchmark(&setup.label, sched, &setup.device, cells, setup.reps, setup.warmup, clock, &mut call)
    };
    let records: Vec<TimingRecord> = schedules.iter().map(|sched| one(sched, clock)).collect();
    let default = one(&Schedule::default(), clock);
    let best = records
        .iter()
        .filter(|r| r.valid && !r.samples.is_empty())
        .fold(None::<&TimingRecord>, |b, r| match b {
            Some(b) if b.metric() <= r.metric() => Some(b),
            _ => Some(r),
        })
        .map(|r| r.schedule);
    Ok(TuneResult { best, records, default, reference_hash })
}

fn fmt_f(x: f64) -> String {
    format!("{x:.4}")
}

/// `kernel,schedule_string,device,rep_index,time_us,metric_us_per_step_per_Mcells,valid`.
///
/// Invalid schedules get one row with empty timing fields.
pub fn write_tuning_csv(path: &Path, records: &[TimingRecord]) -> Result<(), TuneError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kernel", "schedule_string", "device", "rep_index", "time_us", "metric_us_per_step_per_Mcells", "valid"])?;
    for r in records {
        let sched = r.schedule.to_string();
        if r.samples.is_empty() {
            w.write_record([r.kernel.as_str(), &sched, &r.device, "0", "", "", &r.valid.to_string()])?;
        }
        for (rep, t) in r.samples.iter().enumerate() {
            w.write_record([r.kernel.clone(), sched.clone(), r.device.clone(), rep.to_string(), fmt_f(*t), fmt_f(r.sample_metric(rep)), r.valid.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of the histogram CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HistRow {
    pub block: String,
    pub device: String,
    /// `bin` or `default`.
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram of mean metrics per (kernel label, device) block.
///
/// Bins span [min, max] of the block (the last bin includes max). A block
/// whose metrics are all equal gets a single bin. Each block is followed by a
/// `default` marker row whose bounds equal the default schedule's metric.
pub fn histogram(records: &[TimingRecord], defaults: &[TimingRecord], bins: usize) -> Vec<HistRow> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    for r in records {
        let key = (r.kernel.clone(), r.device.clone());
        if !blocks.contains(&key) {
            blocks.push(key);
        }
    }
    let mut out = Vec::new();
    for (block, device) in blocks {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.kernel == block && r.device == device && r.valid && !r.samples.is_empty())
            .map(|r| r.metric())
            .collect();
        if vals.is_empty() {
            continue;
        }
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let nb = if hi > lo { bins.max(1) } else { 1 };
        let width = (hi - lo) / nb as f64;
        let mut counts = vec![0usize; nb];
        for v in &vals {
            let b = if width > 0.0 { (((v - lo) / width) as usize).min(nb - 1) } else { 0 };
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            let lower = lo + b as f64 * width;
            let upper = if b + 1 == nb { hi } else { lo + (b + 1) as f64 * width };
            out.push(HistRow { block: block.clone(), device: device.clone(), kind: "bin".into(), lower, upper, count });
        }
        if let Some(d) = defaults.iter().find(|d| d.kernel == block && d.device == device && !d.samples.is_empty()) {
            let m = d.metric();
            out.push(HistRow { block: block.clone(), device: device.clone(), kind: "default".into(), lower: m, upper: m, count: 1 });
        }
    }
    out
}

pub fn write_histogram_csv(path: &Path, rows: &[HistRow]) -> Result<(), TuneError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["block", "device", "kind", "lower", "upper", "count"])?;
    for r in rows {
        w.write_record([r.block.clone(), r.device.clone(), r.kind.clone(), fmt_f(r.lower), fmt_f(r.upper), r.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histogram_csv(path: &Path) -> Result<Vec<HistRow>, TuneError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |rec: &csv::StringRecord| TuneError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad histogram row {rec:?}")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).ok_or_else(|| bad(&rec));
        out.push(HistRow {
            block: get(0)?.into(),
            device: get(1)?.into(),
            kind: get(2)?.into(),
            lower: get(3)?.parse().map_err(|_| bad(&rec))?,
            upper: get(4)?.parse().map_err(|_| bad(&rec))?,
            count: get(5)?.parse().map_err(|_| bad(&rec))?,
        });
    }
    Ok(out)
}

/// How well the optimum of one device carries over to another.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub device_a: String,
    pub device_b: String,
    pub best_a: Schedule,
    pub best_b: Schedule,
    /// `(metric_B(best_A) - metric_B(best_B)) / metric_B(best_B)`.
    pub gap_a_on_b: f64,
    pub gap_b_on_a: f64,
}

impl fmt::Display for TransferReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "best on {}: {}", self.device_a, self.best_a)?;
        writeln!(f, "best on {}: {}", self.device_b, self.best_b)?;
        writeln!(f, "{} optimum on {}: {:.2}% slower than the {} optimum", self.device_a, self.device_b, 100.0 * self.gap_a_on_b, self.device_b)?;
        write!(f, "{} optimum on {}: {:.2}% slower than the {} optimum", self.device_b, self.device_a, 100.0 * self.gap_b_on_a, self.device_a)
    }
}

/// Compares the two record sets schedule by schedule (only schedules valid in both count).
pub fn transfer_analysis(a: &[TimingRecord], b: &[TimingRecord]) -> Result<TransferReport, TuneError> {
    let mut pairs = Vec::new();
    for ra in a.iter().filter(|r| r.valid && !r.samples.is_empty()) {
        if let Some(rb) = b.iter().find(|r| r.schedule == ra.schedule && r.valid && !r.samples.is_empty()) {
            pairs.push((ra.schedule, ra.metric(), rb.metric()));
        }
    }
    if pairs.is_empty() {
        return Err(TuneError::Mismatch);
    }
    let argmin = |f: fn(&(Schedule, f64, f64)) -> f64| {
        pairs.iter().fold(None::<&(Schedule, f64, f64)>, |best, p| match best {
            Some(b) if f(b) <= f(p) => Some(b),
            _ => Some(p),
        })
    };
    let best_a = *argmin(|p| p.1).expect("non-empty");
    let best_b = *argmin(|p| p.2).expect("non-empty");
    Ok(TransferReport {
        device_a: a[0].device.clone(),
        device_b: b[0].device.clone(),
        best_a: best_a.0,
        best_b: best_b.0,
        gap_a_on_b: (best_a.2 - best_b.2) / best_b.2,
        gap_b_on_a: (best_b.1 - best_a.1) / best_a.1,
    })
}

/// A `[schedule]` section loadable as run configuration.
pub fn best_schedule_text(best: &[(String, Schedule)]) -> String {
    let mut s = String::from("[schedule]\n");
    for (k, sched) in best {
        s += &format!("{k} = {sched}\n");
    }
    s
}
