//! Component timers, the µs/step/Mcells metric, comparison tables and the
//! weak-scaling efficiency table.

use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::comm::Comm;

pub const THERMODYNAMICS: &str = "Thermodynamics";
pub const POISSON: &str = "Poisson";
pub const SUBGRID: &str = "Subgrid";
pub const RADIATION: &str = "Radiation";
pub const MICROPHYSICS: &str = "Microphysics";
pub const ADVECTION: &str = "Advection";
pub const TIME_STEPPING: &str = "Time stepping";
pub const EXT_FORCES: &str = "ExtForces";
pub const HALO_EXCHANGE: &str = "Halo-Exchange";
pub const SURFACE: &str = "Surface";
pub const CHECKS: &str = "Checks";
pub const TIMESTEP_LOOP: &str = "Timestep loop";

/// Top-level components in table order; all are disjoint parts of the time loop.
pub const COMPONENTS: [&str; 11] =
    [THERMODYNAMICS, POISSON, SUBGRID, RADIATION, MICROPHYSICS, ADVECTION, TIME_STEPPING, EXT_FORCES, HALO_EXCHANGE, SURFACE, CHECKS];

pub const FILL_RHS: &str = "Fill RHS";
pub const FORWARD_FFT: &str = "Forward FFT";
pub const TRIDIAGONAL: &str = "Tridiagonal solve";
pub const BACKWARD_FFT: &str = "Backward FFT";
pub const APPLY_CORRECTION: &str = "Apply correction";
pub const POISSON_PARTS: [&str; 5] = [FILL_RHS, FORWARD_FFT, TRIDIAGONAL, BACKWARD_FFT, APPLY_CORRECTION];
pub const TOTAL: &str = "Total";

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("no row named `{0}`")]
    MissingRow(String),
}

/// Wall time normalized by steps and millions of cells.
pub fn metric(total_us: f64, steps: u64, cells: u64) -> f64 {
    total_us / steps as f64 / (cells as f64 / 1e6)
}

/// Named wall-clock accumulators in first-use order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timers {
    entries: Vec<(String, f64)>,
}

impl Timers {
    pub fn new() -> Timers {
        Timers::default()
    }

    /// Timers pre-registered for every component and Poisson part, so all
    /// reports share one row order.
    pub fn with_components() -> Timers {
        let mut t = Timers::new();
        for name in COMPONENTS.iter().chain([TIMESTEP_LOOP].iter()).chain(POISSON_PARTS.iter()) {
            t.add(name, 0.0);
        }
        t
    }

    pub fn add(&mut self, name: &str, us: f64) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, t)) => *t += us,
            None => self.entries.push((name.to_string(), us)),
        }
    }

    /// Runs `f`, charging its wall time to `name`.
    pub fn time<R>(&mut self, name: &str, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        self.add(name, t0.elapsed().as_secs_f64() * 1e6);
        r
    }

    pub fn get(&self, name: &str) -> f64 {
        self.entries.iter().find(|(n, _)| n == name).map_or(0.0, |(_, t)| *t)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn reset(&mut self) {
        for (_, t) in &mut self.entries {
            *t = 0.0;
        }
    }

    /// Per-name maximum over all ranks. Every rank must hold the same names.
    /// Per-name minimum; a name missing from one side counts as zero there.
    pub fn min_with(&self, other: &Timers) -> Timers {
        let mut out = Timers::new();
        for (name, _) in self.entries.iter().chain(&other.entries) {
            if out.entries.iter().all(|(n, _)| n != name) {
                out.add(name, self.get(name).min(other.get(name)));
            }
        }
        out
    }

    /// Per-name maximum; a name missing from one side counts as zero there.
    pub fn max_with(&self, other: &Timers) -> Timers {
        let mut out = Timers::new();
        for (name, _) in self.entries.iter().chain(&other.entries) {
            if out.entries.iter().all(|(n, _)| n != name) {
                out.add(name, self.get(name).max(other.get(name)));
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Timers {
        Timers { entries: self.entries.iter().map(|(n, t)| (n.clone(), t * factor)).collect() }
    }

    pub fn max_over_ranks(&self, comm: &Comm) -> Timers {
        let all = comm.allgather(self.entries.iter().map(|(_, t)| *t).collect::<Vec<f64>>());
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(n, (name, _))| (name.clone(), all.iter().map(|v| v[n]).fold(0.0, f64::max)))
            .collect();
        Timers { entries }
    }

    /// Fraction of the time-loop total not covered by the components.
    pub fn overhead(&self) -> f64 {
        let total = self.get(TIMESTEP_LOOP);
        let parts: f64 = COMPONENTS.iter().map(|c| self.get(c)).sum();
        if total > 0.0 {
            (total - parts) / total
        } else {
            0.0
        }
    }
}

/// One timed run, reduced to per-component totals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub device: String,
    pub steps: u64,
    pub cells: u64,
    /// `(component, total µs)`, the last row being the total.
    pub rows: Vec<(String, f64)>,
}

impl TimingReport {
    /// The component table: every component plus the time-loop total.
    pub fn components(timers: &Timers, device: &str, steps: u64, cells: u64) -> TimingReport {
        let rows = COMPONENTS.iter().chain([TIMESTEP_LOOP].iter()).map(|c| (c.to_string(), timers.get(c))).collect();
        TimingReport { device: device.into(), steps, cells, rows }
    }

    /// The Poisson breakdown, with the Poisson component time as its total.
    pub fn poisson(timers: &Timers, device: &str, steps: u64, cells: u64) -> TimingReport {
        let mut rows: Vec<(String, f64)> = POISSON_PARTS.iter().map(|c| (c.to_string(), timers.get(c))).collect();
        rows.push((TOTAL.into(), timers.get(POISSON)));
        TimingReport { device: device.into(), steps, cells, rows }
    }

    pub fn metrics(&self) -> Vec<(String, f64)> {
        self.rows.iter().map(|(n, t)| (n.clone(), metric(*t, self.steps.max(1), self.cells.max(1)))).collect()
    }

    pub fn total_name(&self) -> &str {
        self.rows.last().map_or(TIMESTEP_LOOP, |(n, _)| n)
    }
}

/// A row of a baseline-vs-accelerated comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub base: f64,
    pub base_fraction: f64,
    pub accel: f64,
    pub accel_fraction: f64,
    pub speedup: f64,
}

/// Fractions of `total` (percent) and speedups `base / accel` per row.
///
/// Rows are matched by name; the order of `base` is kept.
pub fn comparison_table(base: &[(String, f64)], accel: &[(String, f64)], total: &str) -> Result<Vec<TableRow>, PerfError> {
    let find = |rows: &[(String, f64)], n: &str| rows.iter().find(|(m, _)| m == n).map(|(_, v)| *v).ok_or_else(|| PerfError::MissingRow(n.into()));
    let (bt, at) = (find(base, total)?, find(accel, total)?);
    base.iter()
        .map(|(name, b)| {
            let a = find(accel, name)?;
            Ok(TableRow { name: name.clone(), base: *b, base_fraction: b / bt * 100.0, accel: a, accel_fraction: a / at * 100.0, speedup: b / a })
        })
        .collect()
}

/// Fraction column for a single report.
pub fn fractions(rows: &[(String, f64)], total: &str) -> Result<Vec<(String, f64)>, PerfError> {
    let t = rows.iter().find(|(n, _)| n == total).map(|(_, v)| *v).ok_or_else(|| PerfError::MissingRow(total.into()))?;
    Ok(rows.iter().map(|(n, v)| (n.clone(), if t > 0.0 { v / t * 100.0 } else { 0.0 })).collect())
}

/// Text rendering in the Timing / Fraction / speed-up layout.
pub fn format_table(rows: &[TableRow], base_label: &str, accel_label: &str) -> String {
    let mut s = format!(
        "{:<18} {:>12} {:>9} {:>12} {:>9} {:>9}\n",
        "Component",
        format!("{base_label} [us]"),
        "Frac [%]",
        format!("{accel_label} [us]"),
        "Frac [%]",
        "Speedup"
    );
    for r in rows {
        s += &format!(
            "{:<18} {:>12.1} {:>9.1} {:>12.1} {:>9.1} {:>9.2}\n",
            r.name, r.base, r.base_fraction, r.accel, r.accel_fraction, r.speedup
        );
    }
    s
}

/// One line of `timings.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub component: String,
    pub device: String,
    pub steps: u64,
    pub cells: u64,
    pub total_us: f64,
    pub metric: f64,
    pub fraction_pct: f64,
    pub speedup: Option<f64>,
}

/// One line of `scaling.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub component: String,
    pub n: usize,
    pub metric: f64,
    pub efficiency: f64,
}

/// Rows of `timings.csv` for `report`; `baseline` adds the speedup column.
pub fn timing_rows(report: &TimingReport, baseline: Option<&TimingReport>) -> Result<Vec<TimingRow>, PerfError> {
    let metrics = report.metrics();
    let fr = fractions(&metrics, report.total_name())?;
    let base = baseline.map(|b| b.metrics());
    report
        .rows
        .iter()
        .zip(metrics.iter().zip(&fr))
        .map(|((name, total), ((_, m), (_, f)))| {
            let speedup = match &base {
                Some(b) => {
                    let bm = b.iter().find(|(n, _)| n == name).ok_or_else(|| PerfError::MissingRow(name.clone()))?.1;
                    Some(bm / m)
                }
                None => None,
            };
            Ok(TimingRow {
                component: name.clone(),
                device: report.device.clone(),
                steps: report.steps,
                cells: report.cells,
                total_us: *total,
                metric: *m,
                fraction_pct: *f,
                speedup,
            })
        })
        .collect()
}

pub fn write_timings(path: &Path, rows: &[TimingRow]) -> Result<(), PerfError> {
    let with_speedup = rows.iter().any(|r| r.speedup.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["component", "device", "steps", "cells", "total_us", "metric", "fraction_pct"];
    if with_speedup {
        header.push("speedup");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.component.clone(),
            r.device.clone(),
            r.steps.to_string(),
            r.cells.to_string(),
            format!("{:.3}", r.total_us),
            format!("{:.3}", r.metric),
            format!("{:.2}", r.fraction_pct),
        ];
        if with_speedup {
            rec.push(r.speedup.map_or(String::new(), |s| format!("{s:.3}")));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timings(path: &Path) -> Result<Vec<TimingRow>, PerfError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let bad = |what: &str| PerfError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad {what}")));
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad("number"));
        out.push(TimingRow {
            component: rec.get(0).ok_or_else(|| bad("component"))?.into(),
            device: rec.get(1).ok_or_else(|| bad("device"))?.into(),
            steps: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("steps"))?,
            cells: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("cells"))?,
            total_us: num(4)?,
            metric: num(5)?,
            fraction_pct: num(6)?,
            speedup: match rec.get(7) {
                Some(s) if !s.is_empty() => Some(s.parse().map_err(|_| bad("speedup"))?),
                _ => None,
            },
        });
    }
    Ok(out)
}

/// Efficiency `t_1 / t_N` per component from runs with constant work per rank.
///
/// `runs` holds `(N, per-component metric)`; the metric is taken per rank so
/// it equals wall time per step per million local cells. N = 1 must be present.
pub fn weak_scaling(runs: &[(usize, Vec<(String, f64)>)]) -> Result<Vec<ScalingRow>, PerfError> {
    let base = runs.iter().find(|(n, _)| *n == 1).ok_or_else(|| PerfError::MissingRow("N=1".into()))?;
    let mut out = Vec::new();
    for (name, t1) in &base.1 {
        for (n, rows) in runs {
            let tn = rows.iter().find(|(m, _)| m == name).ok_or_else(|| PerfError::MissingRow(name.clone()))?.1;
            let efficiency = if *n == 1 { 1.0 } else if tn > 0.0 { t1 / tn } else { 1.0 };
            out.push(ScalingRow { component: name.clone(), n: *n, metric: tn, efficiency });
        }
    }
    Ok(out)
}

pub fn write_scaling(path: &Path, rows: &[ScalingRow]) -> Result<(), PerfError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["component", "N", "metric", "efficiency"])?;
    for r in rows {
        w.write_record([r.component.clone(), r.n.to_string(), format!("{:.3}", r.metric), format!("{:.4}", r.efficiency)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scaling(path: &Path) -> Result<Vec<ScalingRow>, PerfError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let bad = || PerfError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "bad scaling row"));
    for rec in r.records() {
        let rec = rec?;
        out.push(ScalingRow {
            component: rec.get(0).ok_or_else(bad)?.into(),
            n: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            metric: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            efficiency: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

/// Published single-node timings [µs/step/Mcells] used as reference rows:
/// `(name, cpu, cpu %, a100, a100 %, a100 speedup, h100, h100 %, h100 speedup)`.
pub mod reference {
    pub type Row = (&'static str, f64, f64, f64, f64, f64, f64, f64, f64);

    pub const COMPONENT_TIMINGS: [Row; 12] = [
        ("Thermodynamics", 1178.9, 12.1, 221.8, 9.1, 5.32, 120.7, 14.3, 9.77),
        ("Poisson", 2729.2, 28.1, 1442.0, 59.0, 1.89, 220.5, 26.1, 12.38),
        ("Subgrid", 1002.3, 10.3, 131.6, 5.4, 7.62, 89.9, 10.6, 11.15),
        ("Radiation", 1172.3, 12.1, 132.8, 5.4, 8.83, 86.1, 10.2, 13.61),
        ("Microphysics", 607.2, 6.3, 97.0, 4.0, 6.26, 73.5, 8.7, 8.26),
        ("Advection", 922.1, 9.5, 106.7, 4.4, 8.64, 74.3, 8.8, 12.41),
        ("Time stepping", 733.2, 7.6, 56.2, 2.3, 13.05, 37.6, 4.4, 19.5),
        ("ExtForces", 497.9, 5.1, 61.9, 2.5, 8.04, 45.7, 5.4, 10.89),
        ("Halo-Exchange", 501.0, 5.2, 112.0, 4.6, 4.47, 42.7, 5.0, 11.73),
        ("Surface", 246.1, 2.5, 3.2, 0.1, 76.91, 4.3, 0.5, 57.23),
        ("Checks", 44.5, 0.5, 5.9, 0.2, 7.54, 4.6, 0.5, 9.67),
        ("Timestep loop", 9711.7, 100.0, 2444.2, 100.0, 3.97, 846.2, 100.0, 11.48),
    ];

    pub const POISSON_TIMINGS: [Row; 6] = [
        ("Fill RHS", 516.6, 18.9, 42.3, 2.9, 12.21, 23.3, 10.5, 22.17),
        ("Forward FFT", 946.7, 34.7, 603.3, 41.8, 1.57, 86.9, 39.3, 10.9),
        ("Tridiagonal solve", 110.5, 4.0, 10.0, 0.7, 11.05, 6.2, 2.8, 17.82),
        ("Backward FFT", 1025.5, 37.6, 659.4, 45.7, 1.55, 89.5, 40.5, 11.46),
        ("Apply correction", 129.9, 4.8, 126.6, 8.8, 1.03, 15.1, 6.8, 8.60),
        ("Total", 2729.2, 100.0, 1441.6, 100.0, 1.20, 220.9, 100.0, 7.8),
    ];

    /// `(name, value)` pairs of one device column: 0 = CPU, 1 = A100, 2 = H100.
    pub fn column(rows: &[Row], device: usize) -> Vec<(String, f64)> {
        rows.iter()
            .map(|r| {
                let v = match device {
                    0 => r.1,
                    1 => r.3,
                    _ => r.6,
                };
                (r.0.to_string(), v)
            })
            .collect()
    }
}
