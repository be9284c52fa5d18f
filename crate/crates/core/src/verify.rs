//! Time- and planar-averaged profile statistics and their cross-run comparison.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::comm::Comm;
use crate::exact::{global_sums, ExactSum};
use crate::fields::{Field3, FieldSet};
use crate::thermo::{cloud_diagnostics, planar_mean, ThermoFields};

/// Profile quantities in file order, with the denominator floor used by [`compare`].
pub const QUANTITIES: [(&str, f64); 7] =
    [("T", 1e-3), ("tke", 1e-6), ("ql", 1e-8), ("cfrac", 1e-3), ("qr", 1e-8), ("thl", 1e-3), ("qt", 1e-8)];

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error("profiles differ in shape: {0}")]
    Shape(String),
}

/// Running sums of per-level planar means.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStats {
    pub z: Vec<f64>,
    pub samples: u64,
    /// `sums[q][k]` for quantity `q` of [`QUANTITIES`].
    pub sums: Vec<Vec<f64>>,
}

impl ProfileStats {
    pub fn new(z: Vec<f64>) -> ProfileStats {
        let nk = z.len();
        ProfileStats { z, samples: 0, sums: vec![vec![0.0; nk]; QUANTITIES.len()] }
    }

    /// Adds one sample: `sample[q][k]` per quantity and level.
    pub fn accumulate(&mut self, sample: &[Vec<f64>]) {
        assert_eq!(sample.len(), self.sums.len(), "one profile per quantity");
        for (acc, s) in self.sums.iter_mut().zip(sample) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
        self.samples += 1;
    }

    /// Time mean of quantity `q`; zeros before the first sample.
    pub fn mean(&self, q: usize) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.sums[q].iter().map(|s| s / n).collect()
    }

    pub fn quantity_index(name: &str) -> Option<usize> {
        QUANTITIES.iter().position(|(q, _)| *q == name)
    }
}

/// Planar means of every quantity for the current state.
///
/// Needs exchanged east/north halos of u and v. Identical on all ranks and
/// for every rank layout.
pub fn profile_sample(f: &FieldSet, thermo: &ThermoFields, columns: usize, comm: &Comm) -> Vec<Vec<f64>> {
    let s = f.shape;
    let centered = |which: usize| {
        let mut out = Field3::zeros(s);
        for k in 0..s.ktot {
            for j in 0..s.jmax {
                for i in 0..s.imax {
                    let c = s.at(i, j, k);
                    *out.at_mut(i, j, k) = match which {
                        0 => 0.5 * (f.u.data()[c] + f.u.data()[c + 1]),
                        1 => 0.5 * (f.v.data()[c] + f.v.data()[c + s.sx()]),
                        _ => 0.5 * (f.w.data()[c] + if k + 1 < s.ktot { f.w.data()[c + s.sxy()] } else { 0.0 }),
                    };
                }
            }
        }
        out
    };
    let mut tke_sums = vec![ExactSum::new(); s.ktot];
    for which in 0..3 {
        let vel = centered(which);
        let mean = planar_mean(&vel, columns, comm);
        for (k, acc) in tke_sums.iter_mut().enumerate() {
            for j in 0..s.jmax {
                for i in 0..s.imax {
                    let d = vel.at(i, j, k) - mean[k];
                    acc.add(0.5 * d * d);
                }
            }
        }
    }
    let tke = global_sums(&tke_sums, comm).into_iter().map(|x| x / columns as f64).collect();
    let (cfrac, _) = cloud_diagnostics(&thermo.ql, columns, comm);
    vec![
        planar_mean(&thermo.t, columns, comm),
        tke,
        planar_mean(&thermo.ql, columns, comm),
        cfrac,
        planar_mean(&f.qr, columns, comm),
        planar_mean(&f.thl, columns, comm),
        planar_mean(&f.qt, columns, comm),
    ]
}

/// Writes `quantity,level,z_m,value,samples`; values round-trip exactly.
pub fn write_profiles(path: &Path, stats: &ProfileStats) -> Result<(), VerifyError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quantity", "level", "z_m", "value", "samples"])?;
    for (q, (name, _)) in QUANTITIES.iter().enumerate() {
        for (k, v) in stats.mean(q).iter().enumerate() {
            w.write_record([name.to_string(), k.to_string(), stats.z[k].to_string(), v.to_string(), stats.samples.to_string()])?;
        }
    }
    w.flush().map_err(|source| VerifyError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

/// Time-mean profiles as read back from `profiles.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub z: Vec<f64>,
    pub samples: u64,
    /// `(quantity, per-level values)` in file order.
    pub values: Vec<(String, Vec<f64>)>,
}

impl Profiles {
    pub fn from_stats(stats: &ProfileStats) -> Profiles {
        Profiles {
            z: stats.z.clone(),
            samples: stats.samples,
            values: QUANTITIES.iter().enumerate().map(|(q, (n, _))| (n.to_string(), stats.mean(q))).collect(),
        }
    }
}

pub fn read_profiles(path: &Path) -> Result<Profiles, VerifyError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["quantity", "level", "z_m", "value", "samples"] {
        return Err(VerifyError::Format(format!("unexpected header {header:?}")));
    }
    let mut out = Profiles { z: Vec::new(), samples: 0, values: Vec::new() };
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| VerifyError::Format(format!("short row {rec:?}")));
        let parse = |i: usize| field(i)?.parse::<f64>().map_err(|e| VerifyError::Format(format!("{e} in {rec:?}")));
        let q = field(0)?.to_string();
        let level: usize = field(1)?.parse().map_err(|e| VerifyError::Format(format!("{e} in {rec:?}")))?;
        let (z, value) = (parse(2)?, parse(3)?);
        out.samples = field(4)?.parse().map_err(|e| VerifyError::Format(format!("{e} in {rec:?}")))?;
        if out.values.last().is_none_or(|(n, _)| *n != q) {
            out.values.push((q, Vec::new()));
        }
        let vals = &mut out.values.last_mut().expect("pushed above").1;
        if level != vals.len() {
            return Err(VerifyError::Format(format!("levels out of order at {rec:?}")));
        }
        vals.push(value);
        if out.values.len() == 1 {
            out.z.push(z);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityDiff {
    pub quantity: String,
    pub max_rel: f64,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub tol: f64,
    pub diffs: Vec<QuantityDiff>,
}

impl CompareReport {
    pub fn pass(&self) -> bool {
        self.diffs.iter().all(|d| d.max_rel <= self.tol)
    }

    pub fn max_rel(&self) -> f64 {
        self.diffs.iter().map(|d| d.max_rel).fold(0.0, f64::max)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.diffs {
            let verdict = if d.max_rel <= self.tol { "ok" } else { "FAIL" };
            writeln!(f, "{:<6} max rel diff {:>10.4}% at level {:>3}  {verdict}", d.quantity, 100.0 * d.max_rel, d.level)?;
        }
        write!(f, "{} at tolerance {}%", if self.pass() { "PASS" } else { "FAIL" }, 100.0 * self.tol)
    }
}

fn floor_of(q: &str) -> f64 {
    QUANTITIES.iter().find(|(n, _)| *n == q).map_or(1e-12, |(_, f)| *f)
}

/// Relative difference `|a - b| / max(min(|a|, |b|), floor)`; symmetric in a and b.
pub fn relative_difference(a: f64, b: f64, floor: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().min(b.abs()).max(floor)
}

/// Per-quantity maximum relative difference over levels.
pub fn compare(a: &Profiles, b: &Profiles, tol: f64) -> Result<CompareReport, VerifyError> {
    if a.values.len() != b.values.len() {
        return Err(VerifyError::Shape(format!("{} vs {} quantities", a.values.len(), b.values.len())));
    }
    let mut diffs = Vec::new();
    for ((qa, va), (qb, vb)) in a.values.iter().zip(&b.values) {
        if qa != qb || va.len() != vb.len() {
            return Err(VerifyError::Shape(format!("{qa}[{}] vs {qb}[{}]", va.len(), vb.len())));
        }
        let floor = floor_of(qa);
        let (level, max_rel) = va
            .iter()
            .zip(vb)
            .map(|(x, y)| relative_difference(*x, *y, floor))
            .enumerate()
            .fold((0, 0.0f64), |best, (k, r)| if r > best.1 || r.is_nan() { (k, r) } else { best });
        diffs.push(QuantityDiff { quantity: qa.clone(), max_rel, level });
    }
    Ok(CompareReport { tol, diffs })
}
