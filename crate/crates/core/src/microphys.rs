//! Kessler-type warm rain: active-range detection, conversion rates and
//! sedimentation.

use std::str::FromStr;
use std::sync::Mutex;

use crate::fields::Field3;
use crate::grid::Grid;
use crate::sched::{Executor, Extents, ReduceKernel, Schedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FallSpeed {
    /// `36.34 (1e-3 rho qr)^0.1346 sqrt(rho0 / rho)`, capped at 10 m/s.
    Kessler,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SedimentStrategy {
    /// Sequential k loop per column.
    Sweep,
    /// Order-independent transfers into per-team partial arrays.
    Accumulate,
}

impl FromStr for SedimentStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sweep" => Ok(SedimentStrategy::Sweep),
            "accumulate" => Ok(SedimentStrategy::Accumulate),
            _ => Err(format!("unknown sedimentation strategy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroConfig {
    /// Autoconversion rate [1/s].
    pub k1: f64,
    pub ql_crit: f64,
    /// Accretion coefficient.
    pub k2: f64,
    /// Rain water above which a cell counts as active.
    pub qr_min: f64,
    pub fall: FallSpeed,
    pub strategy: SedimentStrategy,
}

impl Default for MicroConfig {
    fn default() -> Self {
        MicroConfig { k1: 1e-3, ql_crit: 5e-4, k2: 2.2, qr_min: 1e-8, fall: FallSpeed::Kessler, strategy: SedimentStrategy::Sweep }
    }
}

/// Inclusive level range containing every active cell, `None` if there is none.
pub type ActiveRange = Option<(usize, usize)>;

pub fn merge_ranges(a: ActiveRange, b: ActiveRange) -> ActiveRange {
    match (a, b) {
        (Some((l1, h1)), Some((l2, h2))) => Some((l1.min(l2), h1.max(h2))),
        (x, None) | (None, x) => x,
    }
}

/// Active mask over interior cells, i fastest.
pub fn active_mask(ql: &Field3, qr: &Field3, cfg: &MicroConfig) -> Vec<bool> {
    let s = ql.shape();
    let mut mask = Vec::with_capacity(s.interior_cells());
    for k in 0..s.ktot {
        for j in 0..s.jmax {
            for i in 0..s.imax {
                mask.push(qr.at(i, j, k) > cfg.qr_min || ql.at(i, j, k) > cfg.ql_crit);
            }
        }
    }
    mask
}

/// Level-by-level scan that stops at the first active cell of each level,
/// from the bottom for the lower bound and from the top for the upper.
pub fn find_active_range_scan(mask: &[bool], plane: usize) -> ActiveRange {
    let levels = if plane == 0 { 0 } else { mask.len() / plane };
    let any = |k: usize| mask[k * plane..(k + 1) * plane].iter().any(|&m| m);
    let lo = (0..levels).find(|&k| any(k))?;
    let hi = (lo..levels).rev().find(|&k| any(k))?;
    Some((lo, hi))
}

struct RangeReduction<'a> {
    mask: &'a [bool],
    ext: Extents,
}

impl ReduceKernel for RangeReduction<'_> {
    type Acc = ActiveRange;
    fn extents(&self) -> Extents {
        self.ext
    }
    fn identity(&self) -> ActiveRange {
        None
    }
    fn map(&self, _: usize, i: usize, j: usize, k: usize) -> ActiveRange {
        self.mask[(k * self.ext.nj + j) * self.ext.ni + i].then_some((k, k))
    }
    fn combine(&self, a: &ActiveRange, b: &ActiveRange) -> ActiveRange {
        merge_ranges(*a, *b)
    }
}

/// Min/max reduction over the fully collapsed ijk space.
pub fn find_active_range_reduce(mask: &[bool], ni: usize, nj: usize, exec: &Executor, sched: &Schedule) -> ActiveRange {
    let nk = if ni * nj == 0 { 0 } else { mask.len() / (ni * nj) };
    let ext = Extents { ni, nj, nk, nn: 1 };
    exec.execute_reduction(&RangeReduction { mask, ext }, sched).expect("range reduction schedule")
}

/// Conversion rate of cloud water into rain (autoconversion plus accretion).
#[inline]
pub fn conversion_rate(ql: f64, qr: f64, cfg: &MicroConfig) -> f64 {
    let auto = cfg.k1 * (ql - cfg.ql_crit).max(0.0);
    let accr = if qr > 0.0 { cfg.k2 * ql * qr.powf(0.875) } else { 0.0 };
    auto + accr
}

/// Rain tendency inside `range`; the cloud-water tendency is its negative.
///
/// With `dt` given, the rate is capped so a step never converts more cloud
/// water than exists.
pub fn warm_rain_tendencies(ql: &Field3, qr: &Field3, range: ActiveRange, cfg: &MicroConfig, dt: Option<f64>) -> (Field3, Field3) {
    let s = ql.shape();
    let mut qr_t = Field3::zeros(s);
    let mut ql_t = Field3::zeros(s);
    if let Some((lo, hi)) = range {
        for k in lo..=hi.min(s.ktot - 1) {
            for j in 0..s.jmax {
                for i in 0..s.imax {
                    let l = ql.at(i, j, k);
                    let mut rate = conversion_rate(l, qr.at(i, j, k), cfg);
                    if let Some(dt) = dt {
                        rate = rate.min(l / dt);
                    }
                    *qr_t.at_mut(i, j, k) = rate;
                    *ql_t.at_mut(i, j, k) = -rate;
                }
            }
        }
    }
    (qr_t, ql_t)
}

#[inline]
pub fn fall_speed(qr: f64, rho: f64, rho0: f64, fall: FallSpeed) -> f64 {
    match fall {
        FallSpeed::Constant(w) => w,
        FallSpeed::Kessler => {
            if qr <= 0.0 {
                0.0
            } else {
                (36.34 * (1e-3 * rho * qr).powf(0.1346) * (rho0 / rho).sqrt()).min(10.0)
            }
        }
    }
}

/// Fall speeds (frozen for the step) and per-column substep counts with
/// `w dt / dzf <= 1`.
fn column_setup(qr: &Field3, rhof: &[f64], grid: &Grid, dt: f64, fall: FallSpeed) -> (Vec<f64>, Vec<usize>) {
    let s = qr.shape();
    let (ni, nj, nk) = (s.imax, s.jmax, s.ktot);
    let mut ws = vec![0.0; ni * nj * nk];
    let mut nsub = vec![1usize; ni * nj];
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                let w = fall_speed(qr.at(i, j, k), rhof[k], rhof[0], fall);
                ws[(k * nj + j) * ni + i] = w;
                let courant = w * dt / grid.dzf[k];
                let n = &mut nsub[j * ni + i];
                *n = (*n).max(courant.ceil() as usize);
            }
        }
    }
    (ws, nsub)
}

/// First-order upwind rain fall-out over `dt`; returns the surface flux per
/// column [kg m-2 s-1], i fastest.
pub fn sediment(qr: &mut Field3, rhof: &[f64], grid: &Grid, dt: f64, cfg: &MicroConfig, exec: &Executor) -> Vec<f64> {
    let (ws, nsub) = column_setup(qr, rhof, grid, dt, cfg.fall);
    match cfg.strategy {
        SedimentStrategy::Sweep => sweep(qr, rhof, grid, dt, &ws, &nsub),
        SedimentStrategy::Accumulate => accumulate(qr, rhof, grid, dt, &ws, &nsub, exec),
    }
}

fn sweep(qr: &mut Field3, rhof: &[f64], grid: &Grid, dt: f64, ws: &[f64], nsub: &[usize]) -> Vec<f64> {
    let s = qr.shape();
    let (ni, nj, nk) = (s.imax, s.jmax, s.ktot);
    let mut surface = vec![0.0; ni * nj];
    for j in 0..nj {
        for i in 0..ni {
            let n = nsub[j * ni + i];
            let dts = dt / n as f64;
            for _ in 0..n {
                // Downward mass flux out of the current cell, from pre-update values.
                let mut below = rhof[0] * ws[j * ni + i] * qr.at(i, j, 0);
                surface[j * ni + i] += below * dts / dt;
                for k in 0..nk {
                    let above = if k + 1 < nk { rhof[k + 1] * ws[((k + 1) * nj + j) * ni + i] * qr.at(i, j, k + 1) } else { 0.0 };
                    *qr.at_mut(i, j, k) += dts * (above - below) / (rhof[k] * grid.dzf[k]);
                    below = above;
                }
            }
        }
    }
    surface
}

fn accumulate(qr: &mut Field3, rhof: &[f64], grid: &Grid, dt: f64, ws: &[f64], nsub: &[usize], exec: &Executor) -> Vec<f64> {
    let s = qr.shape();
    let (ni, nj, nk) = (s.imax, s.jmax, s.ktot);
    let ext = Extents { ni, nj, nk, nn: 1 };
    let passes = nsub.iter().copied().max().unwrap_or(0);
    let sched = Schedule::default();
    let mut surface = vec![0.0; ni * nj];
    for pass in 0..passes {
        let partials = Mutex::new(Vec::new());
        {
            let cur = &*qr;
            exec.for_each_element(
                &sched,
                ext,
                0,
                nk,
                || (vec![0.0; ni * nj * nk], vec![0.0; ni * nj]),
                |(delta, sfc), _, i, j, k| {
                    let col = j * ni + i;
                    if pass >= nsub[col] {
                        return;
                    }
                    let dts = dt / nsub[col] as f64;
                    let mass = dts * rhof[k] * ws[(k * nj + j) * ni + i] * cur.at(i, j, k);
                    if mass == 0.0 {
                        return;
                    }
                    delta[(k * nj + j) * ni + i] -= mass / (rhof[k] * grid.dzf[k]);
                    if k > 0 {
                        delta[((k - 1) * nj + j) * ni + i] += mass / (rhof[k - 1] * grid.dzf[k - 1]);
                    } else {
                        sfc[col] += mass / dt;
                    }
                },
                |team, part| partials.lock().unwrap().push((team, part)),
            );
        }
        let mut parts = partials.into_inner().unwrap();
        parts.sort_by_key(|(team, _)| *team);
        let mut delta = vec![0.0; ni * nj * nk];
        for (_, (d, sfc)) in &parts {
            for (a, b) in delta.iter_mut().zip(d) {
                *a += b;
            }
            for (a, b) in surface.iter_mut().zip(sfc) {
                *a += b;
            }
        }
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    *qr.at_mut(i, j, k) += delta[(k * nj + j) * ni + i];
                }
            }
        }
    }
    surface
}

/// `sum rhof dzf qr` over the local interior.
pub fn rain_mass(qr: &Field3, rhof: &[f64], grid: &Grid) -> f64 {
    let s = qr.shape();
    let mut m = 0.0;
    for k in 0..s.ktot {
        for j in 0..s.jmax {
            for i in 0..s.imax {
                m += rhof[k] * grid.dzf[k] * qr.at(i, j, k);
            }
        }
    }
    m
}
