//! Saturation adjustment, virtual potential temperature, buoyancy and cloud
//! diagnostics.

use thiserror::Error;

use crate::comm::Comm;
use crate::exact::{global_sums, ExactSum};
use crate::fields::{BaseState, Field3, Shape};

pub mod constants {
    pub const RD: f64 = 287.04;
    pub const RV: f64 = 461.5;
    pub const CP: f64 = 1004.0;
    pub const LV: f64 = 2.53e6;
    pub const P00: f64 = 1.0e5;
    pub const G: f64 = 9.81;
    /// Rd / Rv.
    pub const EP: f64 = RD / RV;
}

use constants::*;

/// Liquid water above which a cell counts as cloudy.
pub const QL_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("non-physical state thl={thl} qt={qt}")]
    NonPhysical { thl: f64, qt: f64 },
}

/// Saturation vapour pressure over liquid water (Tetens) [Pa].
#[inline]
pub fn esat(t: f64) -> f64 {
    610.78 * (17.27 * (t - 273.16) / (t - 35.86)).exp()
}

/// Saturation specific humidity [kg/kg].
#[inline]
pub fn qsat(t: f64, p: f64) -> f64 {
    let es = esat(t);
    EP * es / (p - (1.0 - EP) * es)
}

#[inline]
fn dqsat_dt(t: f64, p: f64) -> f64 {
    let es = esat(t);
    let des = es * 17.27 * (273.16 - 35.86) / ((t - 35.86) * (t - 35.86));
    let den = p - (1.0 - EP) * es;
    EP * p * des / (den * den)
}

/// Saturation adjustment with exactly `N` Newton steps.
///
/// Returns `(T, ql)`. Unsaturated cells take the dry branch without iterating.
#[inline]
pub fn saturation_adjust<const N: usize>(thl: f64, qt: f64, exner: f64, p: f64) -> Result<(f64, f64), ThermoError> {
    if !(thl > 0.0) || !(qt >= 0.0) {
        return Err(ThermoError::NonPhysical { thl, qt });
    }
    let tl = exner * thl;
    if qt <= qsat(tl, p) {
        return Ok((tl, 0.0));
    }
    let mut t = tl;
    for _ in 0..N {
        let qs = qsat(t, p);
        let f = t - tl - (LV / CP) * (qt - qs);
        let df = 1.0 + (LV / CP) * dqsat_dt(t, p);
        t -= f / df;
    }
    Ok((t, (qt - qsat(t, p)).max(0.0)))
}

/// Runtime choice of the unroll count (1 to 8).
pub fn saturation_adjust_n(n_iter: usize, thl: f64, qt: f64, exner: f64, p: f64) -> Result<(f64, f64), ThermoError> {
    match n_iter {
        1 => saturation_adjust::<1>(thl, qt, exner, p),
        2 => saturation_adjust::<2>(thl, qt, exner, p),
        3 => saturation_adjust::<3>(thl, qt, exner, p),
        4 => saturation_adjust::<4>(thl, qt, exner, p),
        5 => saturation_adjust::<5>(thl, qt, exner, p),
        6 => saturation_adjust::<6>(thl, qt, exner, p),
        7 => saturation_adjust::<7>(thl, qt, exner, p),
        _ => saturation_adjust::<8>(thl, qt, exner, p),
    }
}

/// Newton iteration run until the residual drops below `tol` (at most 100 steps).
pub fn saturation_adjust_iterative(thl: f64, qt: f64, exner: f64, p: f64, tol: f64) -> Result<(f64, f64, usize), ThermoError> {
    if !(thl > 0.0) || !(qt >= 0.0) {
        return Err(ThermoError::NonPhysical { thl, qt });
    }
    let tl = exner * thl;
    if qt <= qsat(tl, p) {
        return Ok((tl, 0.0, 0));
    }
    let mut t = tl;
    let mut steps = 0;
    while steps < 100 {
        let f = t - tl - (LV / CP) * (qt - qsat(t, p));
        if f.abs() < tol {
            break;
        }
        t -= f / (1.0 + (LV / CP) * dqsat_dt(t, p));
        steps += 1;
    }
    Ok((t, (qt - qsat(t, p)).max(0.0), steps))
}

#[inline]
pub fn virtual_theta(t: f64, ql: f64, qt: f64, exner: f64) -> f64 {
    (t / exner) * (1.0 + (RV / RD - 1.0) * (qt - ql) - ql)
}

/// Per-cell thermodynamic diagnostics.
#[derive(Debug, Clone)]
pub struct ThermoFields {
    pub t: Field3,
    pub ql: Field3,
    pub thv: Field3,
}

impl ThermoFields {
    pub fn zeros(shape: Shape) -> ThermoFields {
        ThermoFields { t: Field3::zeros(shape), ql: Field3::zeros(shape), thv: Field3::zeros(shape) }
    }
}

/// Diagnoses temperature, liquid water and thv on every interior cell.
pub fn diagnose(thl: &Field3, qt: &Field3, base: &BaseState, n_iter: usize, out: &mut ThermoFields) -> Result<(), ThermoError> {
    let s = thl.shape();
    for k in 0..s.ktot {
        let (ex, p) = (base.exner[k], base.pref[k]);
        for j in 0..s.jmax {
            for i in 0..s.imax {
                let c = s.at(i, j, k);
                let (th, q) = (thl.data()[c], qt.data()[c]);
                let (t, ql) = saturation_adjust_n(n_iter, th, q, ex, p)?;
                out.t.data_mut()[c] = t;
                out.ql.data_mut()[c] = ql;
                out.thv.data_mut()[c] = virtual_theta(t, ql, q, ex);
            }
        }
    }
    Ok(())
}

/// Local per-level exact sums of a field's interior.
pub fn level_sums(f: &Field3) -> Vec<ExactSum> {
    let s = f.shape();
    (0..s.ktot)
        .map(|k| {
            let mut acc = ExactSum::new();
            for j in 0..s.jmax {
                let c = s.at(0, j, k);
                for &v in &f.data()[c..c + s.imax] {
                    acc.add(v);
                }
            }
            acc
        })
        .collect()
}

/// Global planar mean of each level, identical on every rank and for every layout.
pub fn planar_mean(f: &Field3, columns: usize, comm: &Comm) -> Vec<f64> {
    global_sums(&level_sums(f), comm).into_iter().map(|s| s / columns as f64).collect()
}

/// Adds the buoyancy tendency `g (thv_h - <thv>_h) / <thv>_h` at w points.
///
/// `mean` holds planar means per full level; half-level values are averages of
/// the adjacent full levels. The surface (`k = 0`) gets nothing since w = 0 there.
pub fn buoyancy(thv: &Field3, mean: &[f64], wt: &mut Field3) {
    let s = thv.shape();
    for k in 1..s.ktot {
        let mh = 0.5 * (mean[k - 1] + mean[k]);
        for j in 0..s.jmax {
            for i in 0..s.imax {
                let c = s.at(i, j, k);
                let th = 0.5 * (thv.data()[c - s.sxy()] + thv.data()[c]);
                wt.data_mut()[c] += G * (th - mh) / mh;
            }
        }
    }
}

/// Per-level cloud fraction over the global domain, plus the local cloud mask.
pub fn cloud_diagnostics(ql: &Field3, columns: usize, comm: &Comm) -> (Vec<f64>, Vec<bool>) {
    let s = ql.shape();
    let mut mask = Vec::with_capacity(s.interior_cells());
    let mut counts = vec![0u64; s.ktot];
    for (k, count) in counts.iter_mut().enumerate() {
        for j in 0..s.jmax {
            for i in 0..s.imax {
                let cloudy = ql.at(i, j, k) > QL_THRESHOLD;
                *count += cloudy as u64;
                mask.push(cloudy);
            }
        }
    }
    let all = comm.allgather(counts);
    let frac = (0..s.ktot).map(|k| all.iter().map(|c| c[k]).sum::<u64>() as f64 / columns as f64).collect();
    (frac, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dry_cell_takes_dry_branch() {
        assert_eq!(saturation_adjust::<5>(300.0, 0.0, 1.0, P00).unwrap(), (300.0, 0.0));
    }

    #[test]
    fn rejects_non_physical() {
        assert!(saturation_adjust::<5>(0.0, 0.01, 1.0, P00).is_err());
        assert!(saturation_adjust::<5>(-5.0, 0.01, 1.0, P00).is_err());
        assert!(saturation_adjust::<5>(300.0, -0.1, 1.0, P00).is_err());
    }

    #[test]
    fn tetens_known_value() {
        // 610.78 Pa at the triple point by construction.
        assert!((esat(273.16) - 610.78).abs() < 1e-12);
        assert!(qsat(300.0, P00) > qsat(290.0, P00));
    }

    #[test]
    fn saturated_point_satisfies_balance() {
        let ex = (9e4 / P00).powf(RD / CP);
        let (t, ql) = saturation_adjust::<5>(290.0, 0.02, ex, 9e4).unwrap();
        assert!(ql > 0.0);
        let resid = t - ex * 290.0 - (LV / CP) * ql;
        assert!(resid.abs() < 1e-9);
    }

    #[test]
    fn buoyancy_of_uniform_thv_is_zero() {
        let shape = Shape::new(4, 4, 3, 1);
        let thv = Field3::filled(shape, 300.0);
        let mut wt = Field3::zeros(shape);
        buoyancy(&thv, &[300.0; 3], &mut wt);
        assert!(wt.data().iter().all(|&v| v == 0.0));
    }
}
