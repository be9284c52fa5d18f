//! Hydrostatic reference state.

use crate::grid::Grid;
use crate::thermo::constants::{CP, G, P00, RD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseStateConfig {
    /// Surface pressure [Pa].
    pub ps: f64,
    /// Reference potential temperature [K].
    pub theta0: f64,
}

impl Default for BaseStateConfig {
    fn default() -> Self {
        BaseStateConfig { ps: 101_540.0, theta0: 298.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseState {
    pub rhof: Vec<f64>,
    /// `ktot + 1` half-level densities.
    pub rhoh: Vec<f64>,
    pub exner: Vec<f64>,
    pub pref: Vec<f64>,
    pub theta0: f64,
}

impl BaseState {
    /// Dry isentropic hydrostatic profile with constant potential temperature.
    pub fn dry_isentropic(grid: &Grid, cfg: &BaseStateConfig) -> BaseState {
        let exner_s = (cfg.ps / P00).powf(RD / CP);
        let exner: Vec<f64> = grid.zf.iter().map(|&z| exner_s - G * z / (CP * cfg.theta0)).collect();
        let pref: Vec<f64> = exner.iter().map(|&p| P00 * p.powf(CP / RD)).collect();
        let rhof: Vec<f64> = pref.iter().zip(&exner).map(|(&p, &ex)| p / (RD * cfg.theta0 * ex)).collect();
        let rhoh = interpolate_half(grid, &rhof);
        BaseState { rhof, rhoh, exner, pref, theta0: cfg.theta0 }
    }

    /// Constant density, unit Exner function; handy for tests.
    pub fn uniform(ktot: usize, rho: f64) -> BaseState {
        BaseState { rhof: vec![rho; ktot], rhoh: vec![rho; ktot + 1], exner: vec![1.0; ktot], pref: vec![P00; ktot], theta0: 300.0 }
    }

    /// Explicit full-level densities with interpolated half levels.
    pub fn from_density(grid: &Grid, rhof: Vec<f64>) -> BaseState {
        let rhoh = interpolate_half(grid, &rhof);
        let ktot = rhof.len();
        BaseState { rhof, rhoh, exner: vec![1.0; ktot], pref: vec![P00; ktot], theta0: 300.0 }
    }
}

/// Linear interpolation in height to half levels, linear extrapolation at the ends.
fn interpolate_half(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let kt = grid.ktot;
    let mut h = vec![0.0; kt + 1];
    for k in 1..kt {
        h[k] = (f[k - 1] * grid.dzf[k] + f[k] * grid.dzf[k - 1]) / (2.0 * grid.dzh[k]);
    }
    h[0] = f[0] - (h[1] - f[0]);
    h[kt] = f[kt - 1] + (f[kt - 1] - h[kt - 1]);
    h
}
