//! Deardorff subgrid TKE closure.

use crate::fields::{BaseState, Field3};
use crate::grid::Grid;
use crate::sched::{Extents, Kernel};
use crate::thermo::constants::G;

#[derive(Debug, Clone, PartialEq)]
pub struct SubgridConfig {
    pub cm: f64,
    pub cn: f64,
    pub ce: f64,
    pub e_min: f64,
    /// Turbulent Prandtl number; scalars diffuse with `kh = km / prandtl`.
    pub prandtl: f64,
    /// Per-level horizontal prefactor of the TKE diffusion kernel.
    pub nuf: Vec<f64>,
}

impl SubgridConfig {
    pub fn new(ktot: usize) -> SubgridConfig {
        SubgridConfig { cm: 0.12, cn: 0.76, ce: 0.7, e_min: 1e-5, prandtl: 1.0 / 3.0, nuf: vec![2.0; ktot] }
    }

    pub fn kh_factor(&self) -> f64 {
        1.0 / self.prandtl
    }
}

/// Brunt-Vaisala frequency squared from thv at full levels.
///
/// Central differences in the interior, one-sided at the bottom and top.
pub fn stability(thv: &Field3, grid: &Grid, theta0: f64) -> Field3 {
    let s = thv.shape();
    let mut n2 = Field3::zeros(s);
    let kt = s.ktot;
    for k in 0..kt {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(kt - 1));
        let dz = grid.zf[hi] - grid.zf[lo];
        for j in 0..s.jmax {
            for i in 0..s.imax {
                *n2.at_mut(i, j, k) = G / theta0 * (thv.at(i, j, hi) - thv.at(i, j, lo)) / dz;
            }
        }
    }
    n2
}

/// Mixing length: the filter width, reduced under stable stratification.
#[inline]
pub fn mixing_length(e: f64, n2: f64, delta: f64, cn: f64) -> f64 {
    if n2 > 0.0 {
        delta.min(cn * e.sqrt() / n2.sqrt())
    } else {
        delta
    }
}

/// `km = cm λ sqrt(e)` on the interior, with `e` floored at `e_min`.
pub fn eddy_viscosity(e: &Field3, n2: &Field3, grid: &Grid, cfg: &SubgridConfig, km: &mut Field3) {
    let s = e.shape();
    for k in 0..s.ktot {
        let delta = grid.filter_width(k);
        for j in 0..s.jmax {
            for i in 0..s.imax {
                let ee = e.at(i, j, k).max(cfg.e_min);
                let lambda = mixing_length(ee, n2.at(i, j, k), delta, cfg.cn);
                *km.at_mut(i, j, k) = cfg.cm * lambda * ee.sqrt();
            }
        }
    }
}

/// The momentum-diffusion kernel of the TKE equation, evaluated in the
/// printed operator order.
///
/// Out-of-range neighbours at the bottom and top take the values of the
/// adjacent level (zero gradient); half-level density and spacing come from
/// the grid.
pub struct TkeDiffusion<'a> {
    pub e: &'a Field3,
    pub km: &'a Field3,
    pub grid: &'a Grid,
    pub base: &'a BaseState,
    pub nuf: &'a [f64],
}

impl TkeDiffusion<'_> {
    #[inline(always)]
    fn eval_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let s = self.e.shape();
        let c = s.at(i, j, k);
        let (sx, sxy) = (s.sx(), s.sxy());
        let (e, km) = (self.e.data(), self.km.data());
        let (dzf, dzh, rhof, rhoh) = (&self.grid.dzf, &self.grid.dzh, &self.base.rhof, &self.base.rhoh);
        let (dx2, dy2) = (self.grid.dx2(), self.grid.dy2());
        let nuf = self.nuf[k];
        let up = if k + 1 < s.ktot { c + sxy } else { c };
        let dn = if k > 0 { c - sxy } else { c };
        let dzf_up = if k + 1 < s.ktot { dzf[k + 1] } else { dzf[k] };
        let dzf_dn = if k > 0 { dzf[k - 1] } else { dzf[k] };
        (((km[c + 1] + km[c]) * (e[c + 1] - e[c]) - (km[c] + km[c - 1]) * (e[c] - e[c - 1])) * nuf / dx2
            + ((km[c + sx] + km[c]) * (e[c + sx] - e[c]) - (km[c] + km[c - sx]) * (e[c] - e[c - sx])) * nuf / dy2)
            + (rhoh[k + 1] / rhof[k] * (dzf_up * km[c] + dzf[k] * km[up] * (e[up] - e[c])) / (dzh[k + 1] * dzh[k + 1])
                - rhoh[k] / rhof[k] * (dzf_dn * km[c] + dzf[k] * km[dn] * (e[c] - e[dn])) / (dzh[k] * dzh[k]))
    }
}

impl Kernel for TkeDiffusion<'_> {
    fn name(&self) -> &str {
        "diffuse_tke"
    }
    fn extents(&self) -> Extents {
        Extents::of(self.e.shape(), 1)
    }
    fn radius(&self) -> usize {
        1
    }
    fn input_halo(&self) -> usize {
        self.e.shape().halo.min(self.km.shape().halo)
    }
    fn eval_interior(&self, _: usize, i: usize, j: usize, k: usize) -> f64 {
        self.eval_at(i, j, k)
    }
}

/// Shear production, buoyancy sink and dissipation of subgrid TKE.
pub struct TkeSources<'a> {
    pub u: &'a Field3,
    pub v: &'a Field3,
    pub w: &'a Field3,
    pub e: &'a Field3,
    pub km: &'a Field3,
    pub n2: &'a Field3,
    pub grid: &'a Grid,
    pub cfg: &'a SubgridConfig,
}

impl TkeSources<'_> {
    /// `2 S_ij S_ij` at the cell centre.
    ///
    /// Diagonal terms are centred differences; each cross term is squared on
    /// the four cell edges around the centre and averaged. Vertical edges
    /// outside the domain are left out of the average.
    #[inline(always)]
    pub fn strain2(&self, i: usize, j: usize, k: usize) -> f64 {
        let s = self.u.shape();
        let c = s.at(i, j, k);
        let (sx, sxy, kt) = (s.sx(), s.sxy(), s.ktot);
        let (u, v, w) = (self.u.data(), self.v.data(), self.w.data());
        let g = self.grid;
        let (dx, dy) = (g.dx, g.dy);
        let wz = |c: usize, kk: usize| if kk == 0 || kk >= kt { 0.0 } else { w[c] };
        let s11 = (u[c + 1] - u[c]) / dx;
        let s22 = (v[c + sx] - v[c]) / dy;
        let s33 = (wz(c + sxy, k + 1) - wz(c, k)) / g.dzf[k];

        // xy edges at (i-1/2, j-1/2), same level.
        let sxy_at = |c: usize| (u[c] - u[c - sx]) / dy + (v[c] - v[c - 1]) / dx;
        let xy = [c, c + 1, c + sx, c + sx + 1].map(|e| sxy_at(e).powi(2)).iter().sum::<f64>() / 4.0;

        // xz and yz edges on half level kk (1 <= kk < ktot).
        let sxz_at = |c: usize, kk: usize| (u[c] - u[c - sxy]) / g.dzh[kk] + (w[c] - w[c - 1]) / dx;
        let syz_at = |c: usize, kk: usize| (v[c] - v[c - sxy]) / g.dzh[kk] + (w[c] - w[c - sx]) / dy;
        let (mut xz, mut yz, mut n) = (0.0, 0.0, 0.0);
        for (kk, cc) in [(k, c), (k + 1, c + sxy)] {
            if kk == 0 || kk >= kt {
                continue;
            }
            xz += sxz_at(cc, kk).powi(2) + sxz_at(cc + 1, kk).powi(2);
            yz += syz_at(cc, kk).powi(2) + syz_at(cc + sx, kk).powi(2);
            n += 2.0;
        }
        let (xz, yz) = if n > 0.0 { (xz / n, yz / n) } else { (0.0, 0.0) };
        2.0 * (s11 * s11 + s22 * s22 + s33 * s33) + xy + xz + yz
    }

    #[inline(always)]
    fn eval_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let km = self.km.at(i, j, k);
        let e = self.e.at(i, j, k).max(self.cfg.e_min);
        let n2 = self.n2.at(i, j, k);
        let lambda = mixing_length(e, n2, self.grid.filter_width(k), self.cfg.cn);
        let production = km * self.strain2(i, j, k);
        let buoyancy = -km * self.cfg.kh_factor() * n2;
        let dissipation = self.cfg.ce * e * e.sqrt() / lambda;
        production + buoyancy - dissipation
    }
}

impl Kernel for TkeSources<'_> {
    fn name(&self) -> &str {
        "tke_sources"
    }
    fn extents(&self) -> Extents {
        Extents::of(self.e.shape(), 1)
    }
    fn radius(&self) -> usize {
        1
    }
    fn input_halo(&self) -> usize {
        self.u.shape().halo
    }
    fn eval_interior(&self, _: usize, i: usize, j: usize, k: usize) -> f64 {
        self.eval_at(i, j, k)
    }
}

/// Conservative diffusion of `nn` scalars with `kh = factor * km`.
///
/// Zero flux through the bottom and top. Each scalar's tendency is one
/// output component, so the scalar loop can be collapsed or run sequentially.
pub struct ScalarDiffusion<'a> {
    pub scalars: Vec<&'a Field3>,
    pub km: &'a Field3,
    pub grid: &'a Grid,
    pub base: &'a BaseState,
    pub factor: f64,
}

impl ScalarDiffusion<'_> {
    #[inline(always)]
    fn eval_at(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        let s = self.km.shape();
        let c = s.at(i, j, k);
        let (sx, sxy, kt) = (s.sx(), s.sxy(), s.ktot);
        let phi = self.scalars[n].data();
        let km = self.km.data();
        let f = self.factor;
        let g = self.grid;
        let kh = |c: usize| f * km[c];
        let fx = 0.5 * (kh(c + 1) + kh(c)) * (phi[c + 1] - phi[c]) - 0.5 * (kh(c) + kh(c - 1)) * (phi[c] - phi[c - 1]);
        let fy = 0.5 * (kh(c + sx) + kh(c)) * (phi[c + sx] - phi[c]) - 0.5 * (kh(c) + kh(c - sx)) * (phi[c] - phi[c - sx]);
        // Flux through half level kk between cells cb (below) and ca (above).
        let flux = |kk: usize, cb: usize, ca: usize| {
            let khi = (g.dzf[kk] * kh(cb) + g.dzf[kk - 1] * kh(ca)) / (2.0 * g.dzh[kk]);
            self.base.rhoh[kk] * khi * (phi[ca] - phi[cb]) / g.dzh[kk]
        };
        let top = if k + 1 < kt { flux(k + 1, c, c + sxy) } else { 0.0 };
        let bot = if k > 0 { flux(k, c - sxy, c) } else { 0.0 };
        fx / g.dx2() + fy / g.dy2() + (top - bot) / (self.base.rhof[k] * g.dzf[k])
    }
}

impl Kernel for ScalarDiffusion<'_> {
    fn name(&self) -> &str {
        "diffuse_scalars"
    }
    fn extents(&self) -> Extents {
        Extents::of(self.km.shape(), self.scalars.len())
    }
    fn radius(&self) -> usize {
        1
    }
    fn input_halo(&self) -> usize {
        self.km.shape().halo
    }
    fn eval_interior(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        self.eval_at(n, i, j, k)
    }
}

/// Diffusion of the staggered velocity components with viscosity `km`.
///
/// Components 0, 1, 2 are u, v, w. Vertical fluxes of u and v vanish at both
/// ends (surface stress is applied separately); w has no tendency on the
/// surface face and sees w = 0 at the lid.
pub struct MomentumDiffusion<'a> {
    pub u: &'a Field3,
    pub v: &'a Field3,
    pub w: &'a Field3,
    pub km: &'a Field3,
    pub grid: &'a Grid,
    pub base: &'a BaseState,
}

impl MomentumDiffusion<'_> {
    /// Viscosity on the edge between cells `c`, `c - a`, `c - b`, `c - a - b`.
    #[inline(always)]
    fn edge(&self, c: usize, a: usize, b: usize) -> f64 {
        let km = self.km.data();
        0.25 * (km[c] + km[c - a] + km[c - b] + km[c - a - b])
    }

    /// Horizontal part for a component staggered by `st` (1 for u, sx for v,
    /// sxy for w); the flux along the staggered direction uses cell values,
    /// the other uses edge averages.
    #[inline(always)]
    fn horizontal(&self, f: &[f64], c: usize, st: usize) -> f64 {
        let s = self.u.shape();
        let sx = s.sx();
        let km = self.km.data();
        let g = self.grid;
        let along = |d: usize, c: usize| -> (f64, f64) {
            if d == st {
                (km[c], km[c - d])
            } else {
                (self.edge(c + d, st, d), self.edge(c, st, d))
            }
        };
        let (kx_e, kx_w) = along(1, c);
        let (ky_n, ky_s) = along(sx, c);
        (kx_e * (f[c + 1] - f[c]) - kx_w * (f[c] - f[c - 1])) / g.dx2() + (ky_n * (f[c + sx] - f[c]) - ky_s * (f[c] - f[c - sx])) / g.dy2()
    }

    #[inline(always)]
    fn eval_at(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        let s = self.u.shape();
        let c = s.at(i, j, k);
        let (sx, sxy, kt) = (s.sx(), s.sxy(), s.ktot);
        let g = self.grid;
        let (rhof, rhoh) = (&self.base.rhof, &self.base.rhoh);
        match n {
            0 | 1 => {
                let (f, st) = if n == 0 { (self.u.data(), 1) } else { (self.v.data(), sx) };
                let flux = |kk: usize, ca: usize| rhoh[kk] * self.edge(ca, st, sxy) * (f[ca] - f[ca - sxy]) / g.dzh[kk];
                let top = if k + 1 < kt { flux(k + 1, c + sxy) } else { 0.0 };
                let bot = if k > 0 { flux(k, c) } else { 0.0 };
                self.horizontal(f, c, st) + (top - bot) / (rhof[k] * g.dzf[k])
            }
            _ => {
                if k == 0 {
                    return 0.0;
                }
                let w = self.w.data();
                let km = self.km.data();
                let wtop = if k + 1 < kt { w[c + sxy] } else { 0.0 };
                let up = rhof[k] * km[c] * (wtop - w[c]) / g.dzf[k];
                let dn = rhof[k - 1] * km[c - sxy] * (w[c] - w[c - sxy]) / g.dzf[k - 1];
                self.horizontal(w, c, sxy) + (up - dn) / (rhoh[k] * g.dzh[k])
            }
        }
    }
}

impl Kernel for MomentumDiffusion<'_> {
    fn name(&self) -> &str {
        "diffuse_momentum"
    }
    fn extents(&self) -> Extents {
        Extents::of(self.u.shape(), 3)
    }
    fn radius(&self) -> usize {
        1
    }
    fn input_halo(&self) -> usize {
        self.u.shape().halo
    }
    fn eval_interior(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        self.eval_at(n, i, j, k)
    }
}

/// Local bound on the explicit diffusion eigenvalues of all subgrid kernels.
///
/// `dt * rate` below about 2.5 keeps RK3 stable; the printed vertical TKE
/// term behaves like a diffusion with coefficient `km dzf / dzh²`.
pub fn diffusion_rate(km: &Field3, grid: &Grid, cfg: &SubgridConfig) -> f64 {
    let s = km.shape();
    let mut rate = 0.0f64;
    let f = cfg.kh_factor().max(1.0);
    for k in 0..s.ktot {
        let dzh = grid.dzh[k].min(grid.dzh[k + 1]);
        let tke = 8.0 * cfg.nuf[k] * (1.0 / grid.dx2() + 1.0 / grid.dy2()) + 4.0 * grid.dzf[k] / (dzh * dzh);
        let scal = 4.0 * f * (1.0 / grid.dx2() + 1.0 / grid.dy2() + 1.0 / (dzh * grid.dzf[k]));
        let geo = tke.max(scal);
        for j in 0..s.jmax {
            let c0 = s.at(0, j, k);
            for &x in &km.data()[c0..c0 + s.imax] {
                rate = rate.max(x * geo);
            }
        }
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Shape;
    use crate::grid::{GridConfig, Vertical};

    fn grid() -> Grid {
        Grid::build(&GridConfig { itot: 4, jtot: 4, ktot: 6, dx: 50.0, dy: 50.0, vertical: Vertical::Uniform { height: 120.0 } }).unwrap()
    }

    #[test]
    fn neutral_floor_viscosity() {
        let g = grid();
        let s = Shape::new(4, 4, 6, 1);
        let cfg = SubgridConfig::new(6);
        let mut km = Field3::zeros(s);
        eddy_viscosity(&Field3::zeros(s), &Field3::zeros(s), &g, &cfg, &mut km);
        let expect = cfg.cm * g.filter_width(0) * cfg.e_min.sqrt();
        assert!(km.interior().iter().all(|&x| (x - expect).abs() < 1e-18 && x > 0.0));
    }

    #[test]
    fn stable_stratification_shortens_mixing_length() {
        let delta = 30.0;
        let l = mixing_length(0.01, 1e-2, delta, 0.76);
        assert!((l - 0.76 * 0.1 / 0.1).abs() < 1e-12);
        assert_eq!(mixing_length(0.01, -1e-4, delta, 0.76), delta);
    }
}
