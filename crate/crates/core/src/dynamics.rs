//! Flux-form advection, time-step control, surface drag and the RK3 driver.

use std::str::FromStr;

use crate::comm::Comm;
use crate::exact::{global_sums, ExactSum};
use crate::fields::{BaseState, Field3, Shape};
use crate::grid::Grid;
use crate::sched::{Extents, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdvectionScheme {
    Second,
    Sixth,
}

impl AdvectionScheme {
    pub fn order(self) -> u32 {
        match self {
            AdvectionScheme::Second => 2,
            AdvectionScheme::Sixth => 6,
        }
    }

    /// Lateral halo width the scheme reads.
    pub fn halo(self) -> usize {
        match self {
            AdvectionScheme::Second => 1,
            AdvectionScheme::Sixth => 3,
        }
    }

    pub fn from_order(order: u32) -> Option<AdvectionScheme> {
        match order {
            2 => Some(AdvectionScheme::Second),
            6 => Some(AdvectionScheme::Sixth),
            _ => None,
        }
    }
}

impl FromStr for AdvectionScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<u32>().ok().and_then(AdvectionScheme::from_order).ok_or_else(|| format!("advection order must be 2 or 6, got `{s}`"))
    }
}

/// Sixth-order face value from the six cell values around the face, ordered
/// west to east. With cell averages as input it returns the exact point value
/// at the face for polynomials up to degree five.
#[inline]
pub fn interp6(p: [f64; 6]) -> f64 {
    (37.0 * (p[2] + p[3]) - 8.0 * (p[1] + p[4]) + (p[0] + p[5])) / 60.0
}

/// Value on the face between `d[c - st]` and `d[c]`.
#[inline(always)]
fn face(d: &[f64], c: usize, st: usize, scheme: AdvectionScheme) -> f64 {
    match scheme {
        AdvectionScheme::Second => 0.5 * (d[c - st] + d[c]),
        AdvectionScheme::Sixth => interp6([d[c - 3 * st], d[c - 2 * st], d[c - st], d[c], d[c + st], d[c + 2 * st]]),
    }
}

/// Advection of `nn` cell-centred scalars: `-(1/rhof) div(rho u phi)`.
pub struct ScalarAdvection<'a> {
    pub scalars: Vec<&'a Field3>,
    pub u: &'a Field3,
    pub v: &'a Field3,
    pub w: &'a Field3,
    pub grid: &'a Grid,
    pub base: &'a BaseState,
    pub scheme: AdvectionScheme,
}

impl ScalarAdvection<'_> {
    #[inline(always)]
    fn tend(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        let s = self.u.shape();
        let c = s.at(i, j, k);
        let (sx, sxy) = (s.sx(), s.sxy());
        let phi = self.scalars[n].data();
        let (u, v, w) = (self.u.data(), self.v.data(), self.w.data());
        let sch = self.scheme;
        let fx = u[c + 1] * face(phi, c + 1, 1, sch) - u[c] * face(phi, c, 1, sch);
        let fy = v[c + sx] * face(phi, c + sx, sx, sch) - v[c] * face(phi, c, sx, sch);
        let top = if k + 1 < s.ktot { self.base.rhoh[k + 1] * w[c + sxy] * 0.5 * (phi[c] + phi[c + sxy]) } else { 0.0 };
        let bot = if k > 0 { self.base.rhoh[k] * w[c] * 0.5 * (phi[c - sxy] + phi[c]) } else { 0.0 };
        -fx / self.grid.dx - fy / self.grid.dy - (top - bot) / (self.base.rhof[k] * self.grid.dzf[k])
    }
}

impl Kernel for ScalarAdvection<'_> {
    fn name(&self) -> &str {
        match self.scheme {
            AdvectionScheme::Second => "advec_2nd",
            AdvectionScheme::Sixth => "advec_6th",
        }
    }
    fn extents(&self) -> Extents {
        Extents::of(self.u.shape(), self.scalars.len())
    }
    fn radius(&self) -> usize {
        self.scheme.halo()
    }
    fn input_halo(&self) -> usize {
        self.u.shape().halo
    }
    fn eval_interior(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        self.tend(n, i, j, k)
    }
}

/// Momentum advection; components 0, 1, 2 are the u, v, w tendencies.
///
/// The advecting velocity is a two-point average; the advected component
/// uses the scheme's face interpolation horizontally and a two-point
/// average vertically. w has no tendency on the surface face.
pub struct MomentumAdvection<'a> {
    pub u: &'a Field3,
    pub v: &'a Field3,
    pub w: &'a Field3,
    pub grid: &'a Grid,
    pub base: &'a BaseState,
    pub scheme: AdvectionScheme,
}

impl MomentumAdvection<'_> {
    #[inline(always)]
    fn tend_u(&self, c: usize, k: usize, s: Shape) -> f64 {
        let (sx, sxy, sch) = (s.sx(), s.sxy(), self.scheme);
        let (u, v, w) = (self.u.data(), self.v.data(), self.w.data());
        let fx_e = 0.5 * (u[c] + u[c + 1]) * face(u, c + 1, 1, sch);
        let fx_w = 0.5 * (u[c - 1] + u[c]) * face(u, c, 1, sch);
        let fy_n = 0.5 * (v[c + sx - 1] + v[c + sx]) * face(u, c + sx, sx, sch);
        let fy_s = 0.5 * (v[c - 1] + v[c]) * face(u, c, sx, sch);
        let top = if k + 1 < s.ktot {
            self.base.rhoh[k + 1] * 0.5 * (w[c + sxy - 1] + w[c + sxy]) * 0.5 * (u[c] + u[c + sxy])
        } else {
            0.0
        };
        let bot = if k > 0 { self.base.rhoh[k] * 0.5 * (w[c - 1] + w[c]) * 0.5 * (u[c - sxy] + u[c]) } else { 0.0 };
        -(fx_e - fx_w) / self.grid.dx - (fy_n - fy_s) / self.grid.dy - (top - bot) / (self.base.rhof[k] * self.grid.dzf[k])
    }

    #[inline(always)]
    fn tend_v(&self, c: usize, k: usize, s: Shape) -> f64 {
        let (sx, sxy, sch) = (s.sx(), s.sxy(), self.scheme);
        let (u, v, w) = (self.u.data(), self.v.data(), self.w.data());
        let fx_e = 0.5 * (u[c + 1 - sx] + u[c + 1]) * face(v, c + 1, 1, sch);
        let fx_w = 0.5 * (u[c - sx] + u[c]) * face(v, c, 1, sch);
        let fy_n = 0.5 * (v[c] + v[c + sx]) * face(v, c + sx, sx, sch);
        let fy_s = 0.5 * (v[c - sx] + v[c]) * face(v, c, sx, sch);
        let top = if k + 1 < s.ktot {
            self.base.rhoh[k + 1] * 0.5 * (w[c + sxy - sx] + w[c + sxy]) * 0.5 * (v[c] + v[c + sxy])
        } else {
            0.0
        };
        let bot = if k > 0 { self.base.rhoh[k] * 0.5 * (w[c - sx] + w[c]) * 0.5 * (v[c - sxy] + v[c]) } else { 0.0 };
        -(fx_e - fx_w) / self.grid.dx - (fy_n - fy_s) / self.grid.dy - (top - bot) / (self.base.rhof[k] * self.grid.dzf[k])
    }

    /// Valid for `k >= 1` only.
    #[inline(always)]
    fn tend_w(&self, c: usize, k: usize, s: Shape) -> f64 {
        let (sx, sxy, sch) = (s.sx(), s.sxy(), self.scheme);
        let (u, v, w) = (self.u.data(), self.v.data(), self.w.data());
        let fx_e = 0.5 * (u[c + 1 - sxy] + u[c + 1]) * face(w, c + 1, 1, sch);
        let fx_w = 0.5 * (u[c - sxy] + u[c]) * face(w, c, 1, sch);
        let fy_n = 0.5 * (v[c + sx - sxy] + v[c + sx]) * face(w, c + sx, sx, sch);
        let fy_s = 0.5 * (v[c - sxy] + v[c]) * face(w, c, sx, sch);
        let wtop = if k + 1 < s.ktot { w[c + sxy] } else { 0.0 };
        let fz_up = self.base.rhof[k] * 0.25 * (w[c] + wtop) * (w[c] + wtop);
        let fz_dn = self.base.rhof[k - 1] * 0.25 * (w[c - sxy] + w[c]) * (w[c - sxy] + w[c]);
        -(fx_e - fx_w) / self.grid.dx - (fy_n - fy_s) / self.grid.dy - (fz_up - fz_dn) / (self.base.rhoh[k] * self.grid.dzh[k])
    }
}

impl Kernel for MomentumAdvection<'_> {
    fn name(&self) -> &str {
        "advec_momentum"
    }
    fn extents(&self) -> Extents {
        Extents::of(self.u.shape(), 3)
    }
    fn radius(&self) -> usize {
        self.scheme.halo()
    }
    fn input_halo(&self) -> usize {
        self.u.shape().halo
    }
    fn eval_interior(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        let s = self.u.shape();
        let c = s.at(i, j, k);
        match n {
            0 => self.tend_u(c, k, s),
            1 => self.tend_v(c, k, s),
            _ => self.tend_w(c, k, s),
        }
    }
    fn eval_surface(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        let s = self.u.shape();
        let c = s.at(i, j, k);
        match n {
            0 => self.tend_u(c, k, s),
            1 => self.tend_v(c, k, s),
            _ => 0.0,
        }
    }
}

/// Local maximum of `|u|/dx + |v|/dy + |w|/dzf` over interior cells.
pub fn local_cfl_rate(u: &Field3, v: &Field3, w: &Field3, grid: &Grid) -> f64 {
    let s = u.shape();
    let mut rate = 0.0f64;
    for k in 0..s.ktot {
        for j in 0..s.jmax {
            let c0 = s.at(0, j, k);
            for c in c0..c0 + s.imax {
                let r = u.data()[c].abs() / grid.dx + v.data()[c].abs() / grid.dy + w.data()[c].abs() / grid.dzf[k];
                if r.is_nan() {
                    return f64::NAN;
                }
                rate = rate.max(r);
            }
        }
    }
    rate
}

/// `min(dt_max, cfl_max / max rate)`, reduced over all ranks.
pub fn compute_dt(u: &Field3, v: &Field3, w: &Field3, grid: &Grid, cfl_max: f64, dt_max: f64, comm: &Comm) -> f64 {
    let rate = comm.max_f64(local_cfl_rate(u, v, w, grid));
    dt_from_rate(rate, cfl_max, dt_max)
}

pub fn dt_from_rate(rate: f64, limit: f64, dt_max: f64) -> f64 {
    if rate > 0.0 {
        dt_max.min(limit / rate)
    } else {
        dt_max
    }
}

/// Wicker-Skamarock substep fractions.
pub const RK3_FRACTIONS: [f64; 3] = [1.0 / 3.0, 0.5, 1.0];

/// A system advanced by [`rk3_step`].
pub trait RkSystem {
    type Error;
    /// Records the start-of-step state.
    fn save(&mut self);
    /// Evaluates tendencies of the current state for `substep`.
    fn rhs(&mut self, substep: usize, dt: f64) -> Result<(), Self::Error>;
    /// Sets `state = saved + c_dt * tendency` and applies any constraint.
    fn update(&mut self, substep: usize, c_dt: f64) -> Result<(), Self::Error>;
}

/// One Wicker-Skamarock RK3 step: every substep restarts from the saved state.
pub fn rk3_step<S: RkSystem>(sys: &mut S, dt: f64) -> Result<(), S::Error> {
    sys.save();
    for (substep, frac) in RK3_FRACTIONS.iter().enumerate() {
        sys.rhs(substep, dt)?;
        sys.update(substep, frac * dt)?;
    }
    Ok(())
}

/// Applies bulk drag `-cd |U| u / dzf` at `k = 0` and returns the planar mean of `|tau|`.
///
/// Wind components are averaged to the respective face for `|U|`; the
/// diagnostic uses cell-centred winds.
#[allow(clippy::too_many_arguments)]
pub fn surface_momentum_flux(u: &Field3, v: &Field3, cd: f64, dzf0: f64, ut: &mut Field3, vt: &mut Field3, columns: usize, comm: &Comm) -> f64 {
    let s = u.shape();
    let (ud, vd, sx) = (u.data(), v.data(), s.sx());
    let mut diag = ExactSum::new();
    for j in 0..s.jmax {
        for i in 0..s.imax {
            let c = s.at(i, j, 0);
            let v_at_u = 0.25 * (vd[c] + vd[c - 1] + vd[c + sx] + vd[c + sx - 1]);
            let u_at_v = 0.25 * (ud[c] + ud[c + 1] + ud[c - sx] + ud[c - sx + 1]);
            let speed_u = (ud[c] * ud[c] + v_at_u * v_at_u).sqrt();
            let speed_v = (vd[c] * vd[c] + u_at_v * u_at_v).sqrt();
            ut.data_mut()[c] -= cd * speed_u * ud[c] / dzf0;
            vt.data_mut()[c] -= cd * speed_v * vd[c] / dzf0;
            let uc = 0.5 * (ud[c] + ud[c + 1]);
            let vc = 0.5 * (vd[c] + vd[c + sx]);
            diag.add(cd * (uc * uc + vc * vc));
        }
    }
    global_sums(&[diag], comm)[0] / columns as f64
}
