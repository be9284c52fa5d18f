//! FFT-based pressure solver for the anelastic continuity constraint.
//!
//! Physical data lives in z-pencils. The forward transform runs
//! Z -> X (FFT in x) -> Y (FFT in y) -> Z, the vertical tridiagonal systems
//! are solved per spectral column, and the backward transform reverses the
//! chain. Spectral slots use the half-complex layout in both directions.

pub mod fft;
pub mod transpose;
pub mod tridiag;

use thiserror::Error;

use crate::fields::{BaseState, Field3};
use crate::grid::{Decomposition, Grid};
use crate::comm::Comm;
use fft::{modified_wavenumbers, slot_mode, ComplexBacked, RealTransform, Scratch};
use transpose::{Layout, Orientation, Pencil, TransposePlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoissonError {
    #[error("zero pivot in the tridiagonal solve at mode ({mx}, {my}), level {k}")]
    ZeroPivot { mx: usize, my: usize, k: usize },
    #[error("data of length {got} does not match the local pencil ({expected})")]
    Extents { got: usize, expected: usize },
}

pub struct PoissonSolver {
    layout: Layout,
    z: Pencil,
    z2x: TransposePlan,
    x2y: TransposePlan,
    y2z: TransposePlan,
    z2y: TransposePlan,
    y2x: TransposePlan,
    x2z: TransposePlan,
    fx: Box<dyn RealTransform>,
    fy: Box<dyn RealTransform>,
    lx: Vec<f64>,
    ly: Vec<f64>,
    a: Vec<f64>,
    b0: Vec<f64>,
    c: Vec<f64>,
    rhof: Vec<f64>,
}

impl PoissonSolver {
    pub fn new(grid: &Grid, decomp: &Decomposition, base: &BaseState, rank: usize) -> PoissonSolver {
        Self::with_transforms(grid, decomp, base, rank, Box::new(ComplexBacked::new(grid.itot)), Box::new(ComplexBacked::new(grid.jtot)))
    }

    /// Uses the given 1D transforms along x and y.
    pub fn with_transforms(
        grid: &Grid,
        decomp: &Decomposition,
        base: &BaseState,
        rank: usize,
        fx: Box<dyn RealTransform>,
        fy: Box<dyn RealTransform>,
    ) -> PoissonSolver {
        assert_eq!((fx.len(), fy.len()), (grid.itot, grid.jtot), "transform lengths must match the grid");
        let layout = Layout { itot: grid.itot, jtot: grid.jtot, ktot: grid.ktot, px: decomp.px, py: decomp.py };
        let plan = |a, b| TransposePlan::new(&layout, rank, a, b);
        use Orientation::{X, Y, Z};
        let kt = grid.ktot;
        let a: Vec<f64> = (0..kt).map(|k| if k == 0 { 0.0 } else { base.rhoh[k] / (grid.dzf[k] * grid.dzh[k]) }).collect();
        let c: Vec<f64> = (0..kt).map(|k| if k + 1 == kt { 0.0 } else { base.rhoh[k + 1] / (grid.dzf[k] * grid.dzh[k + 1]) }).collect();
        let b0 = (0..kt).map(|k| -a[k] - c[k]).collect();
        PoissonSolver {
            layout,
            z: layout.pencil(Z, rank),
            z2x: plan(Z, X),
            x2y: plan(X, Y),
            y2z: plan(Y, Z),
            z2y: plan(Z, Y),
            y2x: plan(Y, X),
            x2z: plan(X, Z),
            fx,
            fy,
            lx: modified_wavenumbers(grid.itot, grid.dx),
            ly: modified_wavenumbers(grid.jtot, grid.dy),
            a,
            b0,
            c,
            rhof: base.rhof.clone(),
        }
    }

    /// This rank's z-pencil.
    pub fn pencil(&self) -> Pencil {
        self.z
    }

    fn check(&self, data: &[f64]) -> Result<(), PoissonError> {
        if data.len() != self.z.len() {
            return Err(PoissonError::Extents { got: data.len(), expected: self.z.len() });
        }
        Ok(())
    }

    /// Forward 2D transform of z-pencil data; the result is in z-pencil spectral layout.
    pub fn forward(&self, data: &[f64], comm: &Comm) -> Result<Vec<f64>, PoissonError> {
        self.check(data)?;
        let mut s = Scratch::default();
        let mut x = self.z2x.apply(data, comm);
        for line in x.chunks_exact_mut(self.layout.itot) {
            self.fx.forward(line, &mut s);
        }
        let mut y = self.x2y.apply(&x, comm);
        lines_y(&mut y, &self.x2y.dst, |line| self.fy.forward(line, &mut s));
        Ok(self.y2z.apply(&y, comm))
    }

    /// Backward 2D transform, normalized by `itot * jtot`.
    pub fn backward(&self, spec: &[f64], comm: &Comm) -> Result<Vec<f64>, PoissonError> {
        self.check(spec)?;
        let mut s = Scratch::default();
        let mut y = self.z2y.apply(spec, comm);
        lines_y(&mut y, &self.z2y.dst, |line| self.fy.backward(line, &mut s));
        let mut x = self.y2x.apply(&y, comm);
        for line in x.chunks_exact_mut(self.layout.itot) {
            self.fx.backward(line, &mut s);
        }
        let mut out = self.x2z.apply(&x, comm);
        let norm = (self.layout.itot * self.layout.jtot) as f64;
        for v in &mut out {
            *v /= norm;
        }
        Ok(out)
    }

    /// Solves every spectral column in place. The zero mode is pinned to `p[0] = 0`.
    pub fn tridiag(&self, spec: &mut [f64]) -> Result<(), PoissonError> {
        self.check(spec)?;
        let z = self.z;
        let kt = z.nk;
        let (mut d, mut b, mut work) = (vec![0.0; kt], vec![0.0; kt], vec![0.0; kt]);
        let plane = z.ni * z.nj;
        for jl in 0..z.nj {
            for il in 0..z.ni {
                let (gi, gj) = (z.i0 + il, z.j0 + jl);
                let lam = self.lx[gi] + self.ly[gj];
                let col = jl * z.ni + il;
                for k in 0..kt {
                    d[k] = spec[col + k * plane];
                    b[k] = self.b0[k] + self.rhof[k] * lam;
                }
                let zero_mode = gi == 0 && gj == 0;
                let first = usize::from(zero_mode);
                if zero_mode {
                    d[0] = 0.0;
                }
                tridiag::thomas(&self.a[first..], &b[first..], &self.c[first..], &mut d[first..], &mut work[first..]).map_err(|k| {
                    PoissonError::ZeroPivot { mx: slot_mode(gi, self.layout.itot), my: slot_mode(gj, self.layout.jtot), k: k + first }
                })?;
                for k in 0..kt {
                    spec[col + k * plane] = d[k];
                }
            }
        }
        Ok(())
    }

    /// Full solve of `L p = rhs` on z-pencil data.
    pub fn solve(&self, rhs: &[f64], comm: &Comm) -> Result<Vec<f64>, PoissonError> {
        let mut spec = self.forward(rhs, comm)?;
        self.tridiag(&mut spec)?;
        self.backward(&spec, comm)
    }
}

/// Runs `f` on every line along j of a y-pencil.
fn lines_y(data: &mut [f64], p: &Pencil, mut f: impl FnMut(&mut [f64])) {
    let mut line = vec![0.0; p.nj];
    for k in 0..p.nk {
        for i in 0..p.ni {
            let base = k * p.nj * p.ni + i;
            for (j, x) in line.iter_mut().enumerate() {
                *x = data[base + j * p.ni];
            }
            f(&mut line);
            for (j, x) in line.iter().enumerate() {
                data[base + j * p.ni] = *x;
            }
        }
    }
}

/// Anelastic divergence `div(rho u)` of the interior, i fastest.
///
/// Needs the east and north halos of u and v. The surface and top w are
/// treated as zero.
pub fn divergence(u: &Field3, v: &Field3, w: &Field3, base: &BaseState, grid: &Grid) -> Vec<f64> {
    let s = u.shape();
    let (sx, sxy) = (s.sx(), s.sxy());
    let (ud, vd, wd) = (u.data(), v.data(), w.data());
    let mut out = Vec::with_capacity(s.interior_cells());
    for k in 0..s.ktot {
        for j in 0..s.jmax {
            for i in 0..s.imax {
                let c = s.at(i, j, k);
                let wb = if k == 0 { 0.0 } else { base.rhoh[k] * wd[c] };
                let wt = if k + 1 == s.ktot { 0.0 } else { base.rhoh[k + 1] * wd[c + sxy] };
                let horiz = (ud[c + 1] - ud[c]) / grid.dx + (vd[c + sx] - vd[c]) / grid.dy;
                out.push(base.rhof[k] * horiz + (wt - wb) / grid.dzf[k]);
            }
        }
    }
    out
}

/// Right-hand side `div(rho u*) / dt`.
pub fn fill_rhs(u: &Field3, v: &Field3, w: &Field3, base: &BaseState, grid: &Grid, dt: f64) -> Vec<f64> {
    let mut rhs = divergence(u, v, w, base, grid);
    for x in &mut rhs {
        *x /= dt;
    }
    rhs
}

/// `u -= dt dp/dx` and likewise for v and w; w on the surface face is left alone.
///
/// Needs the west and south halos of p.
pub fn apply_correction(p: &Field3, u: &mut Field3, v: &mut Field3, w: &mut Field3, grid: &Grid, dt: f64) {
    let s = p.shape();
    let (sx, sxy) = (s.sx(), s.sxy());
    let pd = p.data();
    for k in 0..s.ktot {
        for j in 0..s.jmax {
            for i in 0..s.imax {
                let c = s.at(i, j, k);
                u.data_mut()[c] -= dt * (pd[c] - pd[c - 1]) / grid.dx;
                v.data_mut()[c] -= dt * (pd[c] - pd[c - sx]) / grid.dy;
                if k > 0 {
                    w.data_mut()[c] -= dt * (pd[c] - pd[c - sxy]) / grid.dzh[k];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::run_ranks;
    use crate::grid::{GridConfig, Vertical};

    #[test]
    fn transposes_round_trip_and_land_where_expected() {
        let g = Grid::build(&GridConfig { itot: 8, jtot: 12, ktot: 6, dx: 1.0, dy: 1.0, vertical: Vertical::Uniform { height: 6.0 } }).unwrap();
        for (px, py) in [(1, 1), (2, 2), (4, 1), (2, 3)] {
            let d = Decomposition::new(&g, px, py, 1).unwrap();
            let layout = Layout { itot: 8, jtot: 12, ktot: 6, px, py };
            run_ranks(px * py, false, |comm| {
                let r = comm.rank();
                let z = layout.pencil(Orientation::Z, r);
                let tag = |i: usize, j: usize, k: usize| ((k * 12 + j) * 8 + i) as f64;
                let mut data = vec![0.0; z.len()];
                for k in 0..z.nk {
                    for j in z.j0..z.j0 + z.nj {
                        for i in z.i0..z.i0 + z.ni {
                            data[z.index(i, j, k)] = tag(i, j, k);
                        }
                    }
                }
                let mut cur = data.clone();
                for (a, b) in [(Orientation::Z, Orientation::X), (Orientation::X, Orientation::Y), (Orientation::Y, Orientation::Z)] {
                    let plan = TransposePlan::new(&layout, r, a, b);
                    cur = plan.apply(&cur, comm);
                    let p = plan.dst;
                    for k in p.k0..p.k0 + p.nk {
                        for j in p.j0..p.j0 + p.nj {
                            for i in p.i0..p.i0 + p.ni {
                                assert_eq!(cur[p.index(i, j, k)], tag(i, j, k));
                            }
                        }
                    }
                }
                assert_eq!(cur, data);
                let _ = &d;
                Ok::<_, ()>(())
            })
            .unwrap();
        }
    }
}
