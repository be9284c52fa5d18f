//! The production stencils as a tunable set over seeded random inputs.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{AdvectionScheme, MomentumAdvection, ScalarAdvection};
use crate::fields::{BaseState, BaseStateConfig, Field3, Shape};
use crate::grid::{Grid, GridConfig, Vertical};
use crate::sched::{ExecError, Executor, Kernel, Schedule, WriteMode};
use crate::subgrid::{MomentumDiffusion, ScalarDiffusion, SubgridConfig, TkeDiffusion, TkeSources};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TunableKernel {
    DiffuseTke,
    TkeSources,
    DiffuseScalars,
    DiffuseMomentum,
    Advec2nd,
    Advec6th,
    AdvecMomentum,
}

impl TunableKernel {
    pub const ALL: [TunableKernel; 7] = [
        TunableKernel::DiffuseTke,
        TunableKernel::TkeSources,
        TunableKernel::DiffuseScalars,
        TunableKernel::DiffuseMomentum,
        TunableKernel::Advec2nd,
        TunableKernel::Advec6th,
        TunableKernel::AdvecMomentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TunableKernel::DiffuseTke => "diffuse_tke",
            TunableKernel::TkeSources => "tke_sources",
            TunableKernel::DiffuseScalars => "diffuse_scalars",
            TunableKernel::DiffuseMomentum => "diffuse_momentum",
            TunableKernel::Advec2nd => "advec_2nd",
            TunableKernel::Advec6th => "advec_6th",
            TunableKernel::AdvecMomentum => "advec_momentum",
        }
    }

    /// Output components for `n_scalars` scalars.
    pub fn outputs(self, n_scalars: usize) -> usize {
        match self {
            TunableKernel::DiffuseTke | TunableKernel::TkeSources => 1,
            TunableKernel::DiffuseScalars | TunableKernel::Advec2nd | TunableKernel::Advec6th => n_scalars,
            TunableKernel::DiffuseMomentum | TunableKernel::AdvecMomentum => 3,
        }
    }
}

impl FromStr for TunableKernel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TunableKernel::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = TunableKernel::ALL.iter().map(|k| k.name()).collect();
            format!("unknown kernel `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Random but physically plausible inputs for every tunable kernel.
pub struct KernelInputs {
    pub grid: Grid,
    pub base: BaseState,
    pub cfg: SubgridConfig,
    pub u: Field3,
    pub v: Field3,
    pub w: Field3,
    pub e: Field3,
    pub km: Field3,
    pub n2: Field3,
    pub scalars: Vec<Field3>,
}

impl KernelInputs {
    /// Single-rank inputs with halo 3 (enough for every kernel); every cell,
    /// halos included, is drawn from a ChaCha stream seeded with `seed`.
    pub fn random(itot: usize, jtot: usize, ktot: usize, n_scalars: usize, seed: u64) -> KernelInputs {
        let gc = GridConfig { itot, jtot, ktot, dx: 100.0, dy: 100.0, vertical: Vertical::Uniform { height: 40.0 * ktot as f64 } };
        let grid = Grid::build(&gc).expect("kernel input grid");
        let base = BaseState::dry_isentropic(&grid, &BaseStateConfig::default());
        let shape = Shape::new(itot, jtot, ktot, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = |lo: f64, hi: f64| {
            let mut f = Field3::zeros(shape);
            for x in f.data_mut() {
                *x = rng.random_range(lo..hi);
            }
            f
        };
        let (u, v, w) = (field(-5.0, 5.0), field(-5.0, 5.0), field(-1.0, 1.0));
        let (e, km, n2) = (field(1e-3, 1.0), field(0.0, 50.0), field(-1e-4, 1e-4));
        let scalars = (0..n_scalars).map(|_| field(0.0, 1.0)).collect();
        KernelInputs { cfg: SubgridConfig::new(ktot), grid, base, u, v, w, e, km, n2, scalars }
    }

    pub fn shape(&self) -> Shape {
        self.u.shape()
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    /// Zeroed output fields for `kernel`.
    pub fn outputs(&self, kernel: TunableKernel) -> Vec<Field3> {
        vec![Field3::zeros(self.shape()); kernel.outputs(self.scalars.len())]
    }

    fn with_kernel<R>(&self, kernel: TunableKernel, f: &mut dyn FnMut(&dyn KernelRef) -> R) -> R {
        let sc: Vec<&Field3> = self.scalars.iter().collect();
        match kernel {
            TunableKernel::DiffuseTke => {
                f(&TkeDiffusion { e: &self.e, km: &self.km, grid: &self.grid, base: &self.base, nuf: &self.cfg.nuf })
            }
            TunableKernel::TkeSources => f(&TkeSources {
                u: &self.u,
                v: &self.v,
                w: &self.w,
                e: &self.e,
                km: &self.km,
                n2: &self.n2,
                grid: &self.grid,
                cfg: &self.cfg,
            }),
            TunableKernel::DiffuseScalars => {
                f(&ScalarDiffusion { scalars: sc, km: &self.km, grid: &self.grid, base: &self.base, factor: self.cfg.kh_factor() })
            }
            TunableKernel::DiffuseMomentum => {
                f(&MomentumDiffusion { u: &self.u, v: &self.v, w: &self.w, km: &self.km, grid: &self.grid, base: &self.base })
            }
            TunableKernel::Advec2nd | TunableKernel::Advec6th => {
                let scheme = if kernel == TunableKernel::Advec2nd { AdvectionScheme::Second } else { AdvectionScheme::Sixth };
                f(&ScalarAdvection { scalars: sc, u: &self.u, v: &self.v, w: &self.w, grid: &self.grid, base: &self.base, scheme })
            }
            TunableKernel::AdvecMomentum => f(&MomentumAdvection {
                u: &self.u,
                v: &self.v,
                w: &self.w,
                grid: &self.grid,
                base: &self.base,
                scheme: AdvectionScheme::Second,
            }),
        }
    }

    /// Runs `kernel` under `sched` into `out`.
    pub fn run(&self, kernel: TunableKernel, exec: &Executor, sched: &Schedule, out: &mut [Field3]) -> Result<(), ExecError> {
        let mut refs: Vec<&mut Field3> = out.iter_mut().collect();
        self.with_kernel(kernel, &mut |k| k.run(exec, sched, &mut refs))
    }

    /// Runs `kernel` with the plain sequential reference loops.
    pub fn run_reference(&self, kernel: TunableKernel, out: &mut [Field3]) -> Result<(), ExecError> {
        let mut refs: Vec<&mut Field3> = out.iter_mut().collect();
        self.with_kernel(kernel, &mut |k| k.reference(&mut refs))
    }
}

/// Object-safe view of a concrete kernel.
trait KernelRef {
    fn run(&self, exec: &Executor, sched: &Schedule, out: &mut [&mut Field3]) -> Result<(), ExecError>;
    fn reference(&self, out: &mut [&mut Field3]) -> Result<(), ExecError>;
}

impl<K: Kernel> KernelRef for K {
    fn run(&self, exec: &Executor, sched: &Schedule, out: &mut [&mut Field3]) -> Result<(), ExecError> {
        exec.execute(self, sched, out, WriteMode::Assign)
    }
    fn reference(&self, out: &mut [&mut Field3]) -> Result<(), ExecError> {
        Executor::new(1).execute_reference(self, out, WriteMode::Assign)
    }
}

/// Hash of the interior bit patterns of `fields`.
pub fn output_hash(fields: &[Field3]) -> u64 {
    let mut h = DefaultHasher::new();
    for f in fields {
        for x in f.interior() {
            x.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// A random schedule valid for extents `(ni, nj, nk)`, drawn from `rng`.
///
/// About a third carry a tile, a third a manual ij tile, and half split the
/// surface level into its own launch.
pub fn random_schedule(rng: &mut impl Rng, ni: usize, nj: usize, nk: usize) -> Schedule {
    let divisors = |n: usize| (1..=n).filter(|d| n % d == 0).collect::<Vec<_>>();
    let pick = |rng: &mut dyn rand::RngCore, v: &[usize]| v[rng.random_range(0..v.len())];
    let mut s = Schedule {
        team_count: if rng.random_bool(0.2) { None } else { Some(rng.random_range(256..=65535)) },
        lane_width: rng.random_range(16..=512),
        collapse: rng.random_range(2..=4),
        split_k1: rng.random_bool(0.5),
        scalar_mode: if rng.random_bool(0.5) { crate::sched::ScalarMode::Sequential } else { crate::sched::ScalarMode::Collapsed },
        ..Schedule::default()
    };
    match rng.random_range(0..3) {
        0 => {
            let (dx, dy, dz) = (divisors(ni), divisors(nj), divisors(nk));
            s.tile = Some([pick(rng, &dx), pick(rng, &dy), pick(rng, &dz)]);
        }
        1 => s.manual_tile = Some([rng.random_range(1..=ni), rng.random_range(1..=nj)]),
        _ => {}
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in TunableKernel::ALL {
            assert_eq!(k.name().parse::<TunableKernel>().unwrap(), k);
        }
        assert!("nope".parse::<TunableKernel>().is_err());
    }

    #[test]
    fn random_schedules_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            random_schedule(&mut rng, 8, 6, 4).validate_for(8, 6, 4).unwrap();
        }
    }
}
