//! The per-rank time loop and the run / weak-scaling drivers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::comm::{run_ranks, Comm, RankFailure};
use crate::config::Config;
use crate::dynamics::{self, AdvectionScheme, MomentumAdvection, RkSystem, ScalarAdvection};
use crate::exact::{global_sums, ExactSum};
use crate::fields::checkpoint::{self, CheckpointError, CheckpointMeta};
use crate::fields::{BaseState, Field3, FieldSet, GlobalFields};
use crate::grid::{Decomposition, Grid, GridError};
use crate::halo::{exchange_halos, HaloError};
use crate::microphys::{self, find_active_range_reduce, merge_ranges};
use crate::perf::{self, Timers, TimingReport};
use crate::poisson::{self, PoissonError, PoissonSolver};
use crate::sched::{ExecError, Executor, WriteMode};
use crate::subgrid::{self, MomentumDiffusion, ScalarDiffusion, TkeDiffusion, TkeSources};
use crate::thermo::{self, constants::{CP, LV}, ThermoError, ThermoFields};
use crate::verify::{self, ProfileStats, VerifyError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite values at step {step} (t = {time} s): {what}")]
    NonFinite { step: u64, time: f64, what: String },
    #[error("advection order {order} needs halo {need}, the decomposition has {have}")]
    Halo { order: u32, need: usize, have: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    HaloExchange(#[from] HaloError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Perf(#[from] perf::PerfError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint does not match the configured grid: {0}")]
    Restart(String),
    #[error("{0}")]
    Rank(String),
}

impl ModelError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, ModelError::NonFinite { .. } | ModelError::Thermo(crate::thermo::ThermoError::NonPhysical { .. }))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.display().to_string(), source }
}

fn rank_error(f: RankFailure<ModelError>) -> ModelError {
    match f {
        RankFailure::Error { error, .. } => error,
        other => ModelError::Rank(other.to_string()),
    }
}

/// Uniform deviate in [-1, 1) for global cell `idx` of random stream `stream`.
///
/// Keyed by the global index, so the value does not depend on the rank layout.
fn keyed_uniform(seed: u64, stream: u64, idx: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * idx as u128);
    rng.random_range(-1.0..1.0)
}

/// Initial profiles, random perturbations near the surface and a warm bubble,
/// as a global field set in checkpoint payload order.
pub fn initial_state(cfg: &Config, grid: &Grid) -> GlobalFields {
    let ph = &cfg.physics;
    let (it, jt, kt) = (grid.itot, grid.jtot, grid.ktot);
    let nsv = cfg.run.n_scalars;
    let n = it * jt * kt;
    let mut arrays = vec![vec![0.0; n]; 7 + nsv + 1];
    let (xc, yc) = (0.5 * it as f64 * grid.dx, 0.5 * jt as f64 * grid.dy);
    for k in 0..kt {
        let z = grid.zf[k];
        let above = (z - ph.ml_height).max(0.0);
        let thl0 = ph.thl_ml + ph.thl_lapse * above;
        let qt0 = if z < ph.ml_height { ph.qt_ml } else { (ph.qt_ml + ph.qt_lapse * above).max(ph.qt_min) };
        for j in 0..jt {
            for i in 0..it {
                let idx = (k * jt + j) * it + i;
                let (x, y) = ((i as f64 + 0.5) * grid.dx, (j as f64 + 0.5) * grid.dy);
                let r = ((x - xc).powi(2) + (y - yc).powi(2) + (z - ph.bubble_height).powi(2)).sqrt() / ph.bubble_radius;
                let bubble = if r < 1.0 { ph.bubble_amp * (0.5 * std::f64::consts::PI * r).cos().powi(2) } else { 0.0 };
                let (mut thl, mut qt) = (thl0 + bubble, qt0);
                if k < ph.noise_levels {
                    thl += ph.noise_thl * keyed_uniform(cfg.run.seed, 0, idx);
                    qt += ph.noise_qt * keyed_uniform(cfg.run.seed, 1, idx);
                }
                arrays[0][idx] = ph.u0;
                arrays[1][idx] = ph.v0;
                arrays[3][idx] = thl;
                arrays[4][idx] = qt.max(0.0);
                arrays[5][idx] = ph.e0.max(ph.subgrid.e_min);
                for s in 0..nsv {
                    arrays[7 + s][idx] = (-z / (500.0 * (s + 1) as f64)).exp();
                }
            }
        }
    }
    GlobalFields { itot: it, jtot: jt, ktot: kt, arrays }
}

/// Per-step diagnostics written to `timeseries.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub dt: f64,
    /// Planar-mean surface rain flux [kg m-2 s-1].
    pub surface_rain: f64,
    /// Planar mean of the surface stress magnitude [m2 s-2].
    pub friction: f64,
    pub max_w: f64,
}

/// One rank's share of a simulation.
pub struct Simulation<'a> {
    pub cfg: &'a Config,
    pub grid: Grid,
    pub decomp: Decomposition,
    pub base: BaseState,
    pub rank: usize,
    comm: &'a Comm,
    exec: Executor,
    poisson: PoissonSolver,
    pub fields: FieldSet,
    saved: Vec<Field3>,
    pub thermo: ThermoFields,
    km: Field3,
    n2: Field3,
    /// Neutral-stability upper bound on km, for the diffusion time-step limit.
    km_bound: Field3,
    n2_neutral: Field3,
    pub timers: Timers,
    pub time: f64,
    pub step: u64,
    pub stats: ProfileStats,
    next_sample: f64,
    pub history: Vec<StepRecord>,
    friction: f64,
    timing: bool,
}

/// True if any interior value of the fields is non-finite.
fn has_non_finite(fields: &[&Field3]) -> bool {
    fields.iter().any(|f| f.interior_any(|x| !x.is_finite()))
}

impl<'a> Simulation<'a> {
    /// Builds rank `comm.rank()` of the simulation from a global state.
    pub fn new(cfg: &'a Config, grid: Grid, decomp: Decomposition, global: &GlobalFields, comm: &'a Comm) -> Result<Simulation<'a>, ModelError> {
        let need = cfg.run.advection.halo();
        if decomp.halo < need {
            return Err(ModelError::Halo { order: cfg.run.advection.order(), need, have: decomp.halo });
        }
        let rank = comm.rank();
        let base = BaseState::dry_isentropic(&grid, &cfg.physics.base);
        let poisson = PoissonSolver::new(&grid, &decomp, &base, rank);
        let fields = checkpoint::scatter_global(global, &decomp, rank);
        let shape = fields.shape;
        let mut sim = Simulation {
            cfg,
            stats: ProfileStats::new(grid.zf.clone()),
            grid,
            decomp,
            base,
            rank,
            comm,
            exec: Executor::new(cfg.workers),
            poisson,
            saved: Vec::new(),
            thermo: ThermoFields::zeros(shape),
            km: Field3::zeros(shape),
            n2: Field3::zeros(shape),
            km_bound: Field3::zeros(shape),
            n2_neutral: Field3::zeros(shape),
            fields,
            timers: Timers::with_components(),
            time: 0.0,
            step: 0,
            next_sample: 0.0,
            history: Vec::new(),
            friction: 0.0,
            timing: true,
        };
        sim.exchange_all()?;
        Ok(sim)
    }

    fn columns(&self) -> usize {
        self.grid.columns()
    }

    /// Runs `f` under timer `name` (a no-op wrapper when timing is disabled).
    fn timed<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        if !self.timing {
            return f(self);
        }
        let t0 = self.comm.clock_us();
        let r = f(self);
        self.timers.add(name, self.comm.clock_us() - t0);
        r
    }

    fn exchange_all(&mut self) -> Result<(), ModelError> {
        let mut fs = self.fields.prognostic_mut();
        exchange_halos(&mut fs, &self.decomp, self.comm)?;
        Ok(())
    }

    fn nan_check(&self, what: &str) -> Result<(), ModelError> {
        let bad = has_non_finite(&self.fields.prognostic());
        if self.comm.any(bad) {
            return Err(ModelError::NonFinite { step: self.step, time: self.time, what: what.into() });
        }
        Ok(())
    }

    /// Time step from the advective CFL limit and the explicit diffusion limit.
    ///
    /// The diffusion limit uses km with the unreduced mixing length, so it
    /// depends on the current e only.
    pub fn compute_dt(&mut self) -> Result<f64, ModelError> {
        let r = &self.cfg.run;
        let f = &self.fields;
        let sg = &self.cfg.physics.subgrid;
        let cfl = self.comm.max_f64(dynamics::local_cfl_rate(&f.u, &f.v, &f.w, &self.grid));
        subgrid::eddy_viscosity(&f.e, &self.n2_neutral, &self.grid, sg, &mut self.km_bound);
        let diff = self.comm.max_f64(subgrid::diffusion_rate(&self.km_bound, &self.grid, sg));
        if cfl.is_nan() || diff.is_nan() || cfl.is_infinite() {
            return Err(ModelError::NonFinite { step: self.step, time: self.time, what: "velocity or viscosity".into() });
        }
        Ok(dynamics::dt_from_rate(cfl, r.cfl_max, r.dt_max).min(dynamics::dt_from_rate(diff, r.dnum_max, r.dt_max)))
    }

    /// One full time step; `dt_cap` bounds the step (used to land on an end time).
    pub fn advance(&mut self, dt_cap: f64) -> Result<(), ModelError> {
        let t0 = self.comm.clock_us();
        let dt = self.timed(perf::CHECKS, |s| -> Result<f64, ModelError> {
            s.nan_check("start of step")?;
            s.compute_dt()
        })?;
        let dt = dt.min(dt_cap);
        dynamics::rk3_step(self, dt)?;
        let rain = self.timed(perf::MICROPHYSICS, |s| {
            let flux = microphys::sediment(&mut s.fields.qr, &s.base.rhof, &s.grid, dt, &s.cfg.physics.micro, &s.exec);
            let mut acc = ExactSum::new();
            for x in flux {
                acc.add(x);
            }
            global_sums(&[acc], s.comm)[0] / s.columns() as f64
        });
        self.step += 1;
        self.time += dt;
        if self.timing {
            self.timers.add(perf::TIMESTEP_LOOP, self.comm.clock_us() - t0);
        }
        let max_w = self.comm.max_f64(self.fields.w.interior().iter().fold(0.0f64, |m, x| m.max(x.abs())));
        self.history.push(StepRecord { step: self.step, time: self.time, dt, surface_rain: rain, friction: self.friction, max_w });
        Ok(())
    }

    /// Samples profile statistics now.
    pub fn sample(&mut self) -> Result<(), ModelError> {
        self.exchange_all()?;
        thermo::diagnose(&self.fields.thl, &self.fields.qt, &self.base, self.cfg.run.n_iter, &mut self.thermo)?;
        let s = verify::profile_sample(&self.fields, &self.thermo, self.columns(), self.comm);
        self.stats.accumulate(&s);
        Ok(())
    }

    /// Samples if the model time has reached the next sampling instant.
    pub fn maybe_sample(&mut self) -> Result<(), ModelError> {
        if self.time + 1e-9 >= self.next_sample {
            self.sample()?;
            while self.next_sample <= self.time + 1e-9 {
                self.next_sample += self.cfg.run.stats_interval;
            }
        }
        Ok(())
    }

    /// Restarts statistics and timers, sampling from the current time on.
    pub fn reset_measurements(&mut self) {
        self.timers.reset();
        self.stats = ProfileStats::new(self.grid.zf.clone());
        self.history.clear();
        self.next_sample = self.time;
    }

    pub fn set_timing(&mut self, on: bool) {
        self.timing = on;
    }

    /// Max anelastic divergence of the current velocity relative to
    /// `max rho |u| / min(dx, dy, dzf)`.
    pub fn poisson_residual(&mut self) -> Result<f64, ModelError> {
        self.exchange_all()?;
        let f = &self.fields;
        let div = poisson::divergence(&f.u, &f.v, &f.w, &self.base, &self.grid);
        let dmax = self.comm.max_f64(div.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        let vmax = self.comm.max_f64(
            [&f.u, &f.v, &f.w].iter().flat_map(|x| x.interior()).fold(0.0f64, |m, x| m.max(x.abs())),
        );
        let rho = self.base.rhof.iter().copied().fold(0.0, f64::max);
        let h = self.grid.dzf.iter().copied().fold(self.grid.dx.min(self.grid.dy), f64::min);
        let scale = rho * vmax / h;
        Ok(if scale > 0.0 { dmax / scale } else { dmax })
    }

    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta::new(&self.decomp, self.fields.n_scalars(), self.time, self.step)
    }

    /// Writes this rank's file (and the manifest on rank 0) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let meta = self.checkpoint_meta();
        checkpoint::save_checkpoint(&self.fields, &meta, &checkpoint::rank_file(dir, self.rank))?;
        if self.rank == 0 {
            checkpoint::write_manifest(dir, &meta)?;
        }
        self.comm.barrier();
        Ok(())
    }

    fn project(&mut self, dt: f64) -> Result<(), ModelError> {
        let rhs = self.timed(perf::FILL_RHS, |s| -> Result<Vec<f64>, ModelError> {
            let f = &mut s.fields;
            exchange_halos(&mut [&mut f.u, &mut f.v], &s.decomp, s.comm)?;
            Ok(poisson::fill_rhs(&f.u, &f.v, &f.w, &s.base, &s.grid, dt))
        })?;
        let mut spec = self.timed(perf::FORWARD_FFT, |s| s.poisson.forward(&rhs, s.comm))?;
        self.timed(perf::TRIDIAGONAL, |s| s.poisson.tridiag(&mut spec))?;
        let p = self.timed(perf::BACKWARD_FFT, |s| s.poisson.backward(&spec, s.comm))?;
        self.timed(perf::APPLY_CORRECTION, |s| -> Result<(), ModelError> {
            let f = &mut s.fields;
            f.p.set_interior(&p);
            exchange_halos(&mut [&mut f.p], &s.decomp, s.comm)?;
            poisson::apply_correction(&f.p, &mut f.u, &mut f.v, &mut f.w, &s.grid, dt);
            Ok(())
        })
    }

    fn subgrid_tendencies(&mut self) -> Result<(), ModelError> {
        let sched = &self.cfg.schedules;
        let sg = &self.cfg.physics.subgrid;
        let FieldSet { u, v, w, thl, qt, e, qr, sv, tend, .. } = &mut self.fields;
        let (km, n2, grid, base, exec) = (&self.km, &self.n2, &self.grid, &self.base, &self.exec);
        let diff = TkeDiffusion { e, km, grid, base, nuf: &sg.nuf };
        exec.execute(&diff, &sched.get("diffuse_tke"), &mut [&mut tend.e], WriteMode::Accumulate)?;
        let src = TkeSources { u, v, w, e, km, n2, grid, cfg: sg };
        exec.execute(&src, &sched.get("tke_sources"), &mut [&mut tend.e], WriteMode::Accumulate)?;
        let mut scalars: Vec<&Field3> = vec![thl, qt, qr];
        scalars.extend(sv.iter());
        let sd = ScalarDiffusion { scalars, km, grid, base, factor: sg.kh_factor() };
        let mut outs: Vec<&mut Field3> = vec![&mut tend.thl, &mut tend.qt, &mut tend.qr];
        outs.extend(tend.sv.iter_mut());
        exec.execute(&sd, &sched.get("diffuse_scalars"), &mut outs, WriteMode::Accumulate)?;
        let md = MomentumDiffusion { u, v, w, km, grid, base };
        exec.execute(&md, &sched.get("diffuse_momentum"), &mut [&mut tend.u, &mut tend.v, &mut tend.w], WriteMode::Accumulate)?;
        Ok(())
    }

    fn advection_tendencies(&mut self) -> Result<(), ModelError> {
        let scheme = self.cfg.run.advection;
        let sched = &self.cfg.schedules;
        let FieldSet { u, v, w, thl, qt, e, qr, sv, tend, .. } = &mut self.fields;
        let (grid, base, exec) = (&self.grid, &self.base, &self.exec);
        let mut scalars: Vec<&Field3> = vec![thl, qt, e, qr];
        scalars.extend(sv.iter());
        let adv = ScalarAdvection { scalars, u, v, w, grid, base, scheme };
        let name = match scheme {
            AdvectionScheme::Second => "advec_2nd",
            AdvectionScheme::Sixth => "advec_6th",
        };
        let mut outs: Vec<&mut Field3> = vec![&mut tend.thl, &mut tend.qt, &mut tend.e, &mut tend.qr];
        outs.extend(tend.sv.iter_mut());
        exec.execute(&adv, &sched.get(name), &mut outs, WriteMode::Accumulate)?;
        let mom = MomentumAdvection { u, v, w, grid, base, scheme };
        exec.execute(&mom, &sched.get("advec_momentum"), &mut [&mut tend.u, &mut tend.v, &mut tend.w], WriteMode::Accumulate)?;
        Ok(())
    }

    fn radiation(&mut self) {
        let ph = &self.cfg.physics;
        let s = self.fields.shape;
        for k in 0..s.ktot {
            if self.grid.zf[k] >= ph.rad_top {
                continue;
            }
            let rate = ph.rad_rate / 86_400.0;
            for j in 0..s.jmax {
                for i in 0..s.imax {
                    *self.fields.tend.thl.at_mut(i, j, k) += rate;
                }
            }
        }
    }

    /// Coriolis acceleration relative to the geostrophic wind.
    fn ext_forces(&mut self) {
        let ph = &self.cfg.physics;
        let s = self.fields.shape;
        let sx = s.sx();
        let FieldSet { u, v, tend, .. } = &mut self.fields;
        let (ud, vd) = (u.data(), v.data());
        for k in 0..s.ktot {
            for j in 0..s.jmax {
                for i in 0..s.imax {
                    let c = s.at(i, j, k);
                    let v_at_u = 0.25 * (vd[c] + vd[c - 1] + vd[c + sx] + vd[c + sx - 1]);
                    let u_at_v = 0.25 * (ud[c] + ud[c + 1] + ud[c - sx] + ud[c - sx + 1]);
                    tend.u.data_mut()[c] += ph.fcor * (v_at_u - ph.vg);
                    tend.v.data_mut()[c] -= ph.fcor * (u_at_v - ph.ug);
                }
            }
        }
    }

    fn surface(&mut self) {
        let ph = &self.cfg.physics;
        let s = self.fields.shape;
        let FieldSet { u, v, tend, .. } = &mut self.fields;
        self.friction = dynamics::surface_momentum_flux(u, v, ph.cd, self.grid.dzf[0], &mut tend.u, &mut tend.v, self.grid.columns(), self.comm);
        let f = self.base.rhoh[0] / (self.base.rhof[0] * self.grid.dzf[0]);
        for j in 0..s.jmax {
            for i in 0..s.imax {
                *tend.thl.at_mut(i, j, 0) += ph.wthl * f;
                *tend.qt.at_mut(i, j, 0) += ph.wqt * f;
            }
        }
    }

    fn microphysics(&mut self, dt: f64) {
        let mc = &self.cfg.physics.micro;
        let s = self.fields.shape;
        let mask = microphys::active_mask(&self.thermo.ql, &self.fields.qr, mc);
        let local = find_active_range_reduce(&mask, s.imax, s.jmax, &self.exec, &self.cfg.schedules.get("range_reduction"));
        let range = self.comm.allgather(local).into_iter().fold(None, merge_ranges);
        let (qr_t, ql_t) = microphys::warm_rain_tendencies(&self.thermo.ql, &self.fields.qr, range, mc, Some(dt));
        let Some((lo, hi)) = range else { return };
        let tend = &mut self.fields.tend;
        for k in lo..=hi {
            let heat = LV / (CP * self.base.exner[k]);
            for j in 0..s.jmax {
                for i in 0..s.imax {
                    let c = s.at(i, j, k);
                    let dl = ql_t.data()[c];
                    tend.qr.data_mut()[c] += qr_t.data()[c];
                    tend.qt.data_mut()[c] += dl;
                    tend.thl.data_mut()[c] -= heat * dl;
                }
            }
        }
    }
}

impl RkSystem for Simulation<'_> {
    type Error = ModelError;

    fn save(&mut self) {
        let progs = self.fields.prognostic();
        if self.saved.len() != progs.len() {
            self.saved = progs.into_iter().cloned().collect();
            return;
        }
        for (dst, src) in self.saved.iter_mut().zip(progs) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    fn rhs(&mut self, substep: usize, dt: f64) -> Result<(), ModelError> {
        self.fields.tend.clear();
        self.timed(perf::HALO_EXCHANGE, |s| s.exchange_all())?;
        self.timed(perf::THERMODYNAMICS, |s| -> Result<(), ModelError> {
            thermo::diagnose(&s.fields.thl, &s.fields.qt, &s.base, s.cfg.run.n_iter, &mut s.thermo)?;
            let mean = thermo::planar_mean(&s.thermo.thv, s.columns(), s.comm);
            thermo::buoyancy(&s.thermo.thv, &mean, &mut s.fields.tend.w);
            Ok(())
        })?;
        self.timed(perf::SUBGRID, |s| {
            s.n2 = subgrid::stability(&s.thermo.thv, &s.grid, s.base.theta0);
            subgrid::eddy_viscosity(&s.fields.e, &s.n2, &s.grid, &s.cfg.physics.subgrid, &mut s.km);
        });
        self.timed(perf::HALO_EXCHANGE, |s| exchange_halos(&mut [&mut s.km], &s.decomp, s.comm))?;
        self.timed(perf::SUBGRID, |s| s.subgrid_tendencies())?;
        self.timed(perf::ADVECTION, |s| s.advection_tendencies())?;
        self.timed(perf::RADIATION, |s| s.radiation());
        self.timed(perf::EXT_FORCES, |s| s.ext_forces());
        self.timed(perf::SURFACE, |s| s.surface());
        self.timed(perf::MICROPHYSICS, |s| s.microphysics(dt));
        let _ = substep;
        Ok(())
    }

    fn update(&mut self, substep: usize, c_dt: f64) -> Result<(), ModelError> {
        self.timed(perf::TIME_STEPPING, |s| {
            let saved = std::mem::take(&mut s.saved);
            for ((f, t), old) in s.fields.prognostic_with_tend().into_iter().zip(&saved) {
                let sh = f.shape();
                for k in 0..sh.ktot {
                    for j in 0..sh.jmax {
                        let c0 = sh.at(0, j, k);
                        for c in c0..c0 + sh.imax {
                            f.data_mut()[c] = old.data()[c] + c_dt * t.data()[c];
                        }
                    }
                }
            }
            s.saved = saved;
        });
        self.timed(perf::POISSON, |s| s.project(c_dt))?;
        self.timed(perf::TIME_STEPPING, |s| {
            let e_min = s.cfg.physics.subgrid.e_min;
            s.fields.e.map_interior(|x| x.max(e_min));
            s.fields.qt.map_interior(|x| x.max(0.0));
            s.fields.qr.map_interior(|x| x.max(0.0));
        });
        if substep + 1 < dynamics::RK3_FRACTIONS.len() {
            self.timed(perf::CHECKS, |s| s.nan_check("RK substep"))?;
        }
        Ok(())
    }
}

/// Where a run starts from and where it writes.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub restart: Option<PathBuf>,
    /// Device label in the timing tables.
    pub device: String,
    /// Serialize rank compute phases (see `comm`).
    pub exclusive: bool,
}

/// What a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stats: ProfileStats,
    pub timers: Timers,
    pub steps: u64,
    pub time: f64,
    pub residual: f64,
    pub history: Vec<StepRecord>,
    pub cells: u64,
}

fn restart_state(dir: &Path, grid: &Grid, nsv: usize) -> Result<(GlobalFields, f64, u64), ModelError> {
    let (g, meta) = checkpoint::load_global(dir)?;
    if (g.itot, g.jtot, g.ktot) != (grid.itot, grid.jtot, grid.ktot) {
        return Err(ModelError::Restart(format!("{}x{}x{} vs {}x{}x{}", g.itot, g.jtot, g.ktot, grid.itot, grid.jtot, grid.ktot)));
    }
    if g.n_scalars() != nsv {
        return Err(ModelError::Restart(format!("{} scalars vs {nsv}", g.n_scalars())));
    }
    Ok((g, meta.time, meta.step))
}

/// Spin-up (if configured), then the measured run; writes all outputs.
pub fn run(cfg: &Config, opts: &RunOptions) -> Result<RunOutcome, ModelError> {
    let grid = Grid::build(&cfg.grid)?;
    let decomp = Decomposition::new(&grid, cfg.px, cfg.py, cfg.halo)?;
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let cfg_path = opts.out_dir.join("config.cfg");
    fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;
    let (global, t0, step0) = match &opts.restart {
        Some(dir) => restart_state(dir, &grid, cfg.run.n_scalars)?,
        None => (initial_state(cfg, &grid), 0.0, 0),
    };
    let spin_dir = opts.out_dir.join("spinup");
    let ckpt_dir = opts.out_dir.join("checkpoint");
    for d in [&spin_dir, &ckpt_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let outcomes = run_ranks(decomp.ranks(), opts.exclusive, |comm| -> Result<RunOutcome, ModelError> {
        let mut sim = Simulation::new(cfg, grid.clone(), decomp.clone(), &global, comm)?;
        sim.time = t0;
        sim.step = step0;
        if cfg.run.spinup_steps > 0 {
            sim.set_timing(false);
            for _ in 0..cfg.run.spinup_steps {
                sim.advance(f64::INFINITY)?;
            }
            sim.save(&spin_dir)?;
            sim.set_timing(true);
        }
        sim.reset_measurements();
        let start = sim.time;
        let end = start + 60.0 * cfg.run.model_minutes;
        sim.maybe_sample()?;
        loop {
            let done = match cfg.run.steps {
                Some(n) => sim.step - step0 - cfg.run.spinup_steps >= n,
                None => sim.time >= end - 1e-9,
            };
            if done {
                break;
            }
            let cap = if cfg.run.steps.is_some() { f64::INFINITY } else { end - sim.time };
            sim.advance(cap)?;
            sim.maybe_sample()?;
        }
        if cfg.run.checkpoint {
            sim.save(&ckpt_dir)?;
        }
        let residual = sim.poisson_residual()?;
        let timers = sim.timers.max_over_ranks(comm);
        Ok(RunOutcome {
            stats: sim.stats.clone(),
            timers,
            steps: sim.step - step0 - cfg.run.spinup_steps,
            time: sim.time,
            residual,
            history: sim.history.clone(),
            cells: grid.cells() as u64,
        })
    })
    .map_err(rank_error)?;
    let out = outcomes.into_iter().next().expect("at least one rank");
    write_outputs(cfg, opts, &out)?;
    Ok(out)
}

fn write_outputs(cfg: &Config, opts: &RunOptions, out: &RunOutcome) -> Result<(), ModelError> {
    let dir = &opts.out_dir;
    verify::write_profiles(&dir.join("profiles.csv"), &out.stats)?;
    let comp = TimingReport::components(&out.timers, &opts.device, out.steps, out.cells);
    perf::write_timings(&dir.join("timings.csv"), &perf::timing_rows(&comp, None)?)?;
    let pois = TimingReport::poisson(&out.timers, &opts.device, out.steps, out.cells);
    perf::write_timings(&dir.join("poisson_timings.csv"), &perf::timing_rows(&pois, None)?)?;
    let ts = dir.join("timeseries.csv");
    let mut w = csv::Writer::from_path(&ts).map_err(perf::PerfError::from)?;
    let csv_err = |e: csv::Error| ModelError::Perf(e.into());
    w.write_record(["step", "time_s", "dt_s", "surface_rain", "friction", "max_w"]).map_err(csv_err)?;
    for r in &out.history {
        w.write_record([r.step.to_string(), r.time.to_string(), r.dt.to_string(), r.surface_rain.to_string(), r.friction.to_string(), r.max_w.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&ts))?;
    let summary = dir.join("run_summary.csv");
    let rows = [
        ("ranks", (cfg.px * cfg.py).to_string()),
        ("steps", out.steps.to_string()),
        ("model_time_s", out.time.to_string()),
        ("cells", out.cells.to_string()),
        ("poisson_residual", format!("{:e}", out.residual)),
        ("timer_overhead_pct", format!("{:.3}", 100.0 * out.timers.overhead())),
        ("profile_samples", out.stats.samples.to_string()),
    ];
    let text: String = std::iter::once("key,value\n".to_string()).chain(rows.iter().map(|(k, v)| format!("{k},{v}\n"))).collect();
    fs::write(&summary, text).map_err(io_err(&summary))?;
    Ok(())
}

/// Weak-scaling sweep: for each N the configured grid is the per-rank
/// workload, duplicated over an N-rank layout. Returns per-N component
/// metrics per local cell and the local cell count.
///
/// The sweep over N repeats `rounds` times, alternating between ascending and
/// descending N so slow drifts in machine speed hit every N alike. Each rank
/// keeps its fastest step per component over all steps and rounds; the report
/// takes the max of those over ranks, scaled to `steps` steps.
pub fn scale(cfg: &Config, ns: &[usize], steps: u64, rounds: usize, device: &str) -> Result<Vec<(usize, TimingReport)>, ModelError> {
    let grid1 = Grid::build(&cfg.grid)?;
    let seed_state = initial_state(cfg, &grid1);
    // samples[slot][rank]: that rank's per-step timers over all rounds.
    let mut samples: Vec<Vec<Vec<Timers>>> = ns.iter().map(|&n| vec![Vec::new(); n]).collect();
    let mut cells = vec![0u64; ns.len()];
    for round in 0..rounds.max(1) {
        let order: Vec<usize> = if round % 2 == 0 { (0..ns.len()).collect() } else { (0..ns.len()).rev().collect() };
        for slot in order {
            let n = ns[slot];
            let (px, py) = layout_for(n);
            let grid = grid1.tiled(px, py);
            let decomp = Decomposition::new(&grid, px, py, cfg.halo)?;
            let global = seed_state.duplicate_periodic(px, py);
            let mut c = cfg.clone();
            c.px = px;
            c.py = py;
            cells[slot] = decomp.local_cells() as u64;
            let per_rank = run_ranks(n, true, |comm| -> Result<Vec<Timers>, ModelError> {
                let mut sim = Simulation::new(&c, grid.clone(), decomp.clone(), &global, comm)?;
                // One untimed step to warm caches and allocations.
                sim.set_timing(false);
                sim.advance(f64::INFINITY)?;
                sim.set_timing(true);
                sim.reset_measurements();
                let mut out = Vec::new();
                for _ in 0..steps {
                    sim.timers.reset();
                    sim.advance(f64::INFINITY)?;
                    out.push(sim.timers.clone());
                }
                Ok(out)
            })
            .map_err(rank_error)?;
            for (acc, s) in samples[slot].iter_mut().zip(per_rank) {
                acc.extend(s);
            }
        }
    }
    Ok(ns
        .iter()
        .zip(samples)
        .zip(cells)
        .map(|((&n, per_rank), c)| {
            let fastest = per_rank.iter().map(|s| s.iter().skip(1).fold(s[0].clone(), |m, t| m.min_with(t)));
            let worst = fastest.fold(Timers::new(), |m, t| m.max_with(&t));
            (n, TimingReport::components(&worst.scaled(steps as f64), device, steps, c))
        })
        .collect())
}

/// Most square `px x py = n` layout with `px >= py`.
pub fn layout_for(n: usize) -> (usize, usize) {
    let mut py = (n as f64).sqrt() as usize;
    while py > 1 && n % py != 0 {
        py -= 1;
    }
    (n / py.max(1), py.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        assert_eq!(layout_for(1), (1, 1));
        assert_eq!(layout_for(2), (2, 1));
        assert_eq!(layout_for(4), (2, 2));
        assert_eq!(layout_for(8), (4, 2));
    }

    #[test]
    fn keyed_noise_is_layout_free() {
        assert_eq!(keyed_uniform(7, 0, 12345), keyed_uniform(7, 0, 12345));
        assert_ne!(keyed_uniform(7, 0, 12345), keyed_uniform(7, 1, 12345));
        let x = keyed_uniform(7, 0, 3);
        assert!((-1.0..1.0).contains(&x));
    }
}
