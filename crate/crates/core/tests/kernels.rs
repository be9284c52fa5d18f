mod common;

use common::*;
use les_core::dynamics::{AdvectionScheme, ScalarAdvection};
use les_core::fields::{BaseState, BaseStateConfig, Field3, Shape};
use les_core::kernels::TunableKernel;
use les_core::sched::WriteMode;
use les_core::subgrid::{ScalarDiffusion, SubgridConfig, TkeDiffusion};
use les_core::{Executor, Grid, GridConfig, Schedule, Vertical};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_kernel_is_schedule_invariant() {
    for kernel in TunableKernel::ALL {
        let counts: &[usize] = if kernel.outputs(2) == 2 { &[1, 2, 10] } else { &[1] };
        for &n in counts {
            let bad = schedule_invariance(kernel, n, 17 + n as u64, 20);
            assert!(bad.is_empty(), "{} n={n}: {} schedules differ, first {}", kernel.name(), bad.len(), bad[0]);
        }
    }
}

#[test]
fn diffuse_tke_is_the_printed_loop() {
    for seed in 0..4 {
        assert!(listing1_matches(8, seed, 5), "seed {seed}");
    }
    assert!(listing1_matches(5, 9, 3));
}

fn uniform_setup(n: usize) -> (Grid, BaseState, Shape) {
    let g = Grid::build(&GridConfig { itot: n, jtot: n, ktot: n, dx: 10.0, dy: 10.0, vertical: Vertical::Uniform { height: 10.0 * n as f64 } }).unwrap();
    let mut base = BaseState::dry_isentropic(&g, &BaseStateConfig::default());
    base.rhof.iter_mut().for_each(|x| *x = 1.0);
    base.rhoh.iter_mut().for_each(|x| *x = 1.0);
    (g, base, Shape::new(n, n, n, 3))
}

#[test]
fn constant_tke_does_not_diffuse_on_uniform_grid() {
    let (g, base, s) = uniform_setup(6);
    let e = Field3::filled(s, 0.3);
    let km = Field3::filled(s, 2.0);
    let nuf = vec![2.0; 6];
    let k = TkeDiffusion { e: &e, km: &km, grid: &g, base: &base, nuf: &nuf };
    let mut out = Field3::filled(s, 1.0);
    Executor::new(1).execute(&k, &Schedule::default(), &mut [&mut out], WriteMode::Assign).unwrap();
    assert!(out.interior().iter().all(|&x| x == 0.0));
}

#[test]
fn scalar_diffusion_conserves_mass() {
    let (g, base, s) = uniform_setup(6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut phi = Field3::zeros(s);
    let mut km = Field3::zeros(s);
    randomize(&mut phi, &mut rng, 0.0, 1.0);
    randomize(&mut km, &mut rng, 0.1, 5.0);
    // Periodic halos so that lateral fluxes cancel.
    let wrap = |f: &mut Field3| {
        let g = f.clone();
        let n = 6isize;
        for k in 0..6 {
            for j in -3..n + 3 {
                for i in -3..n + 3 {
                    f.set(i, j, k, g.get(i.rem_euclid(n), j.rem_euclid(n), k));
                }
            }
        }
    };
    wrap(&mut phi);
    wrap(&mut km);
    let cfg = SubgridConfig::new(6);
    let k = ScalarDiffusion { scalars: vec![&phi], km: &km, grid: &g, base: &base, factor: cfg.kh_factor() };
    let mut out = Field3::zeros(s);
    Executor::new(1).execute(&k, &Schedule::default(), &mut [&mut out], WriteMode::Assign).unwrap();
    let total: f64 = out.interior().iter().sum();
    let scale: f64 = out.interior().iter().map(|x| x.abs()).sum();
    assert!(total.abs() <= 1e-12 * scale, "{total} vs {scale}");
}

#[test]
fn advection_of_a_constant_in_divergence_free_flow_vanishes() {
    for scheme in [AdvectionScheme::Second, AdvectionScheme::Sixth] {
        let (g, base, s) = uniform_setup(6);
        let u = Field3::filled(s, 3.0);
        let v = Field3::filled(s, -1.5);
        let w = Field3::zeros(s);
        let phi = Field3::filled(s, 4.0);
        let k = ScalarAdvection { scalars: vec![&phi], u: &u, v: &v, w: &w, grid: &g, base: &base, scheme };
        let mut out = Field3::filled(s, 1.0);
        Executor::new(1).execute(&k, &Schedule::default(), &mut [&mut out], WriteMode::Assign).unwrap();
        assert!(max_abs(&out.interior()) <= 1e-12);
    }
}
