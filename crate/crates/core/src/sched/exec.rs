use rayon::prelude::*;
use std::sync::Mutex;
use thiserror::Error;

use super::{ScalarMode, Schedule, ScheduleError};
use crate::fields::{Field3, Shape};

/// Loop extents of a kernel: `ni x nj x nk` cells for each of `nn` components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extents {
    pub ni: usize,
    pub nj: usize,
    pub nk: usize,
    pub nn: usize,
}

impl Extents {
    pub fn of(shape: Shape, nn: usize) -> Extents {
        Extents { ni: shape.imax, nj: shape.jmax, nk: shape.ktot, nn }
    }

    pub fn cells(&self) -> usize {
        self.ni * self.nj * self.nk
    }

    pub fn elements(&self) -> usize {
        self.cells() * self.nn
    }
}

/// A single-writer stencil: each call produces the value of one output element.
pub trait Kernel: Sync {
    fn name(&self) -> &str;
    fn extents(&self) -> Extents;
    /// Lateral stencil radius.
    fn radius(&self) -> usize;
    /// Halo width available on the inputs.
    fn input_halo(&self) -> usize;
    fn single_writer(&self) -> bool {
        true
    }
    /// Value at levels `k >= 1`.
    fn eval_interior(&self, n: usize, i: usize, j: usize, k: usize) -> f64;
    /// Value on the bottom level `k = 0`.
    fn eval_surface(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        self.eval_interior(n, i, j, k)
    }
    /// Unified body with the surface branch.
    fn eval(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        if k == 0 {
            self.eval_surface(n, i, j, k)
        } else {
            self.eval_interior(n, i, j, k)
        }
    }
}

/// A per-element map with an associative combine.
pub trait ReduceKernel: Sync {
    type Acc: Clone + Send + Sync;
    fn extents(&self) -> Extents;
    fn identity(&self) -> Self::Acc;
    fn map(&self, n: usize, i: usize, j: usize, k: usize) -> Self::Acc;
    fn combine(&self, a: &Self::Acc, b: &Self::Acc) -> Self::Acc;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    Assign,
    Accumulate,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("kernel {kernel} needs halo {radius} but inputs carry {halo}")]
    Halo { kernel: String, radius: usize, halo: usize },
    #[error("kernel {0} is not single-writer; submit it as a reduction")]
    NotSingleWriter(String),
    #[error("kernel {kernel} expects {expected} output fields, got {got}")]
    Outputs { kernel: String, expected: usize, got: usize },
    #[error("kernel {kernel} extents do not match output shape {shape:?}")]
    Extents { kernel: String, shape: Shape },
}

struct SyncPtr<T>(*mut T);
impl<T> Clone for SyncPtr<T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for SyncPtr<T> {}
unsafe impl<T> Send for SyncPtr<T> {}
unsafe impl<T> Sync for SyncPtr<T> {}

impl<T> SyncPtr<T> {
    #[inline(always)]
    fn get(self) -> *mut T {
        self.0
    }
}

/// Runs kernels under schedules on a pool of `workers` threads.
pub struct Executor {
    workers: usize,
    pool: Option<rayon::ThreadPool>,
    deterministic: bool,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).field("deterministic", &self.deterministic).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::new(1)
    }
}

#[derive(Clone, Copy)]
enum Nest {
    Plain,
    Manual([usize; 2]),
    Tiled([usize; 3]),
}

impl Executor {
    pub fn new(workers: usize) -> Executor {
        let workers = workers.max(1);
        let pool = (workers > 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("worker pool"));
        Executor { workers, pool, deterministic: true }
    }

    /// Reductions combine per-team partials in completion order instead of element order.
    pub fn nondeterministic(mut self) -> Executor {
        self.deterministic = false;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn auto_teams(&self) -> usize {
        4 * self.workers
    }

    /// Visits every element of `ext` (levels `k0..k0+nk`) exactly once.
    ///
    /// Each team builds its state with `init`, feeds it every element it owns
    /// through `body`, then hands it to `finish`.
    pub fn for_each_element<S, I, B, Fin>(
        &self,
        sched: &Schedule,
        ext: Extents,
        k0: usize,
        nk: usize,
        init: I,
        body: B,
        finish: Fin,
    ) where
        I: Fn() -> S + Sync,
        B: Fn(&mut S, usize, usize, usize, usize) + Sync,
        Fin: Fn(usize, S) + Sync,
    {
        if ext.nn == 0 || ext.ni == 0 || ext.nj == 0 || nk == 0 {
            return;
        }
        let seq = sched.scalar_mode == ScalarMode::Sequential;
        let nest = match (sched.tile, sched.manual_tile) {
            (Some(t), _) => Nest::Tiled(t),
            (None, Some(m)) => Nest::Manual(m),
            _ => Nest::Plain,
        };
        let (ni, nj, nn) = (ext.ni, ext.nj, ext.nn);
        // Outer loop dims of the nest; the scalar index leads unless it runs sequentially.
        let (mut dims, mut depth) = match nest {
            Nest::Plain => ([nk, nj, ni, 1], 3),
            Nest::Manual([ib, jb]) => ([nk, nj.div_ceil(jb), ni.div_ceil(ib), 1], 3),
            Nest::Tiled([tx, ty, tz]) => ([nk.div_ceil(tz), nj.div_ceil(ty), ni.div_ceil(tx), 1], 3),
        };
        if !seq {
            dims = [nn, dims[0], dims[1], dims[2]];
            depth = 4;
        }
        let (collapse, lane) = match nest {
            // A tile is one work item.
            Nest::Tiled(_) => (depth, 1),
            _ => ((sched.collapse as usize).min(depth), sched.lane_width as usize),
        };
        let prefix: usize = dims[..collapse].iter().product();
        let items = prefix.div_ceil(lane);
        let teams = sched.team_count.map_or(self.auto_teams(), |t| t as usize).clamp(1, items.max(1));

        let point = |state: &mut S, idx: [usize; 4]| {
            let (n_fixed, rest) = if seq { (None, [idx[0], idx[1], idx[2]]) } else { (Some(idx[0]), [idx[1], idx[2], idx[3]]) };
            let ns = n_fixed.map_or(0..nn, |n| n..n + 1);
            match nest {
                Nest::Plain => {
                    let [k, j, i] = rest;
                    for n in ns {
                        body(state, n, i, j, k + k0);
                    }
                }
                Nest::Manual([ib, jb]) => {
                    let [k, bj, bi] = rest;
                    for j in bj * jb..((bj + 1) * jb).min(nj) {
                        for i in bi * ib..((bi + 1) * ib).min(ni) {
                            for n in ns.clone() {
                                body(state, n, i, j, k + k0);
                            }
                        }
                    }
                }
                Nest::Tiled([tx, ty, tz]) => {
                    let [tk, tj, ti] = rest;
                    for k in tk * tz..((tk + 1) * tz).min(nk) {
                        for j in tj * ty..((tj + 1) * ty).min(nj) {
                            for i in ti * tx..((ti + 1) * tx).min(ni) {
                                for n in ns.clone() {
                                    body(state, n, i, j, k + k0);
                                }
                            }
                        }
                    }
                }
            }
        };

        let run_team = |team: usize| {
            let mut state = init();
            let mut item = team;
            while item < items {
                let start = item * lane;
                let end = (start + lane).min(prefix);
                walk(&dims, depth, collapse, start, end, &mut |idx| point(&mut state, idx));
                item += teams;
            }
            finish(team, state);
        };

        match &self.pool {
            Some(pool) if teams > 1 => pool.install(|| (0..teams).into_par_iter().for_each(run_team)),
            _ => (0..teams).for_each(run_team),
        }
    }

    fn check<K: Kernel>(&self, kernel: &K, sched: &Schedule, out: &[&mut Field3]) -> Result<Extents, ExecError> {
        let ext = kernel.extents();
        if !kernel.single_writer() {
            return Err(ExecError::NotSingleWriter(kernel.name().into()));
        }
        if kernel.radius() > kernel.input_halo() {
            return Err(ExecError::Halo { kernel: kernel.name().into(), radius: kernel.radius(), halo: kernel.input_halo() });
        }
        if out.len() != ext.nn {
            return Err(ExecError::Outputs { kernel: kernel.name().into(), expected: ext.nn, got: out.len() });
        }
        for f in out {
            let s = f.shape();
            if (s.imax, s.jmax, s.ktot) != (ext.ni, ext.nj, ext.nk) {
                return Err(ExecError::Extents { kernel: kernel.name().into(), shape: s });
            }
        }
        sched.validate_for(ext.ni, ext.nj, ext.nk)?;
        Ok(ext)
    }

    /// Runs `kernel` under `sched`, writing component `n` into `out[n]`.
    pub fn execute<K: Kernel>(&self, kernel: &K, sched: &Schedule, out: &mut [&mut Field3], mode: WriteMode) -> Result<(), ExecError> {
        let ext = self.check(kernel, sched, out)?;
        let ptrs: Vec<(SyncPtr<f64>, Shape)> = out.iter_mut().map(|f| (SyncPtr(f.data_mut().as_mut_ptr()), f.shape())).collect();
        let write = |n: usize, i: usize, j: usize, k: usize, v: f64| {
            let (p, s) = ptrs[n];
            // SAFETY: every (n, i, j, k) is visited exactly once per launch and
            // `at` stays inside the allocation for interior indices.
            unsafe {
                let p = p.get().add(s.at(i, j, k));
                match mode {
                    WriteMode::Assign => *p = v,
                    WriteMode::Accumulate => *p += v,
                }
            }
        };
        if sched.split_k1 {
            self.for_each_element(sched, ext, 0, 1.min(ext.nk), || (), |_, n, i, j, k| write(n, i, j, k, kernel.eval_surface(n, i, j, k)), |_, _| ());
            self.for_each_element(
                sched,
                ext,
                1,
                ext.nk.saturating_sub(1),
                || (),
                |_, n, i, j, k| write(n, i, j, k, kernel.eval_interior(n, i, j, k)),
                |_, _| (),
            );
        } else {
            self.for_each_element(sched, ext, 0, ext.nk, || (), |_, n, i, j, k| write(n, i, j, k, kernel.eval(n, i, j, k)), |_, _| ());
        }
        Ok(())
    }

    /// Plain sequential n-k-j-i loops with the unified body.
    pub fn execute_reference<K: Kernel>(&self, kernel: &K, out: &mut [&mut Field3], mode: WriteMode) -> Result<(), ExecError> {
        let ext = self.check(kernel, &Schedule::default(), out)?;
        for n in 0..ext.nn {
            for k in 0..ext.nk {
                for j in 0..ext.nj {
                    for i in 0..ext.ni {
                        let v = kernel.eval(n, i, j, k);
                        let dst = out[n].at_mut(i, j, k);
                        match mode {
                            WriteMode::Assign => *dst = v,
                            WriteMode::Accumulate => *dst += v,
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn mapped_buffer<R: ReduceKernel>(&self, kernel: &R, sched: &Schedule) -> Vec<R::Acc> {
        let ext = kernel.extents();
        let mut buf = vec![kernel.identity(); ext.elements()];
        let ptr = SyncPtr(buf.as_mut_ptr());
        self.for_each_element(
            sched,
            ext,
            0,
            ext.nk,
            || (),
            |_, n, i, j, k| {
                let at = ((n * ext.nk + k) * ext.nj + j) * ext.ni + i;
                // SAFETY: each canonical slot is written by exactly one element.
                unsafe { *ptr.get().add(at) = kernel.map(n, i, j, k) }
            },
            |_, _| (),
        );
        buf
    }

    /// Reduces `kernel` over all elements.
    ///
    /// In deterministic mode (the default) the combine runs in canonical
    /// n-k-j-i order, so the result equals the sequential fold for any schedule.
    pub fn execute_reduction<R: ReduceKernel>(&self, kernel: &R, sched: &Schedule) -> Result<R::Acc, ExecError> {
        let ext = kernel.extents();
        sched.validate_for(ext.ni, ext.nj, ext.nk)?;
        if self.deterministic {
            let buf = self.mapped_buffer(kernel, sched);
            Ok(buf.iter().fold(kernel.identity(), |a, b| kernel.combine(&a, b)))
        } else {
            let partials = Mutex::new(Vec::new());
            self.for_each_element(
                sched,
                ext,
                0,
                ext.nk,
                || kernel.identity(),
                |acc, n, i, j, k| *acc = kernel.combine(acc, &kernel.map(n, i, j, k)),
                |_, acc| partials.lock().unwrap().push(acc),
            );
            Ok(partials.into_inner().unwrap().iter().fold(kernel.identity(), |a, b| kernel.combine(&a, b)))
        }
    }

    /// One reduction result per level `k`, each folded in canonical order.
    pub fn execute_level_reduction<R: ReduceKernel>(&self, kernel: &R, sched: &Schedule) -> Result<Vec<R::Acc>, ExecError> {
        let ext = kernel.extents();
        sched.validate_for(ext.ni, ext.nj, ext.nk)?;
        let buf = self.mapped_buffer(kernel, sched);
        let plane = ext.ni * ext.nj;
        let mut out = vec![kernel.identity(); ext.nk];
        for n in 0..ext.nn {
            for (k, acc) in out.iter_mut().enumerate() {
                let start = (n * ext.nk + k) * plane;
                for v in &buf[start..start + plane] {
                    *acc = kernel.combine(acc, v);
                }
            }
        }
        Ok(out)
    }
}

/// Visits prefix points `start..end` of the first `collapse` dims, expanding
/// the remaining dims fully for each.
fn walk(dims: &[usize; 4], depth: usize, collapse: usize, start: usize, end: usize, f: &mut dyn FnMut([usize; 4])) {
    let mut idx = [0usize; 4];
    let mut rem = start;
    for d in (0..collapse).rev() {
        idx[d] = rem % dims[d];
        rem /= dims[d];
    }
    for _ in start..end {
        inner(dims, depth, collapse, &mut idx, f);
        for d in (0..collapse).rev() {
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn inner(dims: &[usize; 4], depth: usize, d: usize, idx: &mut [usize; 4], f: &mut dyn FnMut([usize; 4])) {
    if d == depth {
        f(*idx);
        return;
    }
    for x in 0..dims[d] {
        idx[d] = x;
        inner(dims, depth, d + 1, idx, f);
    }
    idx[d] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        ext: Extents,
        hits: Vec<AtomicUsize>,
        unified: AtomicUsize,
    }

    impl Counting {
        fn new(ext: Extents) -> Counting {
            Counting { ext, hits: (0..ext.elements()).map(|_| AtomicUsize::new(0)).collect(), unified: AtomicUsize::new(0) }
        }
    }

    impl Kernel for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn extents(&self) -> Extents {
            self.ext
        }
        fn radius(&self) -> usize {
            0
        }
        fn input_halo(&self) -> usize {
            0
        }
        fn eval_interior(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
            let e = self.ext;
            self.hits[((n * e.nk + k) * e.nj + j) * e.ni + i].fetch_add(1, Ordering::Relaxed);
            (n * 1000 + k * 100 + j * 10 + i) as f64
        }
        fn eval_surface(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
            self.eval_interior(n, i, j, k) + 0.5
        }
        fn eval(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
            self.unified.fetch_add(1, Ordering::Relaxed);
            if k == 0 {
                self.eval_surface(n, i, j, k)
            } else {
                self.eval_interior(n, i, j, k)
            }
        }
    }

    fn schedules() -> Vec<Schedule> {
        let mut v = Vec::new();
        for s in [
            "collapse=2",
            "collapse=3 lane_width=16",
            "collapse=4 lane_width=512 team_count=256",
            "collapse=2 scalar_mode=sequential team_count=300",
            "tile=4,2,3",
            "tile=3,5,64 scalar_mode=sequential",
            "manual_tile=2,3 collapse=3",
            "manual_tile=4,4 collapse=4 scalar_mode=sequential lane_width=17",
            "split_k1=true collapse=3",
        ] {
            v.push(s.parse().unwrap());
        }
        v
    }

    #[test]
    fn every_element_visited_once() {
        let ext = Extents { ni: 6, nj: 5, nk: 3, nn: 2 };
        for workers in [1, 3] {
            let ex = Executor::new(workers);
            for s in schedules() {
                let k = Counting::new(ext);
                let shape = Shape::new(6, 5, 3, 0);
                let mut a = Field3::zeros(shape);
                let mut b = Field3::zeros(shape);
                let res = ex.execute(&k, &s, &mut [&mut a, &mut b], WriteMode::Assign);
                if s.tile.is_some_and(|t| t[0] == 4) {
                    assert!(res.is_err());
                    continue;
                }
                res.unwrap();
                assert!(k.hits.iter().all(|h| h.load(Ordering::Relaxed) == 1), "{s}");
                assert_eq!(a.at(2, 3, 0), 32.5);
                assert_eq!(b.at(1, 4, 2), 1241.0);
                if s.split_k1 {
                    assert_eq!(k.unified.load(Ordering::Relaxed), 0);
                }
            }
        }
    }

    struct Ones(Extents);
    impl ReduceKernel for Ones {
        type Acc = f64;
        fn extents(&self) -> Extents {
            self.0
        }
        fn identity(&self) -> f64 {
            0.0
        }
        fn map(&self, _: usize, _: usize, _: usize, _: usize) -> f64 {
            1.0
        }
        fn combine(&self, a: &f64, b: &f64) -> f64 {
            a + b
        }
    }

    #[test]
    fn reductions_count_cells() {
        let ext = Extents { ni: 10, nj: 10, nk: 10, nn: 1 };
        let ex = Executor::new(2);
        for s in schedules() {
            if s.tile.is_some_and(|t| t[0] == 4 || t[0] == 3) {
                continue;
            }
            assert_eq!(ex.execute_reduction(&Ones(ext), &s).unwrap(), 1000.0);
            assert_eq!(ex.execute_level_reduction(&Ones(ext), &s).unwrap(), vec![100.0; 10]);
        }
        let nd = Executor::new(2).nondeterministic();
        assert_eq!(nd.execute_reduction(&Ones(ext), &Schedule::default()).unwrap(), 1000.0);
    }

    #[test]
    fn rejects_bad_submissions() {
        struct Wide;
        impl Kernel for Wide {
            fn name(&self) -> &str {
                "wide"
            }
            fn extents(&self) -> Extents {
                Extents { ni: 4, nj: 4, nk: 4, nn: 1 }
            }
            fn radius(&self) -> usize {
                3
            }
            fn input_halo(&self) -> usize {
                1
            }
            fn eval_interior(&self, _: usize, _: usize, _: usize, _: usize) -> f64 {
                0.0
            }
        }
        let mut f = Field3::zeros(Shape::new(4, 4, 4, 1));
        let ex = Executor::default();
        assert!(matches!(ex.execute(&Wide, &Schedule::default(), &mut [&mut f], WriteMode::Assign), Err(ExecError::Halo { .. })));
        assert!(matches!(ex.execute(&Wide, &Schedule::default(), &mut [], WriteMode::Assign), Err(ExecError::Halo { .. })));
    }
}
