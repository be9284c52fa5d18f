//! Field containers.
//!
//! A [`Field3`] holds one rank-local 3D array with a lateral halo of width
//! `h` and no vertical halo. Storage is i-fastest, then j, then k.

mod base;
pub mod checkpoint;

pub use base::{BaseState, BaseStateConfig};

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::grid::Decomposition;

/// Rank-local array extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub imax: usize,
    pub jmax: usize,
    pub ktot: usize,
    pub halo: usize,
}

impl Shape {
    pub fn new(imax: usize, jmax: usize, ktot: usize, halo: usize) -> Shape {
        Shape { imax, jmax, ktot, halo }
    }

    pub fn of(decomp: &Decomposition) -> Shape {
        Shape::new(decomp.imax, decomp.jmax, decomp.ktot, decomp.halo)
    }

    /// Stored extent along i, halos included.
    pub fn sx(&self) -> usize {
        self.imax + 2 * self.halo
    }

    pub fn sy(&self) -> usize {
        self.jmax + 2 * self.halo
    }

    /// Stride between consecutive k levels.
    pub fn sxy(&self) -> usize {
        self.sx() * self.sy()
    }

    pub fn len(&self) -> usize {
        self.sxy() * self.ktot
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interior_cells(&self) -> usize {
        self.imax * self.jmax * self.ktot
    }

    /// Linear index of interior-relative `(i, j, k)`; `i` and `j` may reach into the halo.
    #[inline(always)]
    pub fn idx(&self, i: isize, j: isize, k: usize) -> usize {
        let h = self.halo as isize;
        ((i + h) as usize) + ((j + h) as usize) * self.sx() + k * self.sxy()
    }

    /// Linear index of an interior cell.
    #[inline(always)]
    pub fn at(&self, i: usize, j: usize, k: usize) -> usize {
        (i + self.halo) + (j + self.halo) * self.sx() + k * self.sxy()
    }
}

/// Array storage whose start is placed at a staggered offset within a page,
/// so that fields streamed together do not alias in the cache.
struct Storage {
    buf: Vec<f64>,
    off: usize,
    len: usize,
}

const PAGE: usize = 4096;

static NEXT_SLOT: AtomicUsize = AtomicUsize::new(0);

impl Storage {
    fn filled(len: usize, value: f64) -> Storage {
        let buf = vec![value; len + PAGE / 8];
        let target = NEXT_SLOT.fetch_add(1, Ordering::Relaxed) * 576 % PAGE;
        let off = (target + PAGE - buf.as_ptr() as usize % PAGE) % PAGE / 8;
        Storage { buf, off, len }
    }
}

impl Deref for Storage {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.buf[self.off..self.off + self.len]
    }
}

impl DerefMut for Storage {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.buf[self.off..self.off + self.len]
    }
}

impl Clone for Storage {
    fn clone(&self) -> Storage {
        let mut out = Storage::filled(self.len, 0.0);
        out.copy_from_slice(self);
        out
    }
}

impl PartialEq for Storage {
    fn eq(&self, other: &Storage) -> bool {
        **self == **other
    }
}

impl std::fmt::Debug for Storage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        (**self).fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    shape: Shape,
    data: Storage,
}

impl Field3 {
    pub fn zeros(shape: Shape) -> Field3 {
        Field3::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Field3 {
        Field3 { shape, data: Storage::filled(shape.len(), value) }
    }

    /// Interior values from `f(i, j, k)`; halos are left at zero.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Field3 {
        let mut out = Field3::zeros(shape);
        for k in 0..shape.ktot {
            for j in 0..shape.jmax {
                for i in 0..shape.imax {
                    out.data[shape.at(i, j, k)] = f(i, j, k);
                }
            }
        }
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn get(&self, i: isize, j: isize, k: usize) -> f64 {
        self.data[self.shape.idx(i, j, k)]
    }

    #[inline(always)]
    pub fn set(&mut self, i: isize, j: isize, k: usize, v: f64) {
        let n = self.shape.idx(i, j, k);
        self.data[n] = v;
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.shape.at(i, j, k)]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let n = self.shape.at(i, j, k);
        &mut self.data[n]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn copy_from(&mut self, other: &Field3) {
        assert_eq!(self.shape, other.shape);
        self.data.copy_from_slice(&other.data);
    }

    /// Interior values in i-fastest order.
    pub fn interior(&self) -> Vec<f64> {
        let s = self.shape;
        let mut out = Vec::with_capacity(s.interior_cells());
        for k in 0..s.ktot {
            for j in 0..s.jmax {
                let base = s.at(0, j, k);
                out.extend_from_slice(&self.data[base..base + s.imax]);
            }
        }
        out
    }

    /// Overwrites the interior from i-fastest values.
    pub fn set_interior(&mut self, values: &[f64]) {
        let s = self.shape;
        assert_eq!(values.len(), s.interior_cells(), "interior size mismatch");
        for k in 0..s.ktot {
            for j in 0..s.jmax {
                let base = s.at(0, j, k);
                let src = (k * s.jmax + j) * s.imax;
                self.data[base..base + s.imax].copy_from_slice(&values[src..src + s.imax]);
            }
        }
    }

    /// Applies `f` to every interior cell in place.
    pub fn map_interior(&mut self, mut f: impl FnMut(f64) -> f64) {
        let s = self.shape;
        for k in 0..s.ktot {
            for j in 0..s.jmax {
                let base = s.at(0, j, k);
                for v in &mut self.data[base..base + s.imax] {
                    *v = f(*v);
                }
            }
        }
    }

    pub fn interior_any(&self, mut pred: impl FnMut(f64) -> bool) -> bool {
        let s = self.shape;
        (0..s.ktot).any(|k| {
            (0..s.jmax).any(|j| {
                let base = s.at(0, j, k);
                self.data[base..base + s.imax].iter().any(|&v| pred(v))
            })
        })
    }
}

/// Names of the prognostic fields in checkpoint order (scalars follow `qr`).
pub const PROGNOSTIC: [&str; 7] = ["u", "v", "w", "thl", "qt", "e", "qr"];

/// Prognostic variables plus their tendencies and the pressure field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub shape: Shape,
    pub u: Field3,
    pub v: Field3,
    pub w: Field3,
    pub thl: Field3,
    pub qt: Field3,
    pub e: Field3,
    pub qr: Field3,
    pub sv: Vec<Field3>,
    pub p: Field3,
    pub tend: Tendencies,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tendencies {
    pub u: Field3,
    pub v: Field3,
    pub w: Field3,
    pub thl: Field3,
    pub qt: Field3,
    pub e: Field3,
    pub qr: Field3,
    pub sv: Vec<Field3>,
}

impl Tendencies {
    pub fn zeros(shape: Shape, n_scalars: usize) -> Tendencies {
        let z = || Field3::zeros(shape);
        Tendencies { u: z(), v: z(), w: z(), thl: z(), qt: z(), e: z(), qr: z(), sv: (0..n_scalars).map(|_| z()).collect() }
    }

    pub fn clear(&mut self) {
        for f in self.all_mut() {
            f.fill(0.0);
        }
    }

    pub fn all_mut(&mut self) -> Vec<&mut Field3> {
        let mut v = vec![&mut self.u, &mut self.v, &mut self.w, &mut self.thl, &mut self.qt, &mut self.e, &mut self.qr];
        v.extend(self.sv.iter_mut());
        v
    }

    pub fn all(&self) -> Vec<&Field3> {
        let mut v = vec![&self.u, &self.v, &self.w, &self.thl, &self.qt, &self.e, &self.qr];
        v.extend(self.sv.iter());
        v
    }
}

/// Zero-initialised fields for one rank.
pub fn allocate_fields(decomp: &Decomposition, n_scalars: usize) -> FieldSet {
    FieldSet::zeros(Shape::of(decomp), n_scalars)
}

impl FieldSet {
    pub fn zeros(shape: Shape, n_scalars: usize) -> FieldSet {
        let z = || Field3::zeros(shape);
        FieldSet {
            shape,
            u: z(),
            v: z(),
            w: z(),
            thl: z(),
            qt: z(),
            e: z(),
            qr: z(),
            sv: (0..n_scalars).map(|_| z()).collect(),
            p: z(),
            tend: Tendencies::zeros(shape, n_scalars),
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.sv.len()
    }

    /// Prognostic fields in checkpoint order.
    pub fn prognostic(&self) -> Vec<&Field3> {
        let mut v = vec![&self.u, &self.v, &self.w, &self.thl, &self.qt, &self.e, &self.qr];
        v.extend(self.sv.iter());
        v
    }

    pub fn prognostic_mut(&mut self) -> Vec<&mut Field3> {
        let mut v = vec![&mut self.u, &mut self.v, &mut self.w, &mut self.thl, &mut self.qt, &mut self.e, &mut self.qr];
        v.extend(self.sv.iter_mut());
        v
    }

    /// Prognostic fields paired with their tendencies.
    pub fn prognostic_with_tend(&mut self) -> Vec<(&mut Field3, &Field3)> {
        let t = &self.tend;
        let mut v = vec![
            (&mut self.u, &t.u),
            (&mut self.v, &t.v),
            (&mut self.w, &t.w),
            (&mut self.thl, &t.thl),
            (&mut self.qt, &t.qt),
            (&mut self.e, &t.e),
            (&mut self.qr, &t.qr),
        ];
        v.extend(self.sv.iter_mut().zip(&t.sv));
        v
    }

    /// Prognostic fields followed by `p`, the checkpoint payload order.
    pub fn payload(&self) -> Vec<&Field3> {
        let mut v = self.prognostic();
        v.push(&self.p);
        v
    }

    pub fn payload_mut(&mut self) -> Vec<&mut Field3> {
        let mut v = vec![&mut self.u, &mut self.v, &mut self.w, &mut self.thl, &mut self.qt, &mut self.e, &mut self.qr];
        v.extend(self.sv.iter_mut());
        v.push(&mut self.p);
        v
    }

    /// Name of payload field `n`.
    pub fn payload_name(&self, n: usize) -> String {
        let ns = self.sv.len();
        if n < PROGNOSTIC.len() {
            PROGNOSTIC[n].to_string()
        } else if n < PROGNOSTIC.len() + ns {
            format!("sv{}", n - PROGNOSTIC.len())
        } else {
            "p".to_string()
        }
    }
}

/// Globally assembled interior fields (no halos), used for gather/scatter and
/// domain duplication.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFields {
    pub itot: usize,
    pub jtot: usize,
    pub ktot: usize,
    /// Payload arrays in checkpoint order, each i-fastest over the global grid.
    pub arrays: Vec<Vec<f64>>,
}

impl GlobalFields {
    pub fn n_scalars(&self) -> usize {
        self.arrays.len() - PROGNOSTIC.len() - 1
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.jtot + j) * self.itot + i
    }

    /// Local fields of `rank` under `decomp`.
    pub fn scatter(&self, decomp: &Decomposition, rank: usize) -> FieldSet {
        assert_eq!((decomp.itot, decomp.jtot, decomp.ktot), (self.itot, self.jtot, self.ktot));
        let mut fs = allocate_fields(decomp, self.n_scalars());
        let (i0, j0) = decomp.offset(rank);
        let s = fs.shape;
        for (arr, f) in self.arrays.iter().zip(fs.payload_mut()) {
            for k in 0..s.ktot {
                for j in 0..s.jmax {
                    let src = self.index(i0, j0 + j, k);
                    let dst = s.at(0, j, k);
                    f.data_mut()[dst..dst + s.imax].copy_from_slice(&arr[src..src + s.imax]);
                }
            }
        }
        fs
    }

    /// Assembles per-rank fields (indexed by rank) into global arrays.
    pub fn gather(decomp: &Decomposition, parts: &[&FieldSet]) -> GlobalFields {
        assert_eq!(parts.len(), decomp.ranks());
        let n = parts[0].payload().len();
        let total = decomp.itot * decomp.jtot * decomp.ktot;
        let mut g = GlobalFields { itot: decomp.itot, jtot: decomp.jtot, ktot: decomp.ktot, arrays: vec![vec![0.0; total]; n] };
        for (rank, fs) in parts.iter().enumerate() {
            let (i0, j0) = decomp.offset(rank);
            let s = fs.shape;
            for (arr, f) in g.arrays.iter_mut().zip(fs.payload()) {
                for k in 0..s.ktot {
                    for j in 0..s.jmax {
                        let dst = (k * decomp.jtot + j0 + j) * decomp.itot + i0;
                        let src = s.at(0, j, k);
                        arr[dst..dst + s.imax].copy_from_slice(&f.data()[src..src + s.imax]);
                    }
                }
            }
        }
        g
    }

    /// Periodic tiling: the domain repeated `fx` times along x and `fy` times along y.
    pub fn duplicate_periodic(&self, fx: usize, fy: usize) -> GlobalFields {
        assert!(fx >= 1 && fy >= 1);
        let (ni, nj) = (self.itot * fx, self.jtot * fy);
        let arrays = self
            .arrays
            .iter()
            .map(|a| {
                let mut out = Vec::with_capacity(ni * nj * self.ktot);
                for k in 0..self.ktot {
                    for j in 0..nj {
                        let row = self.index(0, j % self.jtot, k);
                        for _ in 0..fx {
                            out.extend_from_slice(&a[row..row + self.itot]);
                        }
                    }
                }
                out
            })
            .collect();
        GlobalFields { itot: ni, jtot: nj, ktot: self.ktot, arrays }
    }
}
