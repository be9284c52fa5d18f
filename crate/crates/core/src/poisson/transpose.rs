//! Pencil layouts and the all-to-all transposes between them.

use crate::comm::Comm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    /// Full columns in k; the same blocks as the halo decomposition.
    Z,
    /// Full rows in i.
    X,
    /// Full rows in j.
    Y,
}

/// A rank-local box of the global grid, stored dense with i fastest, then j, then k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pencil {
    pub i0: usize,
    pub ni: usize,
    pub j0: usize,
    pub nj: usize,
    pub k0: usize,
    pub nk: usize,
}

impl Pencil {
    pub fn len(&self) -> usize {
        self.ni * self.nj * self.nk
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Local offset of global cell `(i, j, k)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        ((k - self.k0) * self.nj + (j - self.j0)) * self.ni + (i - self.i0)
    }

    fn intersect(&self, o: &Pencil) -> Option<Pencil> {
        let range = |a0: usize, an: usize, b0: usize, bn: usize| {
            let lo = a0.max(b0);
            let hi = (a0 + an).min(b0 + bn);
            (lo < hi).then(|| (lo, hi - lo))
        };
        let (i0, ni) = range(self.i0, self.ni, o.i0, o.ni)?;
        let (j0, nj) = range(self.j0, self.nj, o.j0, o.nj)?;
        let (k0, nk) = range(self.k0, self.nk, o.k0, o.nk)?;
        Some(Pencil { i0, ni, j0, nj, k0, nk })
    }
}

/// Start and length of part `r` when `n` items are split over `p` parts.
pub fn split(n: usize, p: usize, r: usize) -> (usize, usize) {
    let (q, rem) = (n / p, n % p);
    (r * q + r.min(rem), q + usize::from(r < rem))
}

/// Global extents and rank layout shared by all plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub itot: usize,
    pub jtot: usize,
    pub ktot: usize,
    pub px: usize,
    pub py: usize,
}

impl Layout {
    pub fn ranks(&self) -> usize {
        self.px * self.py
    }

    /// Box owned by `rank` (numbered `rx + px * ry`) in orientation `o`.
    pub fn pencil(&self, o: Orientation, rank: usize) -> Pencil {
        let (rx, ry) = (rank % self.px, rank / self.px);
        match o {
            Orientation::Z => {
                let (imax, jmax) = (self.itot / self.px, self.jtot / self.py);
                Pencil { i0: rx * imax, ni: imax, j0: ry * jmax, nj: jmax, k0: 0, nk: self.ktot }
            }
            Orientation::X => {
                let jmax = self.jtot / self.py;
                let (k0, nk) = split(self.ktot, self.px, rx);
                Pencil { i0: 0, ni: self.itot, j0: ry * jmax, nj: jmax, k0, nk }
            }
            Orientation::Y => {
                let (i0, ni) = split(self.itot, self.py, ry);
                let (k0, nk) = split(self.ktot, self.px, rx);
                Pencil { i0, ni, j0: 0, nj: self.jtot, k0, nk }
            }
        }
    }
}

/// Per-peer send and receive boxes for one rank and one orientation change.
#[derive(Debug, Clone)]
pub struct TransposePlan {
    pub from: Orientation,
    pub to: Orientation,
    pub src: Pencil,
    pub dst: Pencil,
    /// `sends[r]`: the part of `src` destined for rank `r`.
    pub sends: Vec<Option<Pencil>>,
    /// `recvs[r]`: the part of `dst` arriving from rank `r`.
    pub recvs: Vec<Option<Pencil>>,
}

impl TransposePlan {
    pub fn new(layout: &Layout, rank: usize, from: Orientation, to: Orientation) -> TransposePlan {
        let src = layout.pencil(from, rank);
        let dst = layout.pencil(to, rank);
        let n = layout.ranks();
        let sends = (0..n).map(|r| src.intersect(&layout.pencil(to, r))).collect();
        let recvs = (0..n).map(|r| layout.pencil(from, r).intersect(&dst)).collect();
        TransposePlan { from, to, src, dst, sends, recvs }
    }

    pub fn inverse(&self, layout: &Layout, rank: usize) -> TransposePlan {
        TransposePlan::new(layout, rank, self.to, self.from)
    }

    /// Moves `data` (laid out as `src`) into the `dst` layout.
    pub fn apply(&self, data: &[f64], comm: &Comm) -> Vec<f64> {
        assert_eq!(data.len(), self.src.len(), "transpose input does not match its pencil");
        let blocks: Vec<Vec<f64>> = self.sends.iter().map(|b| b.map_or_else(Vec::new, |b| copy_out(data, &self.src, &b))).collect();
        let received = comm.alltoall(blocks);
        let mut out = vec![0.0; self.dst.len()];
        for (block, region) in received.iter().zip(&self.recvs) {
            if let Some(b) = region {
                copy_in(&mut out, &self.dst, b, block);
            }
        }
        out
    }
}

fn copy_out(data: &[f64], from: &Pencil, b: &Pencil) -> Vec<f64> {
    let mut buf = Vec::with_capacity(b.len());
    for k in b.k0..b.k0 + b.nk {
        for j in b.j0..b.j0 + b.nj {
            let o = from.index(b.i0, j, k);
            buf.extend_from_slice(&data[o..o + b.ni]);
        }
    }
    buf
}

fn copy_in(out: &mut [f64], to: &Pencil, b: &Pencil, block: &[f64]) {
    assert_eq!(block.len(), b.len(), "transpose block size mismatch");
    let mut n = 0;
    for k in b.k0..b.k0 + b.nk {
        for j in b.j0..b.j0 + b.nj {
            let o = to.index(b.i0, j, k);
            out[o..o + b.ni].copy_from_slice(&block[n..n + b.ni]);
            n += b.ni;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_cover() {
        for (n, p) in [(10, 3), (4, 4), (3, 4), (32, 2)] {
            let mut next = 0;
            for r in 0..p {
                let (s, len) = split(n, p, r);
                assert_eq!(s, next);
                next += len;
            }
            assert_eq!(next, n);
        }
    }

    #[test]
    fn each_orientation_partitions_the_domain() {
        let l = Layout { itot: 8, jtot: 12, ktot: 5, px: 2, py: 3 };
        for o in [Orientation::Z, Orientation::X, Orientation::Y] {
            let mut hits = vec![0u8; 8 * 12 * 5];
            for r in 0..l.ranks() {
                let p = l.pencil(o, r);
                for k in p.k0..p.k0 + p.nk {
                    for j in p.j0..p.j0 + p.nj {
                        for i in p.i0..p.i0 + p.ni {
                            hits[(k * 12 + j) * 8 + i] += 1;
                        }
                    }
                }
            }
            assert!(hits.iter().all(|&h| h == 1), "{o:?}");
        }
    }
}
