//! Real-to-real transforms in half-complex layout.
//!
//! A length-`n` real line transforms into `r0, r1, ..., r_{n/2}, i_{(n+1)/2-1}, ..., i1`,
//! the real and imaginary parts of the non-negative half of its spectrum.

use std::sync::Arc;

pub use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// A 1D real transform working in place on half-complex lines.
pub trait RealTransform: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Unnormalized forward transform, real input to half-complex output.
    fn forward(&self, line: &mut [f64], scratch: &mut Scratch);
    /// Unnormalized inverse: `backward(forward(x)) = n x`.
    fn backward(&self, line: &mut [f64], scratch: &mut Scratch);
}

/// Work buffers reused across lines.
#[derive(Default)]
pub struct Scratch {
    buf: Vec<Complex64>,
    work: Vec<Complex64>,
}

/// Packs the first half of a full complex spectrum into half-complex order.
pub fn pack_halfcomplex(spec: &[Complex64], out: &mut [f64]) {
    let n = spec.len();
    for k in 0..=n / 2 {
        out[k] = spec[k].re;
    }
    for k in 1..n.div_ceil(2) {
        out[n - k] = spec[k].im;
    }
}

/// Expands a half-complex line into the full conjugate-symmetric spectrum.
pub fn unpack_halfcomplex(hc: &[f64], out: &mut [Complex64]) {
    let n = hc.len();
    out[0] = Complex64::new(hc[0], 0.0);
    for k in 1..n.div_ceil(2) {
        out[k] = Complex64::new(hc[k], hc[n - k]);
        out[n - k] = out[k].conj();
    }
    if n % 2 == 0 && n > 0 {
        out[n / 2] = Complex64::new(hc[n / 2], 0.0);
    }
}

/// Half-complex transform on top of a complex FFT.
pub struct ComplexBacked {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ComplexBacked {
    pub fn new(n: usize) -> ComplexBacked {
        let mut planner = FftPlanner::new();
        ComplexBacked { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn prepare(&self, s: &mut Scratch, fft: &Arc<dyn Fft<f64>>) {
        s.buf.resize(self.n, Complex64::default());
        s.work.resize(fft.get_inplace_scratch_len(), Complex64::default());
    }
}

impl RealTransform for ComplexBacked {
    fn len(&self) -> usize {
        self.n
    }

    fn forward(&self, line: &mut [f64], s: &mut Scratch) {
        self.prepare(s, &self.fwd);
        for (b, &x) in s.buf.iter_mut().zip(line.iter()) {
            *b = Complex64::new(x, 0.0);
        }
        self.fwd.process_with_scratch(&mut s.buf, &mut s.work);
        pack_halfcomplex(&s.buf, line);
    }

    fn backward(&self, line: &mut [f64], s: &mut Scratch) {
        self.prepare(s, &self.inv);
        unpack_halfcomplex(line, &mut s.buf);
        self.inv.process_with_scratch(&mut s.buf, &mut s.work);
        for (x, b) in line.iter_mut().zip(&s.buf) {
            *x = b.re;
        }
    }
}

/// Spectral index of half-complex slot `s` in a length-`n` line.
#[inline]
pub fn slot_mode(s: usize, n: usize) -> usize {
    if s <= n / 2 {
        s
    } else {
        n - s
    }
}

/// Modified wavenumber `(2 cos(2 pi m / n) - 2) / d²` for every half-complex slot.
pub fn modified_wavenumbers(n: usize, d: f64) -> Vec<f64> {
    (0..n)
        .map(|s| {
            let m = slot_mode(s, n);
            if m == 0 {
                0.0
            } else {
                (2.0 * (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos() - 2.0) / (d * d)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_gives_flat_spectrum() {
        let t = ComplexBacked::new(8);
        let mut x = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        t.forward(&mut x, &mut Scratch::default());
        // Real parts are all one, imaginary parts zero.
        assert_eq!(x, [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn round_trip_odd_and_even() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [5, 6, 7, 12, 64, 125] {
            let t = ComplexBacked::new(n);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = x.clone();
            let mut s = Scratch::default();
            t.forward(&mut y, &mut s);
            t.backward(&mut y, &mut s);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b / n as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wavenumbers() {
        let l = modified_wavenumbers(8, 2.0);
        assert_eq!(l[0], 0.0);
        assert!((l[4] + 1.0).abs() < 1e-15);
        assert_eq!(l[1], l[7]);
        assert!(l.iter().all(|&x| x <= 0.0));
    }
}
