//! Order-independent floating-point summation.
//!
//! Every finite `f64` is an integer significand times a power of two. The
//! accumulator keeps one `i128` bin per binary exponent and adds each value's
//! significand to its bin, which is exact. The bins are folded once, always in
//! the same order, so the rounded result depends only on the multiset of
//! inputs and not on the order or grouping in which they were added.

use crate::comm::Comm;

const BINS: usize = 2048;
/// Fold a bin into its upper neighbour before it can overflow.
const CARRY_LIMIT: i128 = 1 << 120;

#[derive(Clone, Debug)]
pub struct ExactSum {
    bins: Vec<i128>,
    /// Touched bin range `lo..hi`.
    lo: usize,
    hi: usize,
    count: u64,
    nonfinite: f64,
}

/// The touched bins of an [`ExactSum`], cheap to send between ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactSum {
    offset: usize,
    bins: Vec<i128>,
    count: u64,
    nonfinite: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum { bins: vec![0; BINS], lo: BINS, hi: 0, count: 0, nonfinite: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        self.count += 1;
        if !x.is_finite() {
            self.nonfinite += x;
            return;
        }
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as usize;
        let frac = (bits & ((1u64 << 52) - 1)) as i128;
        let (mant, bin) = if exp == 0 { (frac, 1) } else { (frac | (1 << 52), exp) };
        let signed = if bits >> 63 == 1 { -mant } else { mant };
        self.bins[bin] += signed;
        self.lo = self.lo.min(bin);
        self.hi = self.hi.max(bin + 1);
        if self.bins[bin].abs() >= CARRY_LIMIT {
            self.normalize();
        }
    }

    /// Adds the contents of another accumulator.
    pub fn merge(&mut self, other: &ExactSum) {
        self.merge_compact(&other.compact());
    }

    pub fn compact(&self) -> CompactSum {
        let (lo, hi) = if self.lo < self.hi { (self.lo, self.hi) } else { (0, 0) };
        CompactSum { offset: lo, bins: self.bins[lo..hi].to_vec(), count: self.count, nonfinite: self.nonfinite }
    }

    pub fn merge_compact(&mut self, other: &CompactSum) {
        for (n, b) in other.bins.iter().enumerate() {
            self.bins[other.offset + n] += *b;
        }
        if !other.bins.is_empty() {
            self.lo = self.lo.min(other.offset);
            self.hi = self.hi.max(other.offset + other.bins.len());
        }
        self.count += other.count;
        self.nonfinite += other.nonfinite;
        if self.bins[self.lo.min(self.hi)..self.hi].iter().any(|b| b.abs() >= CARRY_LIMIT) {
            self.normalize();
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Moves whole multiples of 2^64 from each bin to the bin 64 exponents up.
    fn normalize(&mut self) {
        for e in 0..BINS - 64 {
            let carry = self.bins[e] >> 64;
            if carry != 0 {
                self.bins[e] -= carry << 64;
                self.bins[e + 64] += carry;
                self.hi = self.hi.max(e + 65);
            }
        }
    }

    /// Correctly rounded sum of everything added so far.
    pub fn value(&self) -> f64 {
        if self.nonfinite != 0.0 || self.nonfinite.is_nan() {
            return self.nonfinite;
        }
        // The exact sum is N * 2^-1074 with N = sum of bins[e] * 2^(e-1).
        let mut limbs = vec![0u64; LIMBS];
        for (e, &b) in self.bins.iter().enumerate().take(self.hi).skip(self.lo.max(1)) {
            if b == 0 {
                continue;
            }
            let shift = e - 1;
            let (d, s) = (shift / 64, shift % 64);
            let lo = ((b & MASK64) as u128) << s;
            add_at(&mut limbs, d, (lo & MASK64 as u128) as i128);
            add_at(&mut limbs, d + 1, (lo >> 64) as i128);
            add_at(&mut limbs, d + 1, (b >> 64) << s);
        }
        let negative = limbs[LIMBS - 1] >> 63 == 1;
        if negative {
            negate(&mut limbs);
        }
        let magnitude = match highest_bit(&limbs) {
            None => return 0.0,
            Some(p) if p <= 52 => f64::from_bits(limbs[0]),
            Some(p) => {
                let mut m: u64 = 0;
                for b in (p - 52..=p).rev() {
                    m = (m << 1) | bit(&limbs, b) as u64;
                }
                let half = bit(&limbs, p - 53);
                let sticky = (0..p - 53).any(|b| bit(&limbs, b));
                let mut p = p;
                if half && (sticky || m & 1 == 1) {
                    m += 1;
                    if m == 1 << 53 {
                        m >>= 1;
                        p += 1;
                    }
                }
                let biased = (p - 51) as u64;
                if biased >= 2047 {
                    f64::INFINITY
                } else {
                    f64::from_bits((biased << 52) | (m & ((1 << 52) - 1)))
                }
            }
        };
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

const LIMBS: usize = BINS / 64 + 4;
const MASK64: i128 = (1 << 64) - 1;

/// Adds `x * 2^(64 idx)` to a two's-complement limb vector.
fn add_at(limbs: &mut [u64], idx: usize, x: i128) {
    let mut carry = x;
    let mut j = idx;
    while carry != 0 && j < limbs.len() {
        let t = limbs[j] as i128 + carry;
        limbs[j] = t as u64;
        carry = t >> 64;
        j += 1;
    }
}

fn negate(limbs: &mut [u64]) {
    for l in limbs.iter_mut() {
        *l = !*l;
    }
    add_at(limbs, 0, 1);
}

fn highest_bit(limbs: &[u64]) -> Option<usize> {
    let top = limbs.iter().rposition(|&l| l != 0)?;
    Some(top * 64 + 63 - limbs[top].leading_zeros() as usize)
}

fn bit(limbs: &[u64], b: usize) -> bool {
    (limbs[b / 64] >> (b % 64)) & 1 == 1
}

/// Merges per-level accumulators across ranks, in rank order, and returns
/// the global per-level sums.
pub fn global_sums(local: &[ExactSum], comm: &Comm) -> Vec<f64> {
    let compact: Vec<CompactSum> = local.iter().map(ExactSum::compact).collect();
    let all = comm.allgather(compact);
    (0..local.len())
        .map(|k| {
            let mut acc = ExactSum::new();
            for rank in &all {
                acc.merge_compact(&rank[k]);
            }
            acc.value()
        })
        .collect()
}

/// Exact sum of a slice.
pub fn exact_sum(xs: &[f64]) -> f64 {
    let mut s = ExactSum::new();
    for &x in xs {
        s.add(x);
    }
    s.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(exact_sum(&[]), 0.0);
        assert_eq!(exact_sum(&[1.0, 2.0, 3.5]), 6.5);
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum(&[0.1, 0.2]), 0.1 + 0.2);
        assert_eq!(exact_sum(&[-3.0]), -3.0);
        assert_eq!(exact_sum(&[f64::MIN_POSITIVE / 4.0, f64::MIN_POSITIVE / 4.0]), f64::MIN_POSITIVE / 2.0);
        assert!(exact_sum(&[1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-53 is a tie between 1 and the next float; even is 1.
        assert_eq!(exact_sum(&[1.0, 2f64.powi(-53)]), 1.0);
        // Adding a tiny extra breaks the tie upward.
        assert_eq!(exact_sum(&[1.0, 2f64.powi(-53), 2f64.powi(-80)]), 1.0 + f64::EPSILON);
        let next = 1.0 + f64::EPSILON;
        assert_eq!(exact_sum(&[next, 2f64.powi(-53)]), next + f64::EPSILON);
    }

    #[test]
    fn many_values_do_not_overflow() {
        let mut s = ExactSum::new();
        for _ in 0..100_000 {
            s.add(1.7976931348623157e300);
            s.add(-1.7976931348623157e300);
            s.add(0.5);
        }
        assert_eq!(s.value(), 50_000.0);
    }

    proptest! {
        #[test]
        fn order_independent(mut xs in prop::collection::vec(-1e6f64..1e6, 0..200), split in 0usize..200) {
            let whole = exact_sum(&xs);
            let split = split.min(xs.len());
            let mut a = ExactSum::new();
            let mut b = ExactSum::new();
            for &x in &xs[..split] { a.add(x); }
            for &x in &xs[split..] { b.add(x); }
            b.merge(&a);
            prop_assert_eq!(b.value().to_bits(), whole.to_bits());
            xs.reverse();
            prop_assert_eq!(exact_sum(&xs).to_bits(), whole.to_bits());
        }

        #[test]
        fn matches_high_precision_pairs(a in -1e10f64..1e10, b in -1e10f64..1e10) {
            // Two-term sums are correctly rounded by IEEE addition.
            prop_assert_eq!(exact_sum(&[a, b]), a + b);
        }
    }
}
