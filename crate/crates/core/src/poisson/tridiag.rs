//! Thomas algorithm for one vertical column.

/// Solves `a[k] x[k-1] + b[k] x[k] + c[k] x[k+1] = d[k]` in place in `d`.
///
/// `a[0]` and `c[n-1]` are ignored. Returns the row of the first zero pivot.
pub fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], work: &mut [f64]) -> Result<(), usize> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let mut beta = b[0];
    if beta == 0.0 {
        return Err(0);
    }
    d[0] /= beta;
    for k in 1..n {
        work[k] = c[k - 1] / beta;
        beta = b[k] - a[k] * work[k];
        if beta == 0.0 || !beta.is_finite() {
            return Err(k);
        }
        d[k] = (d[k] - a[k] * d[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        d[k] -= work[k + 1] * d[k + 1];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_system_returns_rhs() {
        let mut d = vec![1.0, -2.0, 3.5];
        thomas(&[0.0; 3], &[1.0; 3], &[0.0; 3], &mut d, &mut [0.0; 3]).unwrap();
        assert_eq!(d, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn zero_pivot_reported() {
        let mut d = vec![1.0, 1.0];
        assert_eq!(thomas(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0], &mut d, &mut [0.0; 2]), Err(1));
    }
}
