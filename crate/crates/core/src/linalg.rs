//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn check_square_finite(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidMatrix(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidMatrix(format!("{what} is empty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix(format!("{what} has non-finite entries")));
    }
    Ok(m.nrows())
}

pub fn check_vector(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidInput(format!(
            "{what} has length {}, expected {n}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Row sums equal one and off-diagonal entries are non-negative, both within `tol`.
pub fn is_row_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    m.row_iter().enumerate().all(|(i, row)| {
        let sum: f64 = row.iter().sum();
        (sum - 1.0).abs() <= tol
            && row
                .iter()
                .enumerate()
                .all(|(j, &v)| i == j || v >= -tol)
    })
}

/// Row-major vectorization: entry `(i, j)` of an `n x m` matrix lands at `i * m + j`.
pub fn vec_rows(x: &DMatrix<f64>) -> DVector<f64> {
    let (n, m) = x.shape();
    DVector::from_fn(n * m, |k, _| x[(k / m, k % m)])
}

/// Inverse of [`vec_rows`].
pub fn unvec_rows(y: &DVector<f64>, n: usize, m: usize) -> DMatrix<f64> {
    assert_eq!(y.len(), n * m, "unvec_rows: length mismatch");
    DMatrix::from_fn(n, m, |i, j| y[i * m + j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inf_norm_is_max_row_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]);
        assert_eq!(inf_norm(&m), 3.0);
    }

    #[test]
    fn row_stochastic_detection() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        assert!(is_row_stochastic(&p, 1e-12));
        let signed = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, 0.0, 1.0]);
        assert!(!is_row_stochastic(&signed, 1e-12));
    }

    #[test]
    fn vec_ordering_is_agent_major() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = vec_rows(&x);
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unvec_rows(&y, 2, 3), x);
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(
            check_square_finite(&m, "P"),
            Err(Error::InvalidMatrix(_))
        ));
    }
}
