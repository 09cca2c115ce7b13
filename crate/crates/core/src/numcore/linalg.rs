//! Cholesky factorization and the SPD solves built on it.

use super::Matrix;
use crate::{Error, Result};

/// Additive jitter tried once when a plain factorization fails.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Relative asymmetry tolerated by [`cholesky`] before rejecting the input.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Lower-triangular `L` with `L·Lᵀ = A`.
///
/// The input is symmetrized before factorization; asymmetry beyond
/// [`SYMMETRY_TOL`] (relative to the largest entry) is rejected.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(Error::dims("cholesky", "square matrix", format!("{:?}", a.shape())));
    }
    let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asym = a.max_abs_diff(&a.transpose());
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::dims(
            "cholesky",
            "symmetric matrix",
            format!("asymmetry {asym:e}"),
        ));
    }
    factor(&a.symmetrized())
}

/// Plain factorization, retried once with `jitter·I` added on failure.
///
/// Returns the factor and the jitter actually applied (0 when none was needed).
pub fn cholesky_jittered(a: &Matrix, jitter: f64) -> Result<(Matrix, f64)> {
    match cholesky(a) {
        Ok(l) => Ok((l, 0.0)),
        Err(Error::NotPositiveDefinite { .. }) => {
            let mut b = a.symmetrized();
            for i in 0..b.rows() {
                b[(i, i)] += jitter;
            }
            factor(&b).map(|l| (l, jitter))
        }
        Err(e) => Err(e),
    }
}

fn factor(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 || d.is_infinite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L·Y = B` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(b.rows(), n);
    let m = b.cols();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for c in 0..m {
                y[(i, c)] -= lik * y[(k, c)];
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            y[(i, c)] /= d;
        }
    }
    y
}

/// Solves `Lᵀ·X = Y` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, y: &Matrix) -> Matrix {
    let n = l.rows();
    assert_eq!(y.rows(), n);
    let m = y.cols();
    let mut x = y.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            if lki == 0.0 {
                continue;
            }
            for c in 0..m {
                x[(i, c)] -= lki * x[(k, c)];
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    x
}

/// `A⁻¹·B` given the Cholesky factor `L` of `A`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// `ln det A` given the Cholesky factor of `A`.
pub fn cholesky_logdet(l: &Matrix) -> f64 {
    (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Log density of `N(x; mean, cov)` on plain values.
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], cov: &Matrix) -> Result<f64> {
    let d = x.len();
    if mean.len() != d || cov.shape() != (d, d) {
        return Err(Error::dims(
            "gaussian_logpdf",
            format!("x, mean of length {d} and {d}x{d} covariance"),
            format!("mean {} and covariance {:?}", mean.len(), cov.shape()),
        ));
    }
    let l = cholesky(cov)?;
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let z = solve_lower(&l, &Matrix::col_vector(&r));
    let quad: f64 = z.as_slice().iter().map(|v| v * v).sum();
    Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + cholesky_logdet(&l) + quad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factor_is_identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn two_by_two_multiplies_back() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l[(0, 1)], 0.0);
        assert!(l.matmul_nt(&l).max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn jitter_rescues_semidefinite_once() {
        let a = Matrix::zeros(2, 2);
        assert!(cholesky(&a).is_err());
        let (l, used) = cholesky_jittered(&a, DEFAULT_JITTER).unwrap();
        assert_eq!(used, DEFAULT_JITTER);
        assert!((l[(0, 0)] - DEFAULT_JITTER.sqrt()).abs() < 1e-15);
        // Jitter cannot rescue a clearly indefinite matrix.
        let b = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(cholesky_jittered(&b, DEFAULT_JITTER).is_err());
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let v = gaussian_logpdf(&[0.0], &[0.0], &Matrix::identity(1)).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn solve_recovers_rhs() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0], [2.0, 1.0], [3.0, -1.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &b);
        assert!(a.matmul(&x).max_abs_diff(&b) < 1e-12);
    }
}
