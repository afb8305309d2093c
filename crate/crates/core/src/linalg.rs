//! Small symmetric positive-definite solves for the normal equations and the
//! block preconditioner.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{CpError, Result};
use crate::tensor::{symmetrize, Matrix};

fn factor(s: &Matrix, lambda: f64) -> Result<Cholesky<f64, Dyn>> {
    let (n, m) = s.shape();
    if n != m {
        return Err(CpError::ShapeMismatch(format!("expected square matrix, got {n}x{m}")));
    }
    if !(lambda >= 0.0) {
        return Err(CpError::InvalidConfig(format!("lambda must be non-negative, got {lambda}")));
    }
    let shifted = |extra: f64| {
        let mut d = DMatrix::from_row_slice(n, n, s.as_slice());
        for i in 0..n {
            d[(i, i)] += lambda + extra;
        }
        d
    };
    if let Some(c) = Cholesky::new(shifted(0.0)) {
        return Ok(c);
    }
    // one retry with a trace-scaled jitter for numerically singular Γ
    let jitter = 1e-12 * s.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    Cholesky::new(shifted(jitter)).ok_or(CpError::Singular { lambda })
}

/// Solves `Y (S + λI) = B` for `Y` with `S` symmetric.
pub fn spd_solve(s: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    if b.cols() != s.rows() {
        return Err(CpError::ShapeMismatch(format!(
            "right-hand side {:?} against {:?}",
            b.shape(),
            s.shape()
        )));
    }
    let chol = factor(s, lambda)?;
    // (S + λI) Yᵀ = Bᵀ; the row-major B read column-major is already Bᵀ.
    let bt = DMatrix::from_column_slice(b.cols(), b.rows(), b.as_slice());
    let yt = chol.solve(&bt);
    let y: Vec<f64> = yt.as_slice().to_vec();
    let out = Matrix::from_vec(b.rows(), b.cols(), y)?;
    if !out.is_finite() {
        return Err(CpError::Singular { lambda });
    }
    Ok(out)
}

/// `(S + λI)⁻¹`, exactly symmetric.
pub fn spd_inverse(s: &Matrix, lambda: f64) -> Result<Matrix> {
    let chol = factor(s, lambda)?;
    let inv = chol.inverse();
    let mut out = Matrix::from_vec(s.rows(), s.rows(), inv.as_slice().to_vec())?;
    symmetrize(&mut out);
    if !out.is_finite() {
        return Err(CpError::Singular { lambda });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let a = Matrix::from_fn(n + 2, n, |i, j| {
            (((i * 31 + j * 17) as u64 ^ seed) % 97) as f64 / 97.0 - 0.5
        });
        crate::tensor::gram(&a)
    }

    fn shifted(s: &Matrix, lambda: f64) -> Matrix {
        let mut m = s.clone();
        for i in 0..m.rows() {
            m.set(i, i, m.get(i, i) + lambda);
        }
        m
    }

    #[test]
    fn solve_scaled_identity() {
        let s = Matrix::identity(2).scaled(2.0);
        let y = spd_solve(&s, &Matrix::identity(2), 0.0).unwrap();
        assert!(y.max_abs_diff(&Matrix::identity(2).scaled(0.5)) < 1e-15);
    }

    #[test]
    fn solve_with_unit_shift_halves_rhs() {
        let b = Matrix::from_rows(&[[1.0, -2.0], [3.5, 4.0], [0.25, 8.0]]);
        let y = spd_solve(&Matrix::identity(2), &b, 1.0).unwrap();
        assert!(y.max_abs_diff(&b.scaled(0.5)) < 1e-15);
    }

    #[test]
    fn solve_random_multiply_back() {
        let s = random_spd(4, 11);
        let b = Matrix::from_fn(4, 4, |i, j| (i as f64 - j as f64) * 0.3 + 1.0);
        let y = spd_solve(&s, &b, 1e-3).unwrap();
        let resid = y.matmul(&shifted(&s, 1e-3)).sub(&b).frobenius_norm();
        assert!(resid <= 1e-10 * b.frobenius_norm(), "residual {resid}");
    }

    #[test]
    fn inverse_examples() {
        assert!(spd_inverse(&Matrix::identity(3), 0.0).unwrap().max_abs_diff(&Matrix::identity(3)) < 1e-15);
        let inv = spd_inverse(&Matrix::diag(&[1.0, 3.0]), 1.0).unwrap();
        assert!(inv.max_abs_diff(&Matrix::diag(&[0.5, 0.25])) < 1e-15);
    }

    #[test]
    fn inverse_random_multiply_back_and_symmetry() {
        let s = random_spd(5, 3);
        let inv = spd_inverse(&s, 1e-2).unwrap();
        assert!(inv.matmul(&shifted(&s, 1e-2)).max_abs_diff(&Matrix::identity(5)) < 1e-10);
        assert_eq!(inv, inv.transpose());
    }

    #[test]
    fn singular_without_shift_is_an_error() {
        let s = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]);
        assert!(matches!(spd_solve(&s, &Matrix::identity(2), 0.0), Err(CpError::Singular { .. })));
        // negative-definite part is outweighed by the shift
        assert!(spd_solve(&s, &Matrix::identity(2), 2.0).is_ok());
    }

    #[test]
    fn rank_deficient_psd_recovers_with_jitter() {
        let s = Matrix::filled(2, 2, 1.0);
        assert!(spd_inverse(&s, 0.0).is_ok());
    }
}
