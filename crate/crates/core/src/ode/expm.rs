use nalgebra::{DMatrix, DVector};

use super::{check_times, Trajectory};
use crate::error::{Error, Result};

const TAYLOR_TERMS: usize = 18;
const SCALED_NORM: f64 = 0.5;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The matrix is scaled by `2^-s` until its 1-norm is below 0.5, the
/// 18-term series is summed, and the result squared `s` times.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = one_norm(a);
    let mut squarings = 0u32;
    if norm > SCALED_NORM {
        squarings = (norm / SCALED_NORM).log2().ceil().max(0.0) as u32;
        while norm / 2f64.powi(squarings as i32) >= SCALED_NORM {
            squarings += 1;
        }
    }
    let scaled = a / 2f64.powi(squarings as i32);

    // Horner form: I + M(I + M/2 (I + M/3 (...)))
    let identity = DMatrix::<f64>::identity(n, n);
    let mut acc = identity.clone();
    for k in (1..=TAYLOR_TERMS).rev() {
        acc = &identity + (&scaled * &acc) / k as f64;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

/// Analytic solution of `ẋ = A x`: row `k` is `exp(A (t_k - t_0)) x0`.
pub fn matrix_exponential_solution(a: &DMatrix<f64>, x0: &[f64], times: &[f64]) -> Result<Trajectory> {
    if !a.is_square() {
        return Err(Error::arg("matrix must be square"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("matrix has non-finite entries"));
    }
    if x0.len() != a.nrows() {
        return Err(Error::arg("initial state length does not match matrix size"));
    }
    check_times(times)?;
    let x0v = DVector::from_column_slice(x0);
    let mut states = Vec::with_capacity(times.len() * x0.len());
    states.extend_from_slice(x0);
    for &t in &times[1..] {
        let x = expm(&(a * (t - times[0]))) * &x0v;
        states.extend(x.iter());
    }
    Trajectory::from_flat(times.to_vec(), states, x0.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn zero_matrix_gives_constant_trajectory() {
        let a = DMatrix::zeros(3, 3);
        let traj = matrix_exponential_solution(&a, &[1.0, -2.0, 0.5], &[0.0, 1.0, 7.0]).unwrap();
        for row in traj.rows() {
            assert_eq!(row, &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn swap_matrix_on_diagonal_initial_state() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let times = [0.0, 0.3, 1.0, 2.0, 4.5];
        let traj = matrix_exponential_solution(&b, &[1.0, 1.0], &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            for &v in traj.row(k) {
                assert!((v - t.exp()).abs() <= 1e-12 * t.exp(), "t={t}: {v}");
            }
        }
    }

    #[test]
    fn swap_matrix_on_antidiagonal_eigenvector() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let traj = matrix_exponential_solution(&b, &[1.0, -1.0], &[0.0, 1.0]).unwrap();
        let expect = 1.0 / E;
        assert!((traj.row(1)[0] - expect).abs() < 1e-12);
        assert!((traj.row(1)[1] + expect).abs() < 1e-12);
        assert!((expect - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn rotation_generator_matches_closed_form() {
        // exp of [[0, -w], [w, 0]] t is a rotation by w t.
        let w = 3.7;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let t = 2.3;
        let r = expm(&(a * t));
        let (s, c) = (w * t).sin_cos();
        let expect = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((r - expect).abs().max() < 1e-12);
    }

    #[test]
    fn diagonal_matrix_relative_accuracy() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-4.0, 0.5, 3.0]));
        let r = expm(&(a * 5.0));
        for (i, d) in [-20.0f64, 2.5, 15.0].iter().enumerate() {
            let rel = (r[(i, i)] - d.exp()).abs() / d.exp();
            assert!(rel < 1e-12, "entry {i}: rel error {rel}");
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(matrix_exponential_solution(&DMatrix::zeros(2, 3), &[1.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
