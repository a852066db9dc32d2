//! Dense matrix helpers shared by the solver modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Vectorization is
//! column-major, so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Schur, SymmetricEigen};

use crate::error::{MjsError, Result};

pub type Mat = DMatrix<f64>;

/// Largest dimension handled by the dense Schur eigensolver. Larger
/// matrices use the Gelfand-formula estimate.
pub const DENSE_EIG_LIMIT: usize = 2500;

/// Condition-number ceiling for the SPD inner-matrix factorization.
pub const MAX_SPD_CONDITION: f64 = 1e14;

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
pub fn sym_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest singular value.
pub fn min_singular_value(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().min()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Induced infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Strict positive definiteness through a Cholesky factorization.
pub fn is_positive_definite(m: &Mat) -> bool {
    m.is_square() && Cholesky::new(symmetrize(m)).is_some() && min_sym_eigenvalue(m) > 0.0
}

/// Solves `G X = rhs` for a symmetric positive definite `G`, rejecting
/// matrices whose eigenvalue ratio exceeds [`MAX_SPD_CONDITION`].
pub fn spd_solve(g: &Mat, rhs: &Mat) -> Option<Mat> {
    let g = symmetrize(g);
    let eig = SymmetricEigen::new(g.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_SPD_CONDITION {
        return None;
    }
    let chol = Cholesky::new(g)?;
    Some(chol.solve(rhs))
}

/// Column-major vectorization.
pub fn vec_of(m: &Mat) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for a square `n × n` matrix.
pub fn unvec(v: &[f64], n: usize) -> Mat {
    DMatrix::from_column_slice(n, n, v)
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Spectral radius `max |λ|`.
///
/// Uses a real Schur decomposition up to [`DENSE_EIG_LIMIT`]; above that the
/// estimate `‖M^k‖^{1/k}` is refined by repeated squaring until two
/// successive values differ by less than 1e-3.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if !m.is_square() {
        return Err(MjsError::DimMismatch(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if !all_finite(m) {
        return Err(MjsError::EigFailure);
    }
    if m.nrows() > DENSE_EIG_LIMIT {
        return gelfand_radius(m);
    }
    let dim = m.nrows();
    let schur: Option<Schur<f64, Dyn>> = Schur::try_new(m.clone(), f64::EPSILON, 1000 * dim.max(10));
    let schur = schur.ok_or(MjsError::EigFailure)?;
    let rho = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max);
    if rho.is_finite() {
        Ok(rho)
    } else {
        Err(MjsError::EigFailure)
    }
}

/// Gelfand estimate with power doubling, carrying a log scale so the
/// normalized power never over- or underflows.
pub fn gelfand_radius(m: &Mat) -> Result<f64> {
    let norm0 = spectral_norm(m);
    if norm0 == 0.0 {
        return Ok(0.0);
    }
    let mut power = m / norm0;
    let mut log_scale = norm0.ln();
    let mut k: u64 = 1;
    let mut prev = norm0;
    for _ in 0..40 {
        power = &power * &power;
        log_scale *= 2.0;
        k *= 2;
        let nrm = spectral_norm(&power);
        if nrm == 0.0 {
            return Ok(0.0);
        }
        if !nrm.is_finite() {
            return Err(MjsError::EigFailure);
        }
        power /= nrm;
        log_scale += nrm.ln();
        let est = (log_scale / k as f64).exp();
        if (est - prev).abs() < 1e-3 {
            return Ok(est);
        }
        prev = est;
    }
    Ok(prev)
}

/// Sum of `weights[j] * mats[j]`.
pub fn weighted_sum<'a, I>(weights: I, mats: &[Mat]) -> Mat
where
    I: IntoIterator<Item = &'a f64>,
{
    let (r, c) = mats.first().map(|m| m.shape()).unwrap_or((0, 0));
    let mut acc = Mat::zeros(r, c);
    for (w, m) in weights.into_iter().zip(mats) {
        if *w != 0.0 {
            acc += m * *w;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_of_identity_is_one() {
        let r = spectral_radius(&Mat::identity(3, 3)).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radius_of_nilpotent_is_zero() {
        let m = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn radius_of_stochastic_transpose_is_one() {
        // characteristic polynomial λ² − 1.7λ + 0.7 has roots {1, 0.7}
        let m = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]).transpose();
        assert!((spectral_radius(&m).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn radius_handles_complex_pairs() {
        // rotation by 90 degrees scaled by 0.7
        let m = Mat::from_row_slice(2, 2, &[0.0, -0.7, 0.7, 0.0]);
        assert!((spectral_radius(&m).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gelfand_agrees_with_schur() {
        let m = Mat::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, 0.4, 2.0, 0.1, 0.0, 0.3]);
        let exact = spectral_radius(&m).unwrap();
        let est = gelfand_radius(&m).unwrap();
        assert!((exact - est).abs() < 1e-2, "{exact} vs {est}");
    }

    #[test]
    fn non_finite_input_is_eig_failure() {
        let m = Mat::from_row_slice(1, 1, &[f64::NAN]);
        assert_eq!(spectral_radius(&m), Err(MjsError::EigFailure));
    }

    #[test]
    fn vec_matches_kronecker_identity() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let x = Mat::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let b = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 1.5, 2.0]);
        let lhs = vec_of(&(&a * &x * &b));
        let rhs = b.transpose().kronecker(&a) * vec_of(&x);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn spd_solve_rejects_ill_conditioned() {
        let g = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 1e-16]));
        assert!(spd_solve(&g, &Mat::identity(2, 2)).is_none());
        let g = Mat::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = spd_solve(&g, &Mat::identity(2, 2)).unwrap();
        assert!((x[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn inf_norm_is_max_row_sum() {
        let m = Mat::from_row_slice(2, 2, &[0.02, -0.02, 0.0, 0.0]);
        assert!((inf_norm(&m) - 0.04).abs() < 1e-15);
    }
}
