//! Mean-square stability of the autonomous jump system `x_{t+1} = L_{ω(t)} x_t`.
//!
//! The augmented matrix `L̃` has `(i, j)` block `T[i][j] · (L_iᵀ ⊗ L_iᵀ)`.
//! With column-major vectorization, `L̃` maps `vec(X_{1:s})` to
//! `vec(L_iᵀ φ_i(X) L_i)`, and `L̃ᵀ` propagates the per-mode second moments
//! `E[x xᵀ 1{ω = i}]` forward one step. The loop is MSS iff `ρ(L̃) < 1`.

use crate::error::{MjsError, Result};
use crate::linalg::{self, Mat};
use crate::model::{Controller, MjsModel};
use crate::solvers;

/// `ρ(L̃) ≥ 1 − MSS_MARGIN` is classified as unstable.
pub const MSS_MARGIN: f64 = 1e-10;

/// Default truncation depth for [`tau`].
pub const DEFAULT_TAU_KMAX: usize = 5000;

/// Consecutive decreasing ratios that end the [`tau`] search.
pub const TAU_DECREASE_WINDOW: usize = 20;

/// Per-mode closed-loop matrices `L_i = A_i + B_i K_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub l: Vec<Mat>,
}

impl ClosedLoop {
    pub fn new(l: Vec<Mat>) -> Result<Self> {
        let n = l.first().map(|m| m.nrows()).unwrap_or(0);
        if l.is_empty() || l.iter().any(|m| m.shape() != (n, n)) {
            return Err(MjsError::DimMismatch("closed-loop matrices must be nonempty and n x n".into()));
        }
        Ok(ClosedLoop { l })
    }

    pub fn n(&self) -> usize {
        self.l.first().map(|m| m.nrows()).unwrap_or(0)
    }

    pub fn s(&self) -> usize {
        self.l.len()
    }

    pub(crate) fn check_t(&self, t: &Mat) -> Result<()> {
        if t.shape() != (self.s(), self.s()) {
            return Err(MjsError::DimMismatch(format!(
                "T is {}x{} for {} closed-loop modes",
                t.nrows(),
                t.ncols(),
                self.s()
            )));
        }
        Ok(())
    }
}

pub fn closed_loop(model: &MjsModel, controller: &Controller) -> Result<ClosedLoop> {
    controller.check_dims(model.n, model.p, model.s)?;
    let l = model
        .a
        .iter()
        .zip(&model.b)
        .zip(&controller.k)
        .map(|((a, b), k)| a + b * k)
        .collect();
    ClosedLoop::new(l)
}

/// Dense `(s n²) × (s n²)` augmented matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMatrix {
    pub m: Mat,
    pub s: usize,
    pub n: usize,
}

impl AugmentedMatrix {
    /// Block `(i, j)` as an owned `n² × n²` matrix.
    pub fn block(&self, i: usize, j: usize) -> Mat {
        let nn = self.n * self.n;
        self.m.view((i * nn, j * nn), (nn, nn)).into_owned()
    }
}

pub fn build_augmented(lp: &ClosedLoop, t: &Mat) -> Result<AugmentedMatrix> {
    lp.check_t(t)?;
    let (s, n) = (lp.s(), lp.n());
    let nn = n * n;
    let mut m = Mat::zeros(s * nn, s * nn);
    for (i, li) in lp.l.iter().enumerate() {
        let lt = li.transpose();
        let kron = lt.kronecker(&lt);
        for j in 0..s {
            let w = t[(i, j)];
            if w != 0.0 {
                m.view_mut((i * nn, j * nn), (nn, nn)).copy_from(&(&kron * w));
            }
        }
    }
    Ok(AugmentedMatrix { m, s, n })
}

pub use crate::linalg::spectral_radius;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MssVerdict {
    pub stable: bool,
    pub rho: f64,
}

/// Spectral test: stable iff `ρ(L̃) < 1 − 1e-10`.
pub fn is_mss(lp: &ClosedLoop, t: &Mat) -> Result<MssVerdict> {
    let aug = build_augmented(lp, t)?;
    let rho = spectral_radius(&aug.m)?;
    Ok(MssVerdict { stable: rho < 1.0 - MSS_MARGIN, rho })
}

/// Lyapunov certificate: solves `V_i − L_iᵀ φ_i(V) L_i = I` directly, with
/// no spectral information, and accepts the result only if every `V_i` and
/// every residual `V_i − L_iᵀφ_i(V)L_i` is positive definite.
pub fn mss_certificate(lp: &ClosedLoop, t: &Mat) -> Result<Vec<Mat>> {
    lp.check_t(t)?;
    let n = lp.n();
    let rhs = vec![Mat::identity(n, n); lp.s()];
    let v = match solvers::coupled_lyapunov_direct(lp, t, &rhs, false) {
        Ok(v) => v,
        Err(MjsError::Singular) => return Err(MjsError::NotMss(f64::NAN)),
        Err(e) => return Err(e),
    };
    if !v.iter().all(linalg::all_finite) {
        return Err(MjsError::NotMss(f64::NAN));
    }
    for (i, vi) in v.iter().enumerate() {
        let lhs = vi - lp.l[i].transpose() * crate::model::phi(t, &v, i) * &lp.l[i];
        if !linalg::is_positive_definite(vi) || !linalg::is_positive_definite(&lhs) {
            return Err(MjsError::NotMss(f64::NAN));
        }
    }
    Ok(v)
}

/// Midpoint between the spectral radius and one.
pub fn default_gamma(rho: f64) -> f64 {
    (1.0 + rho) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub gamma: f64,
    pub tau: f64,
    pub k_used: usize,
    pub converged: bool,
}

/// Truncated `sup_k ‖L̃^k‖ / γ^k`.
///
/// Powers of `L̃/γ` are accumulated directly so nothing underflows. The
/// search stops once the ratio has decreased for 20 consecutive steps, or
/// at `k_max`; in the latter case `converged` is false if the ratio was
/// still increasing at the cap. The result is a lower bound on the true
/// supremum.
pub fn tau(aug: &AugmentedMatrix, gamma: f64, k_max: usize) -> Result<TauEstimate> {
    let rho = spectral_radius(&aug.m)?;
    tau_with_rho(aug, gamma, k_max, rho)
}

pub fn tau_with_rho(aug: &AugmentedMatrix, gamma: f64, k_max: usize, rho: f64) -> Result<TauEstimate> {
    if !(gamma > 0.0 && gamma < 1.0) || gamma < rho * (1.0 - 1e-12) - 1e-15 {
        return Err(MjsError::GammaTooSmall { gamma, rho });
    }
    let dim = aug.m.nrows();
    let scaled = &aug.m / gamma;
    let mut power = Mat::identity(dim, dim);
    let mut best = 1.0_f64;
    let mut prev = 1.0_f64;
    let mut decreasing = 0usize;
    let mut last_increasing = false;
    let mut k = 0usize;
    while k < k_max {
        k += 1;
        power = &power * &scaled;
        let ratio = linalg::spectral_norm(&power);
        if !ratio.is_finite() {
            return Err(MjsError::EigFailure);
        }
        best = best.max(ratio);
        if ratio < prev {
            decreasing += 1;
            last_increasing = false;
        } else {
            decreasing = 0;
            last_increasing = ratio > prev;
        }
        prev = ratio;
        if decreasing >= TAU_DECREASE_WINDOW || ratio == 0.0 {
            return Ok(TauEstimate { gamma, tau: best, k_used: k, converged: true });
        }
    }
    Ok(TauEstimate { gamma, tau: best, k_used: k, converged: !last_increasing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn one() -> Mat {
        m(1, 1, &[1.0])
    }

    #[test]
    fn zero_gain_is_open_loop() {
        let model = MjsModel::new(vec![m(1, 1, &[0.7])], vec![m(1, 1, &[2.0])], one()).unwrap();
        let lp = closed_loop(&model, &Controller::zeros(1, 1, 1)).unwrap();
        assert_eq!(lp.l[0], model.a[0]);
    }

    #[test]
    fn golden_gain_closed_loop() {
        let k = -(5f64.sqrt() - 1.0) / 2.0;
        let model = MjsModel::new(vec![one()], vec![one()], one()).unwrap();
        let lp = closed_loop(&model, &Controller::new(vec![m(1, 1, &[k])])).unwrap();
        assert!((lp.l[0][(0, 0)] - (1.0 + k)).abs() < 1e-15);
        assert!((lp.l[0][(0, 0)] - 0.381_966_011_250_105_1).abs() < 1e-12);
    }

    #[test]
    fn zero_input_matrix_ignores_gain() {
        let model = MjsModel::new(vec![m(1, 1, &[0.7])], vec![m(1, 1, &[0.0])], one()).unwrap();
        let lp = closed_loop(&model, &Controller::new(vec![m(1, 1, &[5.0])])).unwrap();
        assert_eq!(lp.l[0], model.a[0]);
    }

    #[test]
    fn controller_dim_mismatch() {
        let model = MjsModel::new(vec![m(1, 1, &[0.7])], vec![m(1, 1, &[0.0])], one()).unwrap();
        let err = closed_loop(&model, &Controller::new(vec![Mat::zeros(2, 1)])).unwrap_err();
        assert_eq!(err.code(), "DIM_MISMATCH");
    }

    #[test]
    fn augmented_scalar_is_square() {
        let aug = build_augmented(&ClosedLoop::new(vec![m(1, 1, &[0.3])]).unwrap(), &one()).unwrap();
        assert!((aug.m[(0, 0)] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn augmented_diagonal_loop() {
        let l = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.2]));
        let aug = build_augmented(&ClosedLoop::new(vec![l]).unwrap(), &one()).unwrap();
        let want = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.25, 0.1, 0.1, 0.04]));
        assert!((aug.m - want).amax() < 1e-15);
    }

    #[test]
    fn augmented_zero_loop() {
        let lp = ClosedLoop::new(vec![Mat::zeros(2, 2); 2]).unwrap();
        let aug = build_augmented(&lp, &m(2, 2, &[0.5, 0.5, 0.3, 0.7])).unwrap();
        assert_eq!(aug.m.shape(), (8, 8));
        assert_eq!(aug.m.amax(), 0.0);
    }

    #[test]
    fn mss_examples() {
        let v = is_mss(&ClosedLoop::new(vec![m(1, 1, &[0.5])]).unwrap(), &one()).unwrap();
        assert!(v.stable);
        assert!((v.rho - 0.25).abs() < 1e-12);
        let v = is_mss(&ClosedLoop::new(vec![m(1, 1, &[1.1])]).unwrap(), &one()).unwrap();
        assert!(!v.stable);
        assert!((v.rho - 1.21).abs() < 1e-12);
        let lp = ClosedLoop::new(vec![m(1, 1, &[1.2]), m(1, 1, &[0.1])]).unwrap();
        let v = is_mss(&lp, &m(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        assert!(v.stable);
        assert!((v.rho - 0.725).abs() < 1e-12);
    }

    #[test]
    fn marginal_loop_is_unstable() {
        let v = is_mss(&ClosedLoop::new(vec![one()]).unwrap(), &one()).unwrap();
        assert!(!v.stable);
    }

    #[test]
    fn certificate_examples() {
        let v = mss_certificate(&ClosedLoop::new(vec![m(1, 1, &[0.5])]).unwrap(), &one()).unwrap();
        assert!((v[0][(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        let lp = ClosedLoop::new(vec![Mat::zeros(2, 2); 2]).unwrap();
        let v = mss_certificate(&lp, &m(2, 2, &[0.5, 0.5, 0.3, 0.7])).unwrap();
        for vi in v {
            assert!((vi - Mat::identity(2, 2)).amax() < 1e-14);
        }
        let err = mss_certificate(&ClosedLoop::new(vec![one()]).unwrap(), &one()).unwrap_err();
        assert_eq!(err.code(), "NOT_MSS");
    }

    #[test]
    fn tau_scalar_at_radius_is_one() {
        let aug = AugmentedMatrix { m: m(1, 1, &[0.5]), s: 1, n: 1 };
        let est = tau(&aug, 0.5, DEFAULT_TAU_KMAX).unwrap();
        assert_eq!(est.tau, 1.0);
        assert!(est.converged);
    }

    #[test]
    fn tau_of_zero_is_one() {
        let aug = AugmentedMatrix { m: Mat::zeros(4, 4), s: 1, n: 2 };
        let est = tau(&aug, 0.3, DEFAULT_TAU_KMAX).unwrap();
        assert_eq!(est.tau, 1.0);
    }

    #[test]
    fn tau_jordan_block_matches_brute_force() {
        let lt = m(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let aug = AugmentedMatrix { m: lt.clone(), s: 1, n: 1 };
        let est = tau(&aug, 0.9, DEFAULT_TAU_KMAX).unwrap();
        // oracle: explicit powers of the raw matrix up to k = 200
        let mut power = Mat::identity(2, 2);
        let mut best = 1.0_f64;
        for k in 1..=200 {
            power = &power * &lt;
            best = best.max(linalg::spectral_norm(&power) / 0.9_f64.powi(k));
        }
        assert!((est.tau - best).abs() <= 1e-10 * best, "{} vs {best}", est.tau);
        assert!(est.tau > 1.0);
    }

    #[test]
    fn tau_rejects_gamma_below_radius() {
        let aug = AugmentedMatrix { m: m(1, 1, &[0.5]), s: 1, n: 1 };
        assert_eq!(tau(&aug, 0.4, 100).unwrap_err().code(), "GAMMA_TOO_SMALL");
        assert_eq!(tau(&aug, 1.0, 100).unwrap_err().code(), "GAMMA_TOO_SMALL");
    }
}
