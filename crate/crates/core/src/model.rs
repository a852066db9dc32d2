//! Plant, cost and controller types plus Markov-chain utilities.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{MjsError, Result};
use crate::linalg::{self, Mat};
use crate::rng;

/// Row sums of `T` must equal one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Symmetry tolerance for cost matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Transition probabilities at or below this are treated as absent edges.
pub const EDGE_THRESHOLD: f64 = 1e-14;

/// A Markov jump linear system `x_{t+1} = A_{ω(t)} x_t + B_{ω(t)} u_t + w_t`
/// with mode chain `P(ω(t+1) = j | ω(t) = i) = T[i][j]`.
///
/// The same type describes both the true plant and a nominal estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MjsModel {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub t: Mat,
}

impl MjsModel {
    /// Builds a model, inferring `(n, p, s)` from the matrices and rejecting
    /// any invariant violation.
    pub fn new(a: Vec<Mat>, b: Vec<Mat>, t: Mat) -> Result<Self> {
        let n = a.first().map(|m| m.nrows()).unwrap_or(0);
        let p = b.first().map(|m| m.ncols()).unwrap_or(0);
        let model = MjsModel { n, p, s: t.nrows(), a, b, t };
        let report = validate_model(&model);
        if report.is_valid() {
            Ok(model)
        } else {
            Err(MjsError::LoadInvalid(report.codes()))
        }
    }
}

/// Quadratic stage-cost matrices and process-noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: Vec<Mat>,
    pub r: Vec<Mat>,
    pub sigma_w: f64,
}

impl CostSpec {
    pub fn new(q: Vec<Mat>, r: Vec<Mat>, sigma_w: f64) -> Self {
        CostSpec { q, r, sigma_w }
    }

    /// Checks dimensions against `model` and the symmetric-PD requirement.
    pub fn validate(&self, model: &MjsModel) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.q.len() != model.s || self.r.len() != model.s {
            report.push(
                ViolationCode::DimMismatch,
                format!("expected {} Q and R matrices, got {} and {}", model.s, self.q.len(), self.r.len()),
            );
        }
        for (name, mats, dim) in [("Q", &self.q, model.n), ("R", &self.r, model.p)] {
            for (i, m) in mats.iter().enumerate() {
                if m.shape() != (dim, dim) {
                    report.push(
                        ViolationCode::DimMismatch,
                        format!("{name}[{i}] is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols()),
                    );
                    continue;
                }
                if !linalg::is_symmetric(m, SYMMETRY_TOL) {
                    report.push(ViolationCode::NotSymmetric, format!("{name}[{i}]"));
                } else if !linalg::is_positive_definite(m) {
                    report.push(ViolationCode::NotPositiveDefinite, format!("{name}[{i}]"));
                }
            }
        }
        if !(self.sigma_w >= 0.0) || !self.sigma_w.is_finite() {
            report.push(ViolationCode::NegativeNoise, format!("sigma_w = {}", self.sigma_w));
        }
        report
    }
}

/// Mode-dependent state feedback `u_t = K_{ω(t)} x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub k: Vec<Mat>,
}

impl Controller {
    pub fn new(k: Vec<Mat>) -> Self {
        Controller { k }
    }

    pub fn zeros(n: usize, p: usize, s: usize) -> Self {
        Controller { k: vec![Mat::zeros(p, n); s] }
    }

    pub fn check_dims(&self, n: usize, p: usize, s: usize) -> Result<()> {
        if self.k.len() != s {
            return Err(MjsError::DimMismatch(format!("controller has {} gains for {s} modes", self.k.len())));
        }
        for (i, k) in self.k.iter().enumerate() {
            if k.shape() != (p, n) {
                return Err(MjsError::DimMismatch(format!(
                    "K[{i}] is {}x{}, expected {p}x{n}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// A probability vector over modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDistribution {
    pub pi: Vec<f64>,
}

impl ModeDistribution {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.iter().any(|v| !(*v >= 0.0)) {
            return Err(MjsError::InvalidArgument("negative mode probability".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MjsError::InvalidArgument(format!("mode probabilities sum to {total}")));
        }
        Ok(ModeDistribution { pi })
    }

    /// Equal probability of starting in any mode.
    pub fn uniform(s: usize) -> Self {
        ModeDistribution { pi: vec![1.0 / s as f64; s] }
    }

    pub fn point(s: usize, mode: usize) -> Self {
        let mut pi = vec![0.0; s];
        pi[mode] = 1.0;
        ModeDistribution { pi }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationCode {
    DimMismatch,
    RowSum,
    NegativeProb,
    NotSymmetric,
    NotPositiveDefinite,
    NegativeNoise,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::DimMismatch => "DIM_MISMATCH",
            ViolationCode::RowSum => "ROW_SUM",
            ViolationCode::NegativeProb => "NEGATIVE_PROB",
            ViolationCode::NotSymmetric => "NOT_SYMMETRIC",
            ViolationCode::NotPositiveDefinite => "NOT_PD",
            ViolationCode::NegativeNoise => "NEGATIVE_NOISE",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

/// Invariant violations found by [`validate_model`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn codes(&self) -> Vec<String> {
        self.violations.iter().map(|v| format!("{}: {}", v.code, v.detail)).collect()
    }

    fn push(&mut self, code: ViolationCode, detail: String) {
        self.violations.push(Violation { code, detail });
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }
}

pub fn validate_model(model: &MjsModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (n, p, s) = (model.n, model.p, model.s);
    if n == 0 || p == 0 || s == 0 {
        report.push(ViolationCode::DimMismatch, format!("n={n}, p={p}, s={s} must be positive"));
    }
    if model.a.len() != s || model.b.len() != s {
        report.push(
            ViolationCode::DimMismatch,
            format!("expected {s} A and B matrices, got {} and {}", model.a.len(), model.b.len()),
        );
    }
    for (i, a) in model.a.iter().enumerate() {
        if a.shape() != (n, n) {
            report.push(ViolationCode::DimMismatch, format!("A[{i}] is {}x{}, expected {n}x{n}", a.nrows(), a.ncols()));
        }
    }
    for (i, b) in model.b.iter().enumerate() {
        if b.shape() != (n, p) {
            report.push(ViolationCode::DimMismatch, format!("B[{i}] is {}x{}, expected {n}x{p}", b.nrows(), b.ncols()));
        }
    }
    if model.t.shape() != (s, s) {
        report.push(
            ViolationCode::DimMismatch,
            format!("T is {}x{}, expected {s}x{s}", model.t.nrows(), model.t.ncols()),
        );
        return report;
    }
    for i in 0..s {
        let row = model.t.row(i);
        for (j, v) in row.iter().enumerate() {
            if !(*v >= 0.0) {
                report.push(ViolationCode::NegativeProb, format!("T[{i}][{j}] = {v}"));
            } else if *v > 1.0 {
                report.push(ViolationCode::NegativeProb, format!("T[{i}][{j}] = {v} exceeds 1"));
            }
        }
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
            report.push(ViolationCode::RowSum, format!("row {i} sums to {sum}"));
        }
    }
    report
}

/// `φ_i(V) = Σ_j T[i][j] V_j` without bounds checks.
pub(crate) fn phi(t: &Mat, v: &[Mat], i: usize) -> Mat {
    linalg::weighted_sum(t.row(i).iter(), v)
}

/// The transition-weighted mixture `φ_i(V_{1:s}) = Σ_j T[i][j] V_j`.
pub fn apply_phi(t: &Mat, v: &[Mat], i: usize) -> Result<Mat> {
    let s = t.nrows();
    if i >= s {
        return Err(MjsError::IndexOutOfRange { index: i, modes: s });
    }
    if t.ncols() != s || v.len() != s {
        return Err(MjsError::DimMismatch(format!("T is {}x{}, {} matrices supplied", s, t.ncols(), v.len())));
    }
    let shape = v[0].shape();
    if v.iter().any(|m| m.shape() != shape) {
        return Err(MjsError::DimMismatch("V matrices differ in shape".into()));
    }
    Ok(phi(t, v, i))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ergodicity {
    Ergodic,
    /// Some mode cannot reach another: `from` does not reach `to`.
    Reducible { from: usize, to: usize },
    Periodic { period: usize },
}

impl Ergodicity {
    pub fn is_ergodic(&self) -> bool {
        matches!(self, Ergodicity::Ergodic)
    }
}

impl fmt::Display for Ergodicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ergodicity::Ergodic => write!(f, "ergodic"),
            Ergodicity::Reducible { from, to } => write!(f, "reducible: mode {from} cannot reach mode {to}"),
            Ergodicity::Periodic { period } => write!(f, "periodic with period {period}"),
        }
    }
}

fn bfs_levels(t: &Mat, start: usize, transpose: bool) -> Vec<Option<usize>> {
    let s = t.nrows();
    let mut level = vec![None; s];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = level[u].unwrap_or(0);
        for v in 0..s {
            let w = if transpose { t[(v, u)] } else { t[(u, v)] };
            if w > EDGE_THRESHOLD && level[v].is_none() {
                level[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Irreducibility by forward/backward reachability from mode 0; the period
/// is the gcd of `level(u) + 1 - level(v)` over all edges `u → v`.
pub fn check_ergodic(t: &Mat) -> Ergodicity {
    let s = t.nrows();
    if s == 0 {
        return Ergodicity::Reducible { from: 0, to: 0 };
    }
    let fwd = bfs_levels(t, 0, false);
    if let Some(to) = fwd.iter().position(|l| l.is_none()) {
        return Ergodicity::Reducible { from: 0, to };
    }
    let bwd = bfs_levels(t, 0, true);
    if let Some(from) = bwd.iter().position(|l| l.is_none()) {
        return Ergodicity::Reducible { from, to: 0 };
    }
    let mut period = 0usize;
    for u in 0..s {
        for v in 0..s {
            if t[(u, v)] > EDGE_THRESHOLD {
                let (lu, lv) = (fwd[u].unwrap_or(0), fwd[v].unwrap_or(0));
                period = gcd(period, (lu + 1).abs_diff(lv));
            }
        }
    }
    if period == 1 {
        Ergodicity::Ergodic
    } else {
        Ergodicity::Periodic { period }
    }
}

/// Stationary distribution `π = Tᵀπ` of an ergodic chain.
///
/// Power iteration on `Tᵀ` from the uniform vector (tolerance 1e-12, at
/// most 10⁶ steps), with a direct solve of `(Tᵀ − I)π = 0, Σπ = 1` as a
/// fallback when the iteration stalls or leaves a residual above 1e-10.
pub fn stationary_distribution(t: &Mat) -> Result<ModeDistribution> {
    let diag = check_ergodic(t);
    if !diag.is_ergodic() {
        return Err(MjsError::NotErgodic(diag.to_string()));
    }
    let s = t.nrows();
    let tt = t.transpose();
    let mut pi = nalgebra::DVector::from_element(s, 1.0 / s as f64);
    let mut converged = false;
    for _ in 0..1_000_000 {
        let mut next = &tt * &pi;
        let total = next.sum();
        next /= total;
        let delta = (&next - &pi).amax();
        pi = next;
        if delta <= 1e-12 {
            converged = true;
            break;
        }
    }
    let residual = (&tt * &pi - &pi).amax();
    if !converged || residual > 1e-10 {
        pi = direct_stationary(t)?;
    }
    let residual = (&tt * &pi - &pi).amax();
    if residual > 1e-10 {
        return Err(MjsError::NoConvergence(format!("stationary residual {residual:e}")));
    }
    Ok(ModeDistribution { pi: pi.iter().copied().collect() })
}

fn direct_stationary(t: &Mat) -> Result<nalgebra::DVector<f64>> {
    let s = t.nrows();
    let mut m = DMatrix::zeros(s + 1, s);
    m.view_mut((0, 0), (s, s)).copy_from(&(t.transpose() - Mat::identity(s, s)));
    m.row_mut(s).fill(1.0);
    let mut rhs = nalgebra::DVector::zeros(s + 1);
    rhs[s] = 1.0;
    // least squares on the augmented system through the normal equations
    let mtm = m.transpose() * &m;
    let mtr = m.transpose() * rhs;
    let sol = mtm.lu().solve(&mtr).ok_or(MjsError::Singular)?;
    let clipped = sol.map(|v| v.max(0.0));
    let total = clipped.sum();
    if !(total > 0.0) {
        return Err(MjsError::NoConvergence("direct stationary solve".into()));
    }
    Ok(clipped / total)
}

fn draw_categorical(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = j;
            acc += w;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}

/// Samples `ω(0..=horizon)`: `ω(0) ~ pi0`, then each transition from row
/// `ω(t)` of `T`, by inverse-CDF on the seeded stream.
pub fn sample_mode_sequence(t: &Mat, pi0: &ModeDistribution, horizon: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed);
    sample_modes_with(t, pi0, horizon, &mut rng)
}

pub(crate) fn sample_modes_with(t: &Mat, pi0: &ModeDistribution, horizon: usize, rng: &mut rng::Stream) -> Vec<usize> {
    let mut modes = Vec::with_capacity(horizon + 1);
    let mut current = draw_categorical(pi0.pi.iter().copied(), rng::uniform(rng));
    modes.push(current);
    for _ in 0..horizon {
        current = draw_categorical(t.row(current).iter().copied(), rng::uniform(rng));
        modes.push(current);
    }
    modes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn scalar_model() -> MjsModel {
        MjsModel { n: 1, p: 1, s: 1, a: vec![m(1, 1, &[0.5])], b: vec![m(1, 1, &[1.0])], t: m(1, 1, &[1.0]) }
    }

    #[test]
    fn valid_scalar_model() {
        assert!(validate_model(&scalar_model()).is_valid());
    }

    #[test]
    fn row_sum_violation() {
        let mut model = scalar_model();
        model.s = 2;
        model.a = vec![m(1, 1, &[0.5]); 2];
        model.b = vec![m(1, 1, &[1.0]); 2];
        model.t = m(2, 2, &[0.6, 0.5, 0.5, 0.5]);
        let report = validate_model(&model);
        assert!(report.contains(ViolationCode::RowSum));
        assert!(report.violations.iter().any(|v| v.code == ViolationCode::RowSum && v.detail.starts_with("row 0")));
        assert!(!report.violations.iter().any(|v| v.detail.starts_with("row 1")));
    }

    #[test]
    fn dim_mismatch_violation() {
        let model = MjsModel {
            n: 2,
            p: 1,
            s: 1,
            a: vec![Mat::zeros(2, 3)],
            b: vec![Mat::zeros(2, 1)],
            t: m(1, 1, &[1.0]),
        };
        assert!(validate_model(&model).contains(ViolationCode::DimMismatch));
    }

    #[test]
    fn negative_probability_violation() {
        let t = m(2, 2, &[1.1, -0.1, 0.5, 0.5]);
        let err = MjsModel::new(vec![Mat::zeros(1, 1); 2], vec![Mat::zeros(1, 1); 2], t).unwrap_err();
        assert_eq!(err.code(), "LOAD_INVALID");
    }

    #[test]
    fn phi_single_mode_is_identity() {
        let v = vec![m(2, 2, &[1.0, 2.0, 3.0, 4.0])];
        assert_eq!(apply_phi(&m(1, 1, &[1.0]), &v, 0).unwrap(), v[0]);
    }

    #[test]
    fn phi_convex_combination() {
        let t = m(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let v = vec![Mat::identity(2, 2), Mat::identity(2, 2) * 3.0];
        let out = apply_phi(&t, &v, 1).unwrap();
        assert!((out - Mat::identity(2, 2) * 2.0).amax() < 1e-15);
    }

    #[test]
    fn phi_hand_expansion() {
        let t = m(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let v = vec![m(2, 2, &[1.0, 0.0, 0.0, 0.0]), m(2, 2, &[0.0, 0.0, 0.0, 1.0])];
        let out = apply_phi(&t, &v, 0).unwrap();
        assert!((out - m(2, 2, &[0.9, 0.0, 0.0, 0.1])).amax() < 1e-15);
    }

    #[test]
    fn phi_index_out_of_range() {
        let err = apply_phi(&m(1, 1, &[1.0]), &[Mat::zeros(1, 1)], 1).unwrap_err();
        assert_eq!(err.code(), "INDEX_OUT_OF_RANGE");
    }

    #[test]
    fn stationary_examples() {
        let pi = stationary_distribution(&m(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        assert!((pi.pi[0] - 0.5).abs() < 1e-12);
        let pi = stationary_distribution(&m(2, 2, &[0.9, 0.1, 0.2, 0.8])).unwrap();
        assert!((pi.pi[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((pi.pi[1] - 1.0 / 3.0).abs() < 1e-10);
        let err = stationary_distribution(&Mat::identity(2, 2)).unwrap_err();
        assert_eq!(err.code(), "NOT_ERGODIC");
    }

    #[test]
    fn direct_fallback_matches_power_iteration() {
        let t = m(3, 3, &[0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2]);
        let power = stationary_distribution(&t).unwrap();
        let direct = direct_stationary(&t).unwrap();
        for i in 0..3 {
            assert!((power.pi[i] - direct[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn ergodicity_examples() {
        assert_eq!(check_ergodic(&m(2, 2, &[0.0, 1.0, 1.0, 0.0])), Ergodicity::Periodic { period: 2 });
        assert!(check_ergodic(&m(2, 2, &[0.9, 0.1, 0.2, 0.8])).is_ergodic());
        assert!(matches!(check_ergodic(&Mat::identity(2, 2)), Ergodicity::Reducible { .. }));
        // one-way chain: 1 cannot return to 0
        assert!(matches!(
            check_ergodic(&m(2, 2, &[0.5, 0.5, 0.0, 1.0])),
            Ergodicity::Reducible { from: 1, to: 0 }
        ));
        // 3-cycle with a self-loop is aperiodic
        assert!(check_ergodic(&m(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.5])).is_ergodic());
        assert_eq!(
            check_ergodic(&m(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0])),
            Ergodicity::Periodic { period: 3 }
        );
    }

    #[test]
    fn mode_sequence_examples() {
        let seq = sample_mode_sequence(&m(1, 1, &[1.0]), &ModeDistribution::uniform(1), 50, 3);
        assert_eq!(seq.len(), 51);
        assert!(seq.iter().all(|&w| w == 0));
        let seq = sample_mode_sequence(&Mat::identity(2, 2), &ModeDistribution::point(2, 0), 50, 3);
        assert!(seq.iter().all(|&w| w == 0));
    }

    #[test]
    fn mode_frequency_matches_stationary() {
        let t = m(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let pi = stationary_distribution(&t).unwrap();
        let seq = sample_mode_sequence(&t, &ModeDistribution::uniform(2), 100_000, 11);
        let freq = seq.iter().filter(|&&w| w == 0).count() as f64 / seq.len() as f64;
        assert!((freq - pi.pi[0]).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn mode_distribution_rejects_bad_vectors() {
        assert!(ModeDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ModeDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(ModeDistribution::new(vec![0.25, 0.75]).is_ok());
    }
}
