//! Coupled Lyapunov and coupled Riccati solvers, optimal gains and
//! closed-form average costs.

use crate::error::{MjsError, Result};
use crate::linalg::{self, Mat};
use crate::model::{phi, stationary_distribution, Controller, CostSpec, MjsModel, ModeDistribution};
use crate::stability::{self, build_augmented, closed_loop, ClosedLoop};

/// Largest `s·n²` solved by the dense vectorized method.
pub const DIRECT_LIMIT: usize = 4000;
/// Iterate-norm ceiling that signals divergence.
pub const NORM_CAP: f64 = 1e12;
/// Consecutive non-decreasing updates that signal divergence.
pub const STALL_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    FixedPoint,
}

impl SolveMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveMethod::Direct => "direct",
            SolveMethod::FixedPoint => "fixed_point",
        }
    }
}

/// Mode-indexed symmetric solution with convergence metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSolution {
    pub x: Vec<Mat>,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

impl CoupledSolution {
    /// `max_i ‖X_i‖`.
    pub fn norm(&self) -> f64 {
        self.x.iter().map(linalg::sym_norm).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.x.iter().map(linalg::min_sym_eigenvalue).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub check_premises: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-11, max_iter: 100_000, check_premises: true }
    }
}

/// Which way the coupled operator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    /// `X_i ↦ L_iᵀ φ_i(X) L_i` (cost-to-go; matrix `L̃`).
    Adjoint,
    /// `Σ_j ↦ Σ_i T[i][j] L_i Σ_i L_iᵀ` (second moments; matrix `L̃ᵀ`).
    Forward,
}

pub(crate) fn apply_operator(lp: &ClosedLoop, t: &Mat, x: &[Mat], dir: Direction) -> Vec<Mat> {
    match dir {
        Direction::Adjoint => (0..lp.s()).map(|i| lp.l[i].transpose() * phi(t, x, i) * &lp.l[i]).collect(),
        Direction::Forward => {
            let pushed: Vec<Mat> = lp.l.iter().zip(x).map(|(l, xi)| l * xi * l.transpose()).collect();
            (0..lp.s()).map(|j| linalg::weighted_sum(t.column(j).iter(), &pushed)).collect()
        }
    }
}

fn operator_residual(lp: &ClosedLoop, t: &Mat, x: &[Mat], y: &[Mat], dir: Direction) -> f64 {
    apply_operator(lp, t, x, dir)
        .iter()
        .zip(x)
        .zip(y)
        .map(|((tx, xi), yi)| linalg::spectral_norm(&(xi - tx - yi)))
        .fold(0.0, f64::max)
}

fn check_rhs(lp: &ClosedLoop, t: &Mat, y: &[Mat]) -> Result<()> {
    lp.check_t(t)?;
    let n = lp.n();
    if y.len() != lp.s() || y.iter().any(|m| m.shape() != (n, n)) {
        return Err(MjsError::DimMismatch(format!("right-hand side must be {} matrices of size {n}x{n}", lp.s())));
    }
    Ok(())
}

fn solve_vectorized(lp: &ClosedLoop, t: &Mat, y: &[Mat], dir: Direction) -> Result<Vec<Mat>> {
    let aug = build_augmented(lp, t)?;
    let (s, n) = (lp.s(), lp.n());
    let nn = n * n;
    let dim = s * nn;
    let op = match dir {
        Direction::Adjoint => aug.m,
        Direction::Forward => aug.m.transpose(),
    };
    let system = Mat::identity(dim, dim) - op;
    let mut rhs = nalgebra::DVector::zeros(dim);
    for (i, yi) in y.iter().enumerate() {
        rhs.rows_mut(i * nn, nn).copy_from(&linalg::vec_of(yi));
    }
    let sol = system.lu().solve(&rhs).ok_or(MjsError::Singular)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(MjsError::Singular);
    }
    Ok((0..s)
        .map(|i| linalg::symmetrize(&linalg::unvec(sol.rows(i * nn, nn).as_slice(), n)))
        .collect())
}

/// Raw vectorized solve of `X − 𝒯(X) = Y`, with no stability pre-check.
/// `forward = false` is the cost direction `X_i − L_iᵀφ_i(X)L_i = Y_i`.
pub(crate) fn coupled_lyapunov_direct(lp: &ClosedLoop, t: &Mat, y: &[Mat], forward: bool) -> Result<Vec<Mat>> {
    check_rhs(lp, t, y)?;
    solve_vectorized(lp, t, y, if forward { Direction::Forward } else { Direction::Adjoint })
}

fn fixed_point(lp: &ClosedLoop, t: &Mat, y: &[Mat], dir: Direction, opts: &SolverOptions) -> Result<(Vec<Mat>, usize)> {
    let mut x: Vec<Mat> = y.to_vec();
    for iter in 1..=opts.max_iter {
        let tx = apply_operator(lp, t, &x, dir);
        let next: Vec<Mat> = tx.iter().zip(y).map(|(a, b)| linalg::symmetrize(&(a + b))).collect();
        let mut delta = 0.0_f64;
        let mut size = 0.0_f64;
        for (a, b) in next.iter().zip(&x) {
            delta = delta.max(linalg::spectral_norm(&(a - b)) / linalg::spectral_norm(b).max(1.0));
            size = size.max(linalg::spectral_norm(a));
        }
        x = next;
        if !(size <= NORM_CAP) {
            return Err(MjsError::NotMss(f64::NAN));
        }
        if delta <= opts.tol {
            return Ok((x, iter));
        }
    }
    Err(MjsError::NoConvergence(format!("coupled Lyapunov fixed point after {} iterations", opts.max_iter)))
}

fn solve_coupled(
    lp: &ClosedLoop,
    t: &Mat,
    y: &[Mat],
    dir: Direction,
    opts: &SolverOptions,
    method: Option<SolveMethod>,
) -> Result<CoupledSolution> {
    check_rhs(lp, t, y)?;
    let dim = lp.s() * lp.n() * lp.n();
    let method = method.unwrap_or(if dim <= DIRECT_LIMIT { SolveMethod::Direct } else { SolveMethod::FixedPoint });
    let (x, iterations) = match method {
        SolveMethod::Direct => {
            let verdict = stability::is_mss(lp, t)?;
            if !verdict.stable {
                return Err(MjsError::NotMss(verdict.rho));
            }
            (solve_vectorized(lp, t, y, dir)?, 1)
        }
        SolveMethod::FixedPoint => fixed_point(lp, t, y, dir, opts)?,
    };
    let residual = operator_residual(lp, t, &x, y, dir);
    Ok(CoupledSolution { x, residual, iterations, method })
}

/// Solves `X_i − L_iᵀ φ_i(X) L_i = Y_i` for every mode.
///
/// Uses the vectorized form `vec X = (I − L̃)⁻¹ vec Y` when `s·n² ≤ 4000`
/// and the fixed-point iteration `X ← Y + Lᵀφ(X)L` otherwise.
pub fn solve_coupled_lyapunov(lp: &ClosedLoop, t: &Mat, y: &[Mat]) -> Result<CoupledSolution> {
    solve_coupled(lp, t, y, Direction::Adjoint, &SolverOptions::default(), None)
}

pub fn solve_coupled_lyapunov_with(
    lp: &ClosedLoop,
    t: &Mat,
    y: &[Mat],
    opts: &SolverOptions,
    method: SolveMethod,
) -> Result<CoupledSolution> {
    solve_coupled(lp, t, y, Direction::Adjoint, opts, Some(method))
}

/// Accumulated per-mode second moments of the noise-free loop,
/// `Σ = Σ_{t≥0} 𝒯ᵗ(Σ0)` with `𝒯(Σ)_j = Σ_i T[i][j] L_i Σ_i L_iᵀ`,
/// obtained from the single linear solve `Σ − 𝒯(Σ) = Σ0`.
pub fn steady_covariance_sum(lp: &ClosedLoop, t: &Mat, sigma0: &[Mat]) -> Result<CoupledSolution> {
    solve_coupled(lp, t, sigma0, Direction::Forward, &SolverOptions::default(), None)
}

pub fn steady_covariance_sum_with(
    lp: &ClosedLoop,
    t: &Mat,
    sigma0: &[Mat],
    opts: &SolverOptions,
    method: SolveMethod,
) -> Result<CoupledSolution> {
    solve_coupled(lp, t, sigma0, Direction::Forward, opts, Some(method))
}

/// One step of the forward second-moment propagation.
pub fn propagate_moments(lp: &ClosedLoop, t: &Mat, sigma: &[Mat]) -> Vec<Mat> {
    apply_operator(lp, t, sigma, Direction::Forward)
}

fn check_cost(model: &MjsModel, cost: &CostSpec, premises: bool) -> Result<()> {
    let report = cost.validate(model);
    if report.is_valid() {
        return Ok(());
    }
    let dims = report.contains(crate::model::ViolationCode::DimMismatch);
    if dims {
        Err(MjsError::DimMismatch(report.codes().join("; ")))
    } else if premises {
        Err(MjsError::PremiseViolation(report.codes().join("; ")))
    } else {
        Ok(())
    }
}

/// Pieces of the Riccati right-hand side for one mode.
struct InnerTerms {
    /// `AᵀφA`
    ata: Mat,
    /// `BᵀφA`
    bta: Mat,
    /// `R + BᵀφB`
    inner: Mat,
}

fn inner_terms(model: &MjsModel, cost: &CostSpec, x: &[Mat], i: usize) -> InnerTerms {
    let f = phi(&model.t, x, i);
    let (a, b) = (&model.a[i], &model.b[i]);
    let bt_f = b.transpose() * &f;
    InnerTerms {
        ata: a.transpose() * &f * a,
        bta: &bt_f * a,
        inner: linalg::symmetrize(&(&cost.r[i] + &bt_f * b)),
    }
}

fn riccati_mode(model: &MjsModel, cost: &CostSpec, x: &[Mat], i: usize) -> Result<Mat> {
    let terms = inner_terms(model, cost, x, i);
    let gain = linalg::spd_solve(&terms.inner, &terms.bta).ok_or(MjsError::SingularInner(i))?;
    let rhs = &terms.ata + &cost.q[i] - terms.bta.transpose() * gain;
    Ok(linalg::symmetrize(&rhs))
}

/// The Riccati map `X ↦ RHS(X)` of the coupled equations, all modes.
pub fn riccati_map(model: &MjsModel, cost: &CostSpec, x: &[Mat]) -> Result<Vec<Mat>> {
    (0..model.s).map(|i| riccati_mode(model, cost, x, i)).collect()
}

/// Solves the coupled DARE
/// `X_i = A_iᵀφ_i(X)A_i + Q_i − A_iᵀφ_i(X)B_i (R_i + B_iᵀφ_i(X)B_i)⁻¹ B_iᵀφ_i(X)A_i`
/// by value iteration from `X⁰ = Q`.
pub fn solve_cdare(model: &MjsModel, cost: &CostSpec, opts: &SolverOptions) -> Result<CoupledSolution> {
    solve_cdare_from(model, cost, opts, &cost.q)
}

/// Value iteration from an arbitrary PSD starting point.
pub fn solve_cdare_from(model: &MjsModel, cost: &CostSpec, opts: &SolverOptions, init: &[Mat]) -> Result<CoupledSolution> {
    check_cost(model, cost, opts.check_premises)?;
    if init.len() != model.s || init.iter().any(|m| m.shape() != (model.n, model.n)) {
        return Err(MjsError::DimMismatch("initial iterate has wrong shape".into()));
    }
    let mut x: Vec<Mat> = init.iter().map(linalg::symmetrize).collect();
    let mut prev_delta = f64::INFINITY;
    let mut stalled = 0usize;
    for iter in 1..=opts.max_iter {
        let next = riccati_map(model, cost, &x)?;
        let mut delta = 0.0_f64;
        let mut size = 0.0_f64;
        for (a, b) in next.iter().zip(&x) {
            delta = delta.max(linalg::sym_norm(&(a - b)) / linalg::sym_norm(b).max(1.0));
            size = size.max(linalg::sym_norm(a));
        }
        x = next;
        if !(size <= NORM_CAP) {
            return Err(MjsError::Diverged(format!("iterate norm {size:e} exceeds {NORM_CAP:e} at step {iter}")));
        }
        if delta <= opts.tol {
            let residual = cdare_residual(model, cost, &x)?;
            return Ok(CoupledSolution { x, residual, iterations: iter, method: SolveMethod::FixedPoint });
        }
        if delta >= prev_delta {
            stalled += 1;
            if stalled >= STALL_WINDOW {
                return Err(MjsError::Diverged(format!("update norm non-decreasing for {STALL_WINDOW} steps")));
            }
        } else {
            stalled = 0;
        }
        prev_delta = delta;
    }
    Err(MjsError::Diverged(format!("no convergence within {} iterations", opts.max_iter)))
}

/// `max_i ‖RHS_i(P) − P_i‖`.
pub fn cdare_residual(model: &MjsModel, cost: &CostSpec, p: &[Mat]) -> Result<f64> {
    if p.len() != model.s {
        return Err(MjsError::DimMismatch(format!("{} matrices for {} modes", p.len(), model.s)));
    }
    let rhs = riccati_map(model, cost, p)?;
    Ok(rhs.iter().zip(p).map(|(r, pi)| linalg::spectral_norm(&(r - pi))).fold(0.0, f64::max))
}

/// `K_i = −(R_i + B_iᵀφ_i(P)B_i)⁻¹ B_iᵀφ_i(P)A_i`.
pub fn optimal_gain(model: &MjsModel, cost: &CostSpec, p: &[Mat]) -> Result<Controller> {
    if p.len() != model.s {
        return Err(MjsError::DimMismatch(format!("{} matrices for {} modes", p.len(), model.s)));
    }
    let k = (0..model.s)
        .map(|i| {
            let terms = inner_terms(model, cost, p, i);
            linalg::spd_solve(&terms.inner, &terms.bta)
                .map(|g| -g)
                .ok_or(MjsError::SingularInner(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Controller::new(k))
}

/// `σ_w² Σ_i π_i tr(P_i)`.
pub fn optimal_cost(p: &[Mat], pi: &ModeDistribution, sigma_w: f64) -> f64 {
    sigma_w * sigma_w * p.iter().zip(&pi.pi).map(|(pi_mat, w)| w * pi_mat.trace()).sum::<f64>()
}

/// Average cost of a stabilizing controller on `model`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerCost {
    pub j: f64,
    /// Cost-to-go matrices `P^K` from the coupled Lyapunov equations.
    pub p_k: CoupledSolution,
    pub pi: ModeDistribution,
}

/// Infinite-horizon average cost `J(K) = σ_w² Σ_i π_T(i) tr(P^K_i)` where
/// `P^K_i = Q_i + K_iᵀR_iK_i + L_iᵀφ_i(P^K)L_i`. The ergodic average does
/// not depend on the initial mode distribution.
pub fn cost_of_controller(model: &MjsModel, cost: &CostSpec, k: &Controller) -> Result<ControllerCost> {
    let lp = closed_loop(model, k)?;
    let y: Vec<Mat> = (0..model.s)
        .map(|i| linalg::symmetrize(&(&cost.q[i] + k.k[i].transpose() * &cost.r[i] * &k.k[i])))
        .collect();
    let p_k = solve_coupled_lyapunov(&lp, &model.t, &y)?;
    let pi = stationary_distribution(&model.t)?;
    let j = optimal_cost(&p_k.x, &pi, cost.sigma_w);
    Ok(ControllerCost { j, p_k, pi })
}

/// Optimal solution bundle for a model.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub p: CoupledSolution,
    pub k: Controller,
    pub pi: ModeDistribution,
    pub j: f64,
    pub rho: f64,
}

/// Solves the cDARE, forms `K★`, and checks it stabilizes the model.
pub fn solve_lqr(model: &MjsModel, cost: &CostSpec, opts: &SolverOptions) -> Result<LqrSolution> {
    let p = solve_cdare(model, cost, opts)?;
    let k = optimal_gain(model, cost, &p.x)?;
    let verdict = stability::is_mss(&closed_loop(model, &k)?, &model.t)?;
    if !verdict.stable {
        return Err(MjsError::NotMss(verdict.rho));
    }
    let pi = stationary_distribution(&model.t)?;
    let j = optimal_cost(&p.x, &pi, cost.sigma_w);
    Ok(LqrSolution { p, k, pi, j, rho: verdict.rho })
}
