//! Certainty-equivalent control and its perturbation theory.
//!
//! A nominal model `(Â, B̂, T̂)` yields `P̂` and `K̂` through the same
//! Riccati machinery as the truth; `K̂` is then deployed on the true plant.
//! This module measures the resulting mismatches and evaluates the
//! closed-form bounds on `‖P̂ − P★‖`, `‖K̂ − K★‖` and `Ĵ − J★`.
//!
//! Norm shorthands used throughout: `‖V‖₊ = ‖V‖ + 1`,
//! `‖V_{1:s}‖ = max_i ‖V_i‖` and `σ̲(V_{1:s}) = min_i σ̲(V_i)`.

use crate::error::{MjsError, Result};
use crate::linalg::{self, Mat};
use crate::model::{phi, Controller, CostSpec, MjsModel};
use crate::solvers::{
    self, cost_of_controller, optimal_gain, solve_cdare, solve_coupled_lyapunov, CoupledSolution, SolverOptions,
};
use crate::stability::{self, build_augmented, closed_loop, TauEstimate};

/// `ε` bounds the spectral-norm errors of `A` and `B`; `η` bounds the
/// infinity-norm error of `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyLevels {
    pub epsilon: f64,
    pub eta: f64,
}

impl UncertaintyLevels {
    pub fn new(epsilon: f64, eta: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && eta >= 0.0) {
            return Err(MjsError::InvalidArgument("uncertainty levels must be nonnegative".into()));
        }
        Ok(UncertaintyLevels { epsilon, eta })
    }
}

pub fn measure_uncertainty(truth: &MjsModel, nominal: &MjsModel) -> Result<UncertaintyLevels> {
    if (truth.n, truth.p, truth.s) != (nominal.n, nominal.p, nominal.s) || truth.t.shape() != nominal.t.shape() {
        return Err(MjsError::DimMismatch("truth and nominal models differ in shape".into()));
    }
    let mut epsilon = 0.0_f64;
    for i in 0..truth.s {
        if truth.a[i].shape() != nominal.a[i].shape() || truth.b[i].shape() != nominal.b[i].shape() {
            return Err(MjsError::DimMismatch(format!("mode {i} matrices differ in shape")));
        }
        epsilon = epsilon
            .max(linalg::spectral_norm(&(&truth.a[i] - &nominal.a[i])))
            .max(linalg::spectral_norm(&(&truth.b[i] - &nominal.b[i])));
    }
    let eta = linalg::inf_norm(&(&truth.t - &nominal.t));
    Ok(UncertaintyLevels { epsilon, eta })
}

fn max_norm(mats: &[Mat]) -> f64 {
    mats.iter().map(linalg::spectral_norm).fold(0.0, f64::max)
}

fn min_sv(mats: &[Mat]) -> f64 {
    mats.iter().map(linalg::min_singular_value).fold(f64::INFINITY, f64::min)
}

/// Problem-dependent constants of the perturbation bounds, with the norms
/// they are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub xi: f64,
    pub c_eps: f64,
    pub c_eps_u: f64,
    pub c_eta: f64,
    pub c_eta_u: f64,
    pub gamma_star: f64,
    /// `‖A★‖₊`
    pub a_plus: f64,
    /// `‖B★‖₊`
    pub b_plus: f64,
    /// `‖P★‖₊`
    pub p_plus: f64,
    /// `‖R⁻¹‖₊`
    pub r_inv_plus: f64,
    /// `‖L★‖₊`
    pub l_plus: f64,
    /// `‖K★‖₊`
    pub k_plus: f64,
    /// `‖B★‖` (no offset), used by the premise check.
    pub b_norm: f64,
    /// `‖R‖`
    pub r_norm: f64,
    pub sigma_min_p: f64,
    pub sigma_min_q: f64,
    pub sigma_min_r: f64,
}

pub fn theory_constants(truth: &MjsModel, cost: &CostSpec, p_star: &[Mat], k_star: &Controller) -> Result<TheoryConstants> {
    let lp = closed_loop(truth, k_star)?;
    let r_inv = cost
        .r
        .iter()
        .enumerate()
        .map(|(i, r)| r.clone().try_inverse().ok_or(MjsError::SingularInner(i)))
        .collect::<Result<Vec<_>>>()?;
    let a_plus = max_norm(&truth.a) + 1.0;
    let b_norm = max_norm(&truth.b);
    let b_plus = b_norm + 1.0;
    let p_plus = max_norm(p_star) + 1.0;
    let r_inv_plus = max_norm(&r_inv) + 1.0;
    let l_plus = max_norm(&lp.l) + 1.0;
    let k_plus = max_norm(&k_star.k) + 1.0;
    let sigma_min_p = min_sv(p_star);

    let xi = (1.0 / (b_plus.powi(2) * r_inv_plus * l_plus.powi(2))).min(sigma_min_p);
    let c_eps = a_plus.powi(2) * b_plus * p_plus.powi(2) * r_inv_plus;
    let c_eps_u = 1.0 / (c_eps * b_plus.powi(2) * p_plus * r_inv_plus);
    let c_eta = a_plus.powi(2) * b_plus.powi(4) * p_plus.powi(3) * r_inv_plus.powi(2);
    let c_eta_u = 1.0 / c_eta;
    let gamma_star = a_plus.max(b_plus).max(p_plus).max(k_plus);
    Ok(TheoryConstants {
        xi,
        c_eps,
        c_eps_u,
        c_eta,
        c_eta_u,
        gamma_star,
        a_plus,
        b_plus,
        p_plus,
        r_inv_plus,
        l_plus,
        k_plus,
        b_norm,
        r_norm: max_norm(&cost.r),
        sigma_min_p,
        sigma_min_q: min_sv(&cost.q),
        sigma_min_r: min_sv(&cost.r),
    })
}

/// Outcome of the perturbation-theorem premise check. Slack is
/// `threshold − value`; a premise holds when its slack is nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PremiseCheck {
    pub pass: bool,
    /// `C_ε^u ξ (1−γ)² / (204 n s τ²)`, `‖B★‖`, `σ̲(Q)`.
    pub eps_thresholds: [f64; 3],
    pub eps_slack: [f64; 3],
    /// `C_η^u ξ (1−γ)² / (48 n s τ²)`.
    pub eta_threshold: f64,
    pub eta_slack: f64,
}

pub fn thm1_premises(levels: &UncertaintyLevels, consts: &TheoryConstants, tau: &TauEstimate, n: usize, s: usize) -> PremiseCheck {
    let ns = (n * s) as f64;
    let gap2 = (1.0 - tau.gamma).powi(2);
    let tau2 = tau.tau * tau.tau;
    let eps_thresholds = [
        consts.c_eps_u * consts.xi * gap2 / (204.0 * ns * tau2),
        consts.b_norm,
        consts.sigma_min_q,
    ];
    let eps_slack = eps_thresholds.map(|th| th - levels.epsilon);
    let eta_threshold = consts.c_eta_u * consts.xi * gap2 / (48.0 * ns * tau2);
    let eta_slack = eta_threshold - levels.eta;
    PremiseCheck {
        pass: eps_slack.iter().all(|v| *v >= 0.0) && eta_slack >= 0.0,
        eps_thresholds,
        eps_slack,
        eta_threshold,
        eta_slack,
    }
}

/// A bound value plus whether its hypotheses were met.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBound {
    pub value: f64,
    pub guaranteed: bool,
}

/// `√(ns) τ / (1−γ) · (6 C_ε ε + 2 C_η η)`.
pub fn thm1_bound_value(levels: &UncertaintyLevels, consts: &TheoryConstants, tau: &TauEstimate, n: usize, s: usize) -> f64 {
    ((n * s) as f64).sqrt() * tau.tau / (1.0 - tau.gamma) * (6.0 * consts.c_eps * levels.epsilon + 2.0 * consts.c_eta * levels.eta)
}

/// Riccati perturbation bound, flagged as not guaranteed when the
/// premises fail.
pub fn thm1_bound(levels: &UncertaintyLevels, consts: &TheoryConstants, tau: &TauEstimate, n: usize, s: usize) -> TheoryBound {
    TheoryBound {
        value: thm1_bound_value(levels, consts, tau, n, s),
        guaranteed: thm1_premises(levels, consts, tau, n, s).pass,
    }
}

/// Gain-mismatch bound `28 Γ★³ (σ̲(R) + Γ★³) / σ̲(R)² · f`, valid for
/// `max{ε, η} ≤ f ≤ Γ★`.
pub fn lemma5_gain_bound(f: f64, levels: &UncertaintyLevels, consts: &TheoryConstants) -> Result<f64> {
    let lo = levels.epsilon.max(levels.eta);
    if !(f >= lo && f <= consts.gamma_star) {
        return Err(MjsError::HypothesisViolation(format!(
            "f = {f:e} outside [{lo:e}, {:e}]",
            consts.gamma_star
        )));
    }
    Ok(lemma5_value(f, consts))
}

fn lemma5_value(f: f64, consts: &TheoryConstants) -> f64 {
    let g3 = consts.gamma_star.powi(3);
    let sr = consts.sigma_min_r;
    28.0 * g3 * (sr + g3) / (sr * sr) * f
}

/// Largest `f` for which the suboptimality bound applies:
/// `(1−γ) σ̲(R)² / (180 s Γ★⁶ (σ̲(R) + Γ★³) τ)`.
pub fn lemma6_smallness_threshold(consts: &TheoryConstants, tau: &TauEstimate, s: usize) -> f64 {
    let g3 = consts.gamma_star.powi(3);
    let sr = consts.sigma_min_r;
    (1.0 - tau.gamma) * sr * sr / (180.0 * s as f64 * g3 * g3 * (sr + g3) * tau.tau)
}

/// Suboptimality bound
/// `800 σ_w² min{n,p} s · (2τ/(1−γ)) · (‖R‖ + Γ★³) Γ★⁶ (σ̲(R) + Γ★³)² / σ̲(R)⁴ · f²`.
#[allow(clippy::too_many_arguments)]
pub fn lemma6_subopt_bound(
    consts: &TheoryConstants,
    tau: &TauEstimate,
    n: usize,
    p: usize,
    s: usize,
    sigma_w: f64,
    f: f64,
) -> TheoryBound {
    let g3 = consts.gamma_star.powi(3);
    let sr = consts.sigma_min_r;
    let sigma_bound = 2.0 * tau.tau / (1.0 - tau.gamma);
    let value = 800.0
        * sigma_w
        * sigma_w
        * n.min(p) as f64
        * s as f64
        * sigma_bound
        * (consts.r_norm + g3)
        * g3
        * g3
        * (sr + g3).powi(2)
        / sr.powi(4)
        * f
        * f;
    TheoryBound { value, guaranteed: f <= lemma6_smallness_threshold(consts, tau, s) }
}

/// Nominal Riccati solution and CE gains.
#[derive(Debug, Clone, PartialEq)]
pub struct CeSynthesis {
    pub p_hat: CoupledSolution,
    pub k_hat: Controller,
    /// `ρ(L̃)` of the nominal model under `K̂`.
    pub nominal_rho: f64,
}

pub fn synthesize_ce(nominal: &MjsModel, cost: &CostSpec, opts: &SolverOptions) -> Result<CeSynthesis> {
    let p_hat = solve_cdare(nominal, cost, opts)?;
    let k_hat = optimal_gain(nominal, cost, &p_hat.x)?;
    let verdict = stability::is_mss(&closed_loop(nominal, &k_hat)?, &nominal.t)?;
    if !verdict.stable {
        return Err(MjsError::NotMss(verdict.rho));
    }
    Ok(CeSynthesis { p_hat, k_hat, nominal_rho: verdict.rho })
}

/// `Ĵ − J★ = σ_w² Σ_i tr(Σ^K̂_i ΔK_iᵀ (R_i + B★_iᵀ φ★_i(P^K★) B★_i) ΔK_i)`
/// with `ΔK = K★ − K̂`, where `Σ^K̂` accumulates the noise-free second
/// moments of the `K̂` loop started from `x₀ ~ N(0, I)`, `ω(0) ~ π_T`.
pub fn exact_gap(truth: &MjsModel, cost: &CostSpec, k_star: &Controller, k_hat: &Controller) -> Result<f64> {
    let lp_star = closed_loop(truth, k_star)?;
    let lp_hat = closed_loop(truth, k_hat)?;
    let y: Vec<Mat> = (0..truth.s)
        .map(|i| linalg::symmetrize(&(&cost.q[i] + k_star.k[i].transpose() * &cost.r[i] * &k_star.k[i])))
        .collect();
    let p_k = solve_coupled_lyapunov(&lp_star, &truth.t, &y)?;
    let pi = crate::model::stationary_distribution(&truth.t)?;
    let sigma0: Vec<Mat> = pi.pi.iter().map(|w| Mat::identity(truth.n, truth.n) * *w).collect();
    let sigma = solvers::steady_covariance_sum(&lp_hat, &truth.t, &sigma0)?;
    let mut total = 0.0;
    for i in 0..truth.s {
        let b = &truth.b[i];
        let h = &cost.r[i] + b.transpose() * phi(&truth.t, &p_k.x, i) * b;
        let dk = &k_star.k[i] - &k_hat.k[i];
        total += (&sigma.x[i] * dk.transpose() * h * dk).trace();
    }
    Ok(cost.sigma_w * cost.sigma_w * total)
}

/// Costs of the CE controller on the truth, present only when `K̂`
/// stabilizes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeCosts {
    pub j_hat: f64,
    /// `Ĵ − J★` from [`exact_gap`].
    pub gap: f64,
    /// `Ĵ − J★` as the difference of the two controllers' Lyapunov costs.
    pub gap_direct: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeReport {
    pub p_star: CoupledSolution,
    pub k_star: Controller,
    pub p_hat: CoupledSolution,
    pub k_hat: Controller,
    pub j_star: f64,
    /// `max_i ‖K★_i − K̂_i‖`
    pub gain_mismatch: f64,
    /// `max_i ‖P★_i − P̂_i‖`
    pub p_mismatch: f64,
    /// `max_i ‖P̂_i − P★_i‖ / ‖P★_i‖`
    pub delta_p: f64,
    /// `ρ(L̃)` of the true plant under `K̂`.
    pub rho_hat: f64,
    /// `ρ(L̃★)` of the true plant under `K★`.
    pub rho_star: f64,
    pub stabilizes_true: bool,
    /// `None` when `K̂` does not stabilize the truth (cost is infinite).
    pub costs: Option<CeCosts>,
}

impl CeReport {
    /// `Δ_J = (Ĵ − J★)/J★`, if defined.
    pub fn delta_j(&self) -> Option<f64> {
        self.costs.map(|c| c.relative_gap)
    }
}

pub fn run_ce_pipeline(truth: &MjsModel, nominal: &MjsModel, cost: &CostSpec, opts: &SolverOptions) -> Result<CeReport> {
    let star = solvers::solve_lqr(truth, cost, opts)?;
    let ce = synthesize_ce(nominal, cost, opts)?;
    let mut gain_mismatch = 0.0_f64;
    let mut p_mismatch = 0.0_f64;
    let mut delta_p = 0.0_f64;
    for i in 0..truth.s {
        gain_mismatch = gain_mismatch.max(linalg::spectral_norm(&(&star.k.k[i] - &ce.k_hat.k[i])));
        let dp = linalg::sym_norm(&(&ce.p_hat.x[i] - &star.p.x[i]));
        p_mismatch = p_mismatch.max(dp);
        delta_p = delta_p.max(dp / linalg::sym_norm(&star.p.x[i]));
    }
    let verdict = stability::is_mss(&closed_loop(truth, &ce.k_hat)?, &truth.t)?;
    let costs = if verdict.stable {
        let j_hat = cost_of_controller(truth, cost, &ce.k_hat)?.j;
        let j_k_star = cost_of_controller(truth, cost, &star.k)?.j;
        let gap = exact_gap(truth, cost, &star.k, &ce.k_hat)?;
        Some(CeCosts { j_hat, gap, gap_direct: j_hat - j_k_star, relative_gap: gap / star.j })
    } else {
        None
    };
    Ok(CeReport {
        p_star: star.p,
        k_star: star.k,
        p_hat: ce.p_hat,
        k_hat: ce.k_hat,
        j_star: star.j,
        gain_mismatch,
        p_mismatch,
        delta_p,
        rho_hat: verdict.rho,
        rho_star: star.rho,
        stabilizes_true: verdict.stable,
        costs,
    })
}

/// Theory-side evaluation of a CE instance: constants, `γ`, `τ`, premise
/// slacks and every bound next to the measured quantity it controls.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub levels: UncertaintyLevels,
    pub constants: TheoryConstants,
    pub tau: TauEstimate,
    pub rho_star: f64,
    pub premises: PremiseCheck,
    pub p_bound: TheoryBound,
    /// The `f(ε, η)` fed to the gain and gap bounds: the Riccati bound when
    /// the premises hold, otherwise the measured `‖P̂ − P★‖`.
    pub f: f64,
    pub f_is_measured: bool,
    /// `None` when `f` falls outside `[max{ε, η}, Γ★]`.
    pub gain_bound: Option<f64>,
    pub gap_bound: TheoryBound,
}

pub fn theory_report(
    truth: &MjsModel,
    nominal: &MjsModel,
    cost: &CostSpec,
    report: &CeReport,
    gamma: Option<f64>,
    k_max: usize,
) -> Result<TheoryReport> {
    let levels = measure_uncertainty(truth, nominal)?;
    let constants = theory_constants(truth, cost, &report.p_star.x, &report.k_star)?;
    let aug = build_augmented(&closed_loop(truth, &report.k_star)?, &truth.t)?;
    let rho_star = stability::spectral_radius(&aug.m)?;
    let gamma = gamma.unwrap_or_else(|| stability::default_gamma(rho_star));
    let tau = stability::tau_with_rho(&aug, gamma, k_max, rho_star)?;
    let (n, p, s) = (truth.n, truth.p, truth.s);
    let premises = thm1_premises(&levels, &constants, &tau, n, s);
    let p_bound = TheoryBound { value: thm1_bound_value(&levels, &constants, &tau, n, s), guaranteed: premises.pass };
    let (f, f_is_measured) = if premises.pass { (p_bound.value, false) } else { (report.p_mismatch, true) };
    let gain_bound = lemma5_gain_bound(f, &levels, &constants).ok();
    let gap_bound = lemma6_subopt_bound(&constants, &tau, n, p, s, cost.sigma_w, f);
    Ok(TheoryReport { levels, constants, tau, rho_star, premises, p_bound, f, f_is_measured, gain_bound, gap_bound })
}
