//! Trajectory simulation and Monte Carlo cost estimates.
//!
//! A simulation with seed `S` draws its mode path from
//! `sample_mode_sequence(T, π₀, H, derive_seed(S, [1]))` and its Gaussians
//! (first `x₀`, then `w₀, w₁, …`, each coordinate in order) from
//! `Normal::new(derive_seed(S, [2]))`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{MjsError, Result};
use crate::linalg::Mat;
use crate::model::{sample_mode_sequence, Controller, CostSpec, MjsModel, ModeDistribution};
use crate::rng::{derive_seed, Normal};

/// State-norm threshold at which a rollout is declared divergent.
pub const OVERFLOW_NORM: f64 = 1e12;

/// Burn-in cap for the ergodic-average estimator.
pub const MAX_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Initial mode law; uniform when absent.
    pub pi0: Option<ModeDistribution>,
    /// Forces `x₀` instead of drawing it from `N(0, I)`. The Gaussian
    /// stream is still consumed so noise draws do not shift.
    pub x0: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Row `t` is `x_t`. Has `len + 1` rows.
    pub states: Mat,
    /// Row `t` is `u_t`.
    pub inputs: Mat,
    /// Row `t` is `w_t`.
    pub noise: Mat,
    pub modes: Vec<usize>,
    pub stage_costs: Vec<f64>,
    pub running_avg_cost: Vec<f64>,
    /// Set when the state norm crossed [`OVERFLOW_NORM`]; the trajectory
    /// is cut at that step.
    pub overflowed: bool,
}

impl Trajectory {
    /// Number of recorded transitions.
    pub fn len(&self) -> usize {
        self.stage_costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stage_costs.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        if self.overflowed {
            Err(MjsError::NumericOverflow)
        } else {
            Ok(())
        }
    }
}

fn check_inputs(model: &MjsModel, cost: &CostSpec, k: &Controller, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(MjsError::InvalidArgument("horizon must be at least 1".into()));
    }
    if !(cost.sigma_w >= 0.0) {
        return Err(MjsError::InvalidArgument("sigma_w must be nonnegative".into()));
    }
    k.check_dims(model.n, model.p, model.s)?;
    if cost.q.len() != model.s || cost.r.len() != model.s {
        return Err(MjsError::DimMismatch("cost has wrong mode count".into()));
    }
    Ok(())
}

/// Runs one rollout, handing `(t, mode, x_t, u_t, w_t, stage_cost)` to
/// `visit`. Returns `false` on overflow.
fn rollout<F>(model: &MjsModel, cost: &CostSpec, k: &Controller, horizon: usize, seed: u64, opts: &SimOptions, mut visit: F) -> bool
where
    F: FnMut(usize, usize, &DVector<f64>, &DVector<f64>, &DVector<f64>, f64),
{
    let n = model.n;
    let uniform;
    let pi0 = match &opts.pi0 {
        Some(pi) => pi,
        None => {
            uniform = ModeDistribution::uniform(model.s);
            &uniform
        }
    };
    let modes = sample_mode_sequence(&model.t, pi0, horizon, derive_seed(seed, &[1]));
    let mut gauss = Normal::new(derive_seed(seed, &[2]));
    let mut x = DVector::from_fn(n, |_, _| gauss.sample());
    if let Some(x0) = &opts.x0 {
        x.copy_from(x0);
    }
    let mut w = DVector::zeros(n);
    for (t, &i) in modes.iter().take(horizon).enumerate() {
        let u = &k.k[i] * &x;
        for v in w.iter_mut() {
            *v = cost.sigma_w * gauss.sample();
        }
        let stage = (x.transpose() * &cost.q[i] * &x)[(0, 0)] + (u.transpose() * &cost.r[i] * &u)[(0, 0)];
        visit(t, i, &x, &u, &w, stage);
        x = &model.a[i] * &x + &model.b[i] * &u + &w;
        if !(x.norm() <= OVERFLOW_NORM) {
            return false;
        }
    }
    true
}

/// Simulates `x_{t+1} = A_ω x_t + B_ω u_t + w_t` under `u_t = K_ω x_t`.
pub fn simulate_trajectory(
    model: &MjsModel,
    cost: &CostSpec,
    k: &Controller,
    horizon: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_inputs(model, cost, k, horizon)?;
    if let Some(x0) = &opts.x0 {
        if x0.len() != model.n {
            return Err(MjsError::DimMismatch(format!("x0 has length {}, expected {}", x0.len(), model.n)));
        }
    }
    let (n, p) = (model.n, model.p);
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    let mut ws = Vec::with_capacity(horizon);
    let mut modes = Vec::with_capacity(horizon + 1);
    let mut stage_costs = Vec::with_capacity(horizon);
    let ok = rollout(model, cost, k, horizon, seed, opts, |_, i, x, u, w, c| {
        xs.push(x.clone());
        us.push(u.clone());
        ws.push(w.clone());
        modes.push(i);
        stage_costs.push(c);
    });
    // Recompute the final state from the last recorded step so the
    // recursion holds exactly for the stored noise.
    if let (Some(x), Some(u), Some(w), Some(&i)) = (xs.last(), us.last(), ws.last(), modes.last()) {
        let next = &model.a[i] * x + &model.b[i] * u + w;
        xs.push(next);
    }
    if ok {
        let full = sample_mode_sequence(
            &model.t,
            opts.pi0.as_ref().unwrap_or(&ModeDistribution::uniform(model.s)),
            horizon,
            derive_seed(seed, &[1]),
        );
        modes.push(full[horizon]);
    }
    let mut running = Vec::with_capacity(stage_costs.len());
    let mut total = 0.0;
    for (t, c) in stage_costs.iter().enumerate() {
        total += c;
        running.push(total / (t + 1) as f64);
    }
    let rows = |v: &[DVector<f64>], width: usize| Mat::from_fn(v.len(), width, |r, c| v[r][c]);
    Ok(Trajectory {
        states: rows(&xs, n),
        inputs: rows(&us, p),
        noise: rows(&ws, n),
        modes,
        stage_costs,
        running_avg_cost: running,
        overflowed: !ok,
    })
}

/// Writes a trajectory as CSV with columns `t, mode, x_1..x_n, u_1..u_p,
/// stage_cost`, one row per transition.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.states.ncols();
    let p = traj.inputs.ncols();
    let mut out = String::from("t,mode");
    for j in 1..=n {
        let _ = write!(out, ",x_{j}");
    }
    for j in 1..=p {
        let _ = write!(out, ",u_{j}");
    }
    out.push_str(",stage_cost\n");
    for t in 0..traj.len() {
        let _ = write!(out, "{t},{}", traj.modes[t]);
        for j in 0..n {
            let _ = write!(out, ",{}", traj.states[(t, j)]);
        }
        for j in 0..p {
            let _ = write!(out, ",{}", traj.inputs[(t, j)]);
        }
        let _ = writeln!(out, ",{}", traj.stage_costs[t]);
    }
    out
}

pub fn save_trajectory_csv(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, trajectory_to_csv(traj))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Rollouts that finished without overflow and enter the average.
    pub rollouts: usize,
    pub overflowed: usize,
    pub horizon: usize,
    pub burn_in: usize,
}

pub fn burn_in_for(horizon: usize) -> usize {
    MAX_BURN_IN.min(horizon / 10)
}

/// Pairwise summation in a fixed tree order.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        len => {
            let (l, r) = v.split_at(len / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Monte Carlo estimate of the average cost. Rollout `r` uses seed
/// `seed + r`, discards the first [`burn_in_for`]`(horizon)` stages, and
/// contributes the average of the rest.
#[allow(clippy::too_many_arguments)]
pub fn mc_cost(
    model: &MjsModel,
    cost: &CostSpec,
    k: &Controller,
    horizon: usize,
    rollouts: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<McEstimate> {
    check_inputs(model, cost, k, horizon)?;
    if rollouts == 0 {
        return Err(MjsError::InvalidArgument("need at least one rollout".into()));
    }
    let burn_in = burn_in_for(horizon);
    let averages: Vec<Option<f64>> = (0..rollouts)
        .into_par_iter()
        .map(|r| {
            let mut sum = 0.0;
            let ok = rollout(model, cost, k, horizon, seed.wrapping_add(r as u64), opts, |t, _, _, _, _, c| {
                if t >= burn_in {
                    sum += c;
                }
            });
            ok.then(|| sum / (horizon - burn_in) as f64)
        })
        .collect();
    let good: Vec<f64> = averages.iter().flatten().copied().collect();
    if good.is_empty() {
        return Err(MjsError::AllUnstable);
    }
    let m = good.len() as f64;
    let mean = pairwise_sum(&good) / m;
    let sq: Vec<f64> = good.iter().map(|v| (v - mean) * (v - mean)).collect();
    let stderr = if good.len() > 1 { (pairwise_sum(&sq) / (m - 1.0) / m).sqrt() } else { f64::NAN };
    Ok(McEstimate { mean, stderr, rollouts: good.len(), overflowed: rollouts - good.len(), horizon, burn_in })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, sigma_w: f64) -> (MjsModel, CostSpec) {
        let m = |v: f64| Mat::from_element(1, 1, v);
        let model = MjsModel::new(vec![m(a)], vec![m(1.0)], m(1.0)).unwrap();
        (model, CostSpec::new(vec![m(1.0)], vec![m(1.0)], sigma_w))
    }

    fn forced(x0: f64) -> SimOptions {
        SimOptions { pi0: None, x0: Some(DVector::from_element(1, x0)) }
    }

    #[test]
    fn zero_noise_zero_start_stays_at_origin() {
        let (model, cost) = scalar(0.9, 0.0);
        let tr = simulate_trajectory(&model, &cost, &Controller::zeros(1, 1, 1), 50, 3, &forced(0.0)).unwrap();
        assert!(tr.states.iter().all(|v| *v == 0.0));
        assert!(tr.stage_costs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn geometric_decay() {
        let (model, cost) = scalar(0.5, 0.0);
        let tr = simulate_trajectory(&model, &cost, &Controller::zeros(1, 1, 1), 20, 1, &forced(1.0)).unwrap();
        for t in 0..=20 {
            assert_eq!(tr.states[(t, 0)], 0.5f64.powi(t as i32));
        }
        assert_eq!(tr.modes.len(), 21);
    }

    #[test]
    fn unstable_loop_overflows_near_seventy_steps() {
        let (model, cost) = scalar(1.5, 0.0);
        let tr = simulate_trajectory(&model, &cost, &Controller::zeros(1, 1, 1), 1000, 1, &forced(1.0)).unwrap();
        assert!(tr.overflowed);
        assert_eq!(tr.check().unwrap_err().code(), "NUMERIC_OVERFLOW");
        assert!(tr.len() <= 70, "{}", tr.len());
    }

    #[test]
    fn recursion_holds_for_recorded_noise() {
        let a = vec![Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]), Mat::from_row_slice(2, 2, &[0.2, 0.0, 0.4, 0.6])];
        let b = vec![Mat::from_row_slice(2, 1, &[1.0, 0.0]), Mat::from_row_slice(2, 1, &[0.0, 1.0])];
        let t = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let model = MjsModel::new(a, b, t).unwrap();
        let cost = CostSpec::new(vec![Mat::identity(2, 2); 2], vec![Mat::identity(1, 1); 2], 0.7);
        let k = Controller::new(vec![Mat::from_row_slice(1, 2, &[-0.2, 0.1]); 2]);
        let tr = simulate_trajectory(&model, &cost, &k, 30, 9, &SimOptions::default()).unwrap();
        for t in 0..30 {
            let i = tr.modes[t];
            let x = tr.states.row(t).transpose();
            let u = tr.inputs.row(t).transpose();
            let w = tr.noise.row(t).transpose();
            let next = &model.a[i] * x + &model.b[i] * u + w;
            assert_eq!(next, tr.states.row(t + 1).transpose());
        }
        let again = simulate_trajectory(&model, &cost, &k, 30, 9, &SimOptions::default()).unwrap();
        assert_eq!(tr, again);
    }

    #[test]
    fn golden_ratio_mc_matches_closed_form() {
        let (model, cost) = scalar(1.0, 1.0);
        let g = 1.618_033_988_749_895;
        let k = Controller::new(vec![Mat::from_element(1, 1, 1.0 - g)]);
        let est = mc_cost(&model, &cost, &k, 10_000, 50, 42, &SimOptions::default()).unwrap();
        assert!((est.mean - g).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn unstable_gain_is_all_unstable() {
        let (model, cost) = scalar(1.5, 1.0);
        let err = mc_cost(&model, &cost, &Controller::zeros(1, 1, 1), 1000, 4, 0, &SimOptions::default()).unwrap_err();
        assert_eq!(err.code(), "ALL_UNSTABLE");
    }

    #[test]
    fn noiseless_cost_vanishes() {
        let (model, cost) = scalar(0.5, 0.0);
        let est = mc_cost(&model, &cost, &Controller::zeros(1, 1, 1), 100_000, 4, 5, &SimOptions::default()).unwrap();
        assert!(est.mean < 1e-3);
    }

    #[test]
    fn csv_dump_shape() {
        let (model, cost) = scalar(0.5, 1.0);
        let tr = simulate_trajectory(&model, &cost, &Controller::zeros(1, 1, 1), 3, 1, &SimOptions::default()).unwrap();
        let csv = trajectory_to_csv(&tr);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,mode,x_1,u_1,stage_cost");
        assert_eq!(lines.len(), 4);
    }
}
