#![allow(dead_code)]

use mjslqr::bench::{dirichlet_transition, generate_true_model, GenSpec};
use mjslqr::linalg::{spectral_norm, spectral_radius};
use mjslqr::rng::{derive_seed, stream, Normal};
use mjslqr::stability::{build_augmented, ClosedLoop};
use mjslqr::{CostSpec, Mat, MjsModel};

pub const GOLDEN: f64 = 1.618_033_988_749_895;

pub fn randn(g: &mut Normal, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| g.sample())
}

/// Random row-stochastic matrix with strictly positive entries.
pub fn random_transition(s: usize, seed: u64) -> Mat {
    dirichlet_transition(s, &mut stream(seed))
}

/// Random closed loop whose augmented matrix has spectral radius `target`.
pub fn loop_with_radius(n: usize, s: usize, target: f64, seed: u64) -> (ClosedLoop, Mat) {
    let mut g = Normal::new(seed);
    let l: Vec<Mat> = (0..s).map(|_| randn(&mut g, n, n)).collect();
    let t = random_transition(s, derive_seed(seed, &[1]));
    let rho0 = spectral_radius(&build_augmented(&ClosedLoop::new(l.clone()).unwrap(), &t).unwrap().m).unwrap();
    let c = (target / rho0).sqrt();
    (ClosedLoop::new(l.into_iter().map(|m| m * c).collect()).unwrap(), t)
}

/// Random model as in the experiments: per-mode spectral radius 0.3.
pub fn experiment_model(n: usize, p: usize, s: usize, seed: u64) -> (MjsModel, CostSpec) {
    let g = generate_true_model(&GenSpec::new(n, p, s, seed)).unwrap();
    (g.model, g.cost)
}

/// Classical DARE by the structured doubling algorithm, independent of the
/// value iteration used by the library.
pub fn sda_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Mat {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut gk = b * r.clone().try_inverse().unwrap() * b.transpose();
    let mut hk = q.clone();
    for _ in 0..100 {
        let w = (Mat::identity(n, n) + &gk * &hk).try_inverse().unwrap();
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let done = (&h_next - &hk).amax() <= 1e-15 * h_next.amax();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if done {
            break;
        }
    }
    (&hk + hk.transpose()) * 0.5
}

/// Matrix of unit spectral norm in a random direction.
pub fn unit_direction(g: &mut Normal, r: usize, c: usize) -> Mat {
    let m = randn(g, r, c);
    let norm = spectral_norm(&m);
    m / norm
}

/// Well-conditioned two-mode, two-state plant with small dynamics, weak
/// inputs and heavy input cost, plus a nominal copy whose A, B errors have
/// spectral norm exactly `eps` and whose T error has infinity norm `eta`.
pub fn well_conditioned_pair(seed: u64, eps: f64, eta: f64) -> (MjsModel, MjsModel, CostSpec) {
    let (n, p, s) = (2, 1, 2);
    let mut g = Normal::new(seed);
    let a: Vec<Mat> = (0..s).map(|_| unit_direction(&mut g, n, n) * 0.1).collect();
    let b: Vec<Mat> = (0..s).map(|_| unit_direction(&mut g, n, p) * 0.5).collect();
    let t = random_transition(s, derive_seed(seed, &[1]));
    let d = random_transition(s, derive_seed(seed, &[2]));
    let gap = mjslqr::linalg::inf_norm(&(&d - &t));
    let t_hat = &t + (&d - &t) * (eta / gap);
    let a_hat = a.iter().map(|m| m + unit_direction(&mut g, n, n) * eps).collect();
    let b_hat = b.iter().map(|m| m + unit_direction(&mut g, n, p) * eps).collect();
    let cost = CostSpec::new(vec![Mat::identity(n, n) * 0.5; s], vec![Mat::identity(p, p) * 10.0; s], 1.0);
    let truth = MjsModel::new(a, b, t).unwrap();
    let nominal = MjsModel::new(a_hat, b_hat, t_hat).unwrap();
    (truth, nominal, cost)
}
