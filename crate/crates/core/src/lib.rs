//! Linear-quadratic control of Markov jump linear systems.
//!
//! The plant is `x_{t+1} = A_{ω(t)} x_t + B_{ω(t)} u_t + w_t`, where the
//! mode `ω(t)` follows an ergodic Markov chain with transition matrix `T`.
//! The crate solves the coupled Riccati equations for the optimal
//! mode-dependent gains, tests mean-square stability, evaluates costs in
//! closed form and by simulation, and studies certainty-equivalent control
//! under model error.

pub mod bench;
pub mod ce;
pub mod error;
pub mod linalg;
pub mod model;
pub mod modelfile;
pub mod rng;
pub mod sim;
pub mod solvers;
pub mod stability;

pub use error::{MjsError, Result};
pub use linalg::Mat;
pub use model::{Controller, CostSpec, MjsModel, ModeDistribution};
pub use solvers::{CoupledSolution, SolverOptions};
