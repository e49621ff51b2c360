//! Regression Monte Carlo solvers for backward SDEs and reflected backward
//! SDEs on a hypercube basis.
//!
//! The pipeline is: simulate a [`PathCloud`] of the forward Euler chain, pick
//! a [`HypercubeBasis`] and [`ThresholdSet`], then run one of the backward
//! solvers. [`models`] collects Black-Scholes benchmarks and [`oracle`] the
//! closed-form and lattice references.

pub mod basis;
pub mod bsde;
pub mod error;
pub mod grid;
pub mod models;
pub mod oracle;
pub mod rbsde;
pub mod rng;
pub mod sde;
pub mod threshold;

pub use basis::{CoefficientVector, Degree, Design, HypercubeBasis};
pub use bsde::{
    compute_cy, compute_cy_reflected, solve_backward_initial, solve_backward_modified, BackwardSolution,
    BsdeProblem, ClampLevel, Driver, FnDriver, FnObstacle, FnTerminal, Obstacle, Terminal,
};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use rbsde::{
    solve_max, solve_penalized, solve_regularized, PenaltyLevel, RbsdeProblem, ReflectedSolution,
    ReflectionMethod,
};
pub use sde::{simulate_paths, simulate_shadow_steps, ForwardModel, JumpPart, PathCloud};
pub use threshold::ThresholdSet;
