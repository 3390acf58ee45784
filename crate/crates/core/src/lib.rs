//! Randomized block-coordinate proximal gradient descent with importance
//! sampling for `min_x f(x) + λ h(x)`, where `f(x) = L(Ax)` is a smooth loss
//! of a linear model and `h` is a separable, possibly non-convex penalty
//! written as a difference of convex functions.
//!
//! ```
//! use rbcd::{
//!     datasets::{generate_toy, standardize, ToySpec},
//!     BlockPartition, DesignProblem, Iterate, Loss, Penalty, SamplerKind, SolverConfig,
//! };
//!
//! let (train, test) = generate_toy(&ToySpec::new(60, 60, 100, 5, 7))?;
//! let (train, _test) = standardize(&train, &test)?;
//! let problem = DesignProblem::new(train.features, train.labels, Loss::Logistic, Penalty::log_sum(1.0)?, 2.0)?;
//!
//! let blocks = BlockPartition::uniform(problem.dim(), 10)?;
//! let mut selector = SamplerKind::Importance { epsilon: 0.2 }.build(blocks.num_blocks())?;
//! let config = SolverConfig { max_iterations: 500, ..SolverConfig::default() };
//! let x0 = Iterate::zeros(blocks.clone());
//!
//! let result = rbcd::rbcd_solve(&problem, &blocks, selector.as_mut(), &config, &x0)?;
//! assert!(result.final_objective() < result.trace[0].objective);
//! # Ok::<(), rbcd::Error>(())
//! ```

pub mod blocks;
pub mod datasets;
mod error;
pub mod loss;
pub mod penalty;
mod problem;
pub mod sampling;
pub mod solver;
pub mod sparse;

pub use blocks::{BlockPartition, FlopCategory, FlopCounter, Iterate, TraceRecord};
pub use error::{Error, Result};
pub use loss::{Logistic, Loss, PredictionCache, SmoothLoss, Squared};
pub use penalty::{DcPenalty, LogSum, Penalty, L1};
pub use problem::DesignProblem;
pub use sampling::{BlockSelector, SamplerKind, SamplingDistribution, ViolationVector};
pub use solver::{
    compute_exact_violation, gist_solve, rbcd_solve, SolveResult, SolverConfig, Termination,
};
pub use sparse::CscMatrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/problem.md")]
    pub struct Problem;
    #[doc = include_str!("../../../book/src/penalties.md")]
    pub struct Penalties;
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub struct Sampling;
    #[doc = include_str!("../../../book/src/solvers.md")]
    pub struct Solvers;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
}
