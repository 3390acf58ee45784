//! Proximal gradient solvers for `f(x) + λ h(x)` with separable `h`.
//!
//! [`rbcd_solve`] updates one block per iteration: it draws a block from a
//! [`BlockSelector`](crate::sampling::BlockSelector), takes a proximal
//! gradient step on that block with a step `1/θ_i` from a block-wise
//! Barzilai–Borwein estimate, and backtracks (`θ_i·η^j`, `j = 1, 2, …`) until
//! the sufficient-decrease test
//!
//! ```text
//! F(x⁺) ≤ F(x) − (σ/2)·‖x⁺ − x‖²
//! ```
//!
//! holds. [`gist_solve`] is the full-gradient method; it produces the same
//! iterates as `rbcd_solve` on a single-block partition with the cyclic
//! selector.

mod gist;
mod rbcd;

pub use gist::{gist_solve, gist_solve_observed};
pub use rbcd::{rbcd_solve, rbcd_solve_observed};

use std::time::Instant;

use crate::blocks::{BlockPartition, FlopCounter, Iterate, TraceRecord};
use crate::error::{invalid, Result};
use crate::loss::{full_gradient, PredictionCache, DEFAULT_REFRESH_INTERVAL};
use crate::penalty::block_violation;
use crate::problem::DesignProblem;
use crate::sampling::{exact_block_violations, ViolationVector};

/// Exponent of the step norm in the sufficient-decrease test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecreaseNorm {
    /// `‖Δx‖`
    Plain,
    /// `‖Δx‖²`
    #[default]
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Sufficient-decrease constant `σ > 0`.
    pub sigma: f64,
    /// Backtracking growth `η > 1`.
    pub eta: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Starting curvature estimate for every block.
    pub theta_init: f64,
    pub max_iterations: usize,
    /// Retries after the first attempt before giving up.
    pub max_backtracks: usize,
    pub violation_tolerance: f64,
    /// Evaluate the exact violation every this many iterations, charged to
    /// the diagnostic counter. `None` disables the checks.
    pub check_violation_every: Option<usize>,
    pub seed: u64,
    pub decrease_norm: DecreaseNorm,
    /// Accepted updates between full recomputations of `Ax`; 0 disables.
    pub cache_refresh_interval: usize,
    /// Store elapsed wall time in trace records; otherwise 0.
    pub record_wall_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-5,
            eta: 2.0,
            theta_min: 1e-10,
            theta_max: 1e10,
            theta_init: 1.0,
            max_iterations: 1000,
            max_backtracks: 60,
            violation_tolerance: 1e-3,
            check_violation_every: None,
            seed: 0,
            decrease_norm: DecreaseNorm::Squared,
            cache_refresh_interval: DEFAULT_REFRESH_INTERVAL,
            record_wall_time: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.eta > 1.0) {
            return invalid(format!("eta must exceed 1, got {}", self.eta));
        }
        if !(self.theta_min > 0.0 && self.theta_min <= self.theta_max && self.theta_max.is_finite()) {
            return invalid("theta bounds must satisfy 0 < theta_min <= theta_max < inf");
        }
        if !(self.theta_init > 0.0 && self.theta_init.is_finite()) {
            return invalid("theta_init must be positive");
        }
        if self.max_iterations == 0 || self.max_backtracks == 0 {
            return invalid("iteration and backtracking limits must be positive");
        }
        if !(self.violation_tolerance >= 0.0) {
            return invalid("violation tolerance must be non-negative");
        }
        if self.check_violation_every == Some(0) {
            return invalid("check_violation_every must be positive");
        }
        Ok(())
    }

    fn clamp_theta(&self, theta: f64) -> f64 {
        theta.clamp(self.theta_min, self.theta_max)
    }
}

/// Per-block curvature estimates `θ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEstimates {
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    ViolationBelowTolerance,
    ConvergedZeroViolations,
    BacktrackFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::MaxIterations => "max_iterations",
            Termination::ViolationBelowTolerance => "violation_below_tolerance",
            Termination::ConvergedZeroViolations => "converged_zero_violations",
            Termination::BacktrackFailure => "backtrack_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub final_iterate: Iterate,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    /// Flops on the comparison axis.
    pub flops: FlopCounter,
    /// Flops spent on exact violation checks, kept off the comparison axis.
    pub diagnostic_flops: FlopCounter,
    /// Accepted steps.
    pub iterations: usize,
    pub steps: StepEstimates,
    /// Tracked `z̃` at termination.
    pub approx_violations: ViolationVector,
}

impl SolveResult {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().expect("trace is never empty").objective
    }

    /// Exact violation of the last record that has one.
    pub fn final_violation(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|r| r.violation)
    }
}

/// One accepted step, reported before the iterate is overwritten.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub iteration: usize,
    pub block: usize,
    /// The iterate at which the partial gradient was evaluated.
    pub iterate_before: &'a [f64],
    pub partial_gradient: &'a [f64],
    /// `z̃_i` right after its refresh from `partial_gradient`.
    pub approx_violation: f64,
    pub new_block: &'a [f64],
    pub objective_before: f64,
    pub objective_after: f64,
    pub step_sq_norm: f64,
    pub backtracks: usize,
    pub theta: f64,
}

/// Hook for instrumented runs.
pub trait SolverObserver {
    fn on_step(&mut self, event: &StepEvent<'_>);
}

impl SolverObserver for () {
    fn on_step(&mut self, _event: &StepEvent<'_>) {}
}

impl<F: FnMut(&StepEvent<'_>)> SolverObserver for F {
    fn on_step(&mut self, event: &StepEvent<'_>) {
        self(event)
    }
}

/// Accepts iff `F_new ≤ F_old − (σ/2)‖x_new − x_old‖²`. Non-finite objectives
/// are rejected.
pub fn sufficient_decrease_test(f_new: f64, f_old: f64, x_new: &[f64], x_old: &[f64], sigma: f64) -> bool {
    let sq: f64 = x_new.iter().zip(x_old).map(|(a, b)| (a - b) * (a - b)).sum();
    sufficient_decrease(f_new, f_old, sq, sigma, DecreaseNorm::Squared)
}

/// Decrease test from a precomputed `‖Δx‖²`.
pub fn sufficient_decrease(f_new: f64, f_old: f64, step_sq_norm: f64, sigma: f64, norm: DecreaseNorm) -> bool {
    if !f_new.is_finite() || !f_old.is_finite() {
        return false;
    }
    let measure = match norm {
        DecreaseNorm::Squared => step_sq_norm,
        DecreaseNorm::Plain => step_sq_norm.sqrt(),
    };
    f_new <= f_old - 0.5 * sigma * measure
}

/// Relative objective gap treated as rounding noise by the line search.
pub const ROUNDING_GAP: f64 = 4.0 * f64::EPSILON;

/// True when `f_new` and `f_old` differ by no more than rounding noise, so no
/// shorter step can show a verifiable decrease.
pub fn within_rounding(f_new: f64, f_old: f64) -> bool {
    (f_new - f_old).abs() <= ROUNDING_GAP * f_old.abs().max(1.0)
}

/// Barzilai–Borwein curvature `Δxᵀ Δg / Δxᵀ Δx`, clamped to
/// `[theta_min, theta_max]`. Keeps `theta` when the step is zero or the
/// ratio is not a positive finite number.
pub fn bb_step_update(theta: f64, dx: &[f64], dg: &[f64], theta_min: f64, theta_max: f64) -> f64 {
    let mut xx = 0.0;
    let mut xg = 0.0;
    for (a, b) in dx.iter().zip(dg) {
        xx += a * a;
        xg += a * b;
    }
    if xx == 0.0 {
        return theta;
    }
    let ratio = xg / xx;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return theta;
    }
    ratio.clamp(theta_min, theta_max)
}

fn bb_from_history(theta: f64, x_now: &[f64], x_prev: &[f64], g_now: &[f64], g_prev: &[f64], cfg: &SolverConfig) -> f64 {
    let dx: Vec<f64> = x_now.iter().zip(x_prev).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = g_now.iter().zip(g_prev).map(|(a, b)| a - b).collect();
    bb_step_update(theta, &dx, &dg, cfg.theta_min, cfg.theta_max)
}

/// Exact per-block violations at `x` and their maximum. Computes `Ax` from
/// scratch and charges one full gradient.
pub fn compute_exact_violation(
    problem: &DesignProblem,
    x: &Iterate,
    counter: &mut FlopCounter,
) -> Result<(Vec<f64>, f64)> {
    let cache = PredictionCache::new(&problem.features, x.values())?;
    exact_violation_with_margins(problem, x.partition(), x.values(), cache.margins(), counter)
}

pub(crate) fn exact_violation_with_margins(
    problem: &DesignProblem,
    partition: &BlockPartition,
    x: &[f64],
    margins: &[f64],
    counter: &mut FlopCounter,
) -> Result<(Vec<f64>, f64)> {
    let grad = full_gradient(&problem.loss, &problem.features, margins, &problem.labels, counter)?;
    let z = exact_block_violations(problem, partition, x, &grad)?;
    let max = z.iter().copied().fold(0.0, f64::max);
    debug_assert_eq!(max, block_violation(&problem.penalty, x, &grad, problem.lambda)?);
    Ok((z, max))
}

pub(crate) struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Self { start: Instant::now(), enabled }
    }

    pub(crate) fn now(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

fn check_due(cfg: &SolverConfig, iteration: usize) -> bool {
    matches!(cfg.check_violation_every, Some(every) if iteration.is_multiple_of(every))
}

/// `loss + λ·Σ_b pen_b` with the block penalties summed in block order, so an
/// unchanged candidate reproduces the current objective bit for bit.
#[inline]
fn assemble_objective(loss: f64, lambda: f64, block_pens: impl Iterator<Item = f64>) -> f64 {
    loss + lambda * block_pens.fold(0.0, |acc, p| acc + p)
}

/// Attaches the exact violation to the last trace record if checks are on
/// and it has none yet.
fn finalize_violation(
    cfg: &SolverConfig,
    problem: &DesignProblem,
    partition: &BlockPartition,
    x: &[f64],
    margins: &[f64],
    trace: &mut [TraceRecord],
    diagnostic: &mut FlopCounter,
) -> Result<()> {
    if cfg.check_violation_every.is_none() {
        return Ok(());
    }
    let last = trace.last_mut().expect("trace is never empty");
    if last.violation.is_none() {
        let (_, v) = exact_violation_with_margins(problem, partition, x, margins, diagnostic)?;
        last.violation = Some(v);
    }
    Ok(())
}
