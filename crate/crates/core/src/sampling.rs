//! Block selection: cyclic, uniform, and importance sampling driven by the
//! per-block optimality violation.
//!
//! The importance distribution mixes a uniform floor with the normalized
//! violation vector `z`:
//!
//! ```text
//! p_i = (ε + (1 − ε)·z_i/‖z‖∞) / (m·ε + (1 − ε)·Σ_k z_k/‖z‖∞)
//! ```
//!
//! so every block keeps probability at least `ε/m` while blocks far from
//! stationarity are drawn more often. `ε = 1` is the uniform distribution.
//! Since the exact `z` needs a full gradient, the solver tracks an
//! approximation `z̃`: exact at the start, then entry `i` is refreshed
//! whenever block `i`'s partial gradient is computed.

use rand::Rng;

use crate::blocks::{BlockPartition, FlopCounter};
use crate::error::{invalid, Result};
use crate::loss::full_gradient;
use crate::penalty::block_violation;
use crate::penalty::DcPenalty;
use crate::problem::DesignProblem;

/// Approximate per-block violations `z̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationVector {
    approx: Vec<f64>,
    exact_at_init: bool,
}

impl ViolationVector {
    /// Every entry unknown (`+∞`) until its block is visited.
    pub fn unknown(num_blocks: usize) -> Self {
        Self {
            approx: vec![f64::INFINITY; num_blocks],
            exact_at_init: false,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0)) {
            return invalid("violations must be non-negative");
        }
        Ok(Self { approx: values, exact_at_init: true })
    }

    pub fn values(&self) -> &[f64] {
        &self.approx
    }

    pub fn get(&self, block: usize) -> f64 {
        self.approx[block]
    }

    pub fn exact_at_init(&self) -> bool {
        self.exact_at_init
    }

    pub fn max(&self) -> f64 {
        self.approx.iter().copied().fold(0.0, f64::max)
    }

    pub fn all_zero(&self) -> bool {
        self.approx.iter().all(|&v| v == 0.0)
    }
}

/// Exact violations at `x` from one full gradient (charged `2·n·d + n`).
/// `margins` must equal `A x`.
pub fn init_violations(
    problem: &DesignProblem,
    partition: &BlockPartition,
    x: &[f64],
    margins: &[f64],
    counter: &mut FlopCounter,
) -> Result<ViolationVector> {
    let grad = full_gradient(&problem.loss, &problem.features, margins, &problem.labels, counter)?;
    let z = exact_block_violations(problem, partition, x, &grad)?;
    ViolationVector::from_values(z)
}

/// Per-block violations given the full gradient at `x`.
pub fn exact_block_violations(
    problem: &DesignProblem,
    partition: &BlockPartition,
    x: &[f64],
    grad: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != partition.total_dim() || grad.len() != partition.total_dim() {
        return invalid("iterate/gradient length does not match the partition");
    }
    (0..partition.num_blocks())
        .map(|b| {
            let r = partition.range(b)?;
            block_violation(&problem.penalty, &x[r.clone()], &grad[r], problem.lambda)
        })
        .collect()
}

/// `z̃_i ← block_violation(x_i, ∇_i f)` where `x_i` is the block at which the
/// partial gradient was evaluated. Other entries are untouched.
pub fn update_violation<P: DcPenalty + ?Sized>(
    z: &mut ViolationVector,
    block: usize,
    x_block: &[f64],
    partial_grad: &[f64],
    penalty: &P,
    lambda: f64,
) -> Result<f64> {
    if block >= z.approx.len() {
        return invalid(format!("block {block} out of range"));
    }
    let v = block_violation(penalty, x_block, partial_grad, lambda)?;
    z.approx[block] = v;
    Ok(v)
}

/// Probability vector over blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    probs: Vec<f64>,
    epsilon: f64,
}

impl SamplingDistribution {
    pub fn uniform(num_blocks: usize) -> Self {
        Self {
            probs: vec![1.0 / num_blocks as f64; num_blocks],
            epsilon: 1.0,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return invalid(format!("epsilon must lie in (0, 1], got {epsilon}"));
    }
    Ok(())
}

/// Importance distribution from violation scores. Returns the uniform
/// distribution when every score is zero.
pub fn importance_probabilities(z: &[f64], epsilon: f64) -> Result<SamplingDistribution> {
    let mut dist = SamplingDistribution { probs: Vec::new(), epsilon };
    fill_importance_probabilities(z, epsilon, &mut dist)?;
    Ok(dist)
}

fn fill_importance_probabilities(z: &[f64], epsilon: f64, dist: &mut SamplingDistribution) -> Result<()> {
    check_epsilon(epsilon)?;
    if z.is_empty() {
        return invalid("no blocks to sample from");
    }
    if z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("violation scores must be finite and non-negative");
    }
    let m = z.len();
    dist.epsilon = epsilon;
    dist.probs.clear();
    let zmax = z.iter().copied().fold(0.0, f64::max);
    if zmax == 0.0 {
        dist.probs.resize(m, 1.0 / m as f64);
        return Ok(());
    }
    dist.probs.extend(z.iter().map(|&zi| epsilon + (1.0 - epsilon) * (zi / zmax)));
    // Σ numerators equals m·ε + (1 − ε)·Σz/‖z‖∞.
    let denom: f64 = dist.probs.iter().sum();
    dist.probs.iter_mut().for_each(|p| *p /= denom);
    Ok(())
}

/// Inverse-CDF draw with one uniform variate per call.
pub fn sample_block<R: Rng + ?Sized>(dist: &SamplingDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the last cumulative sum
    dist.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `counter mod m`, then advances the counter.
pub fn cyclic_next(counter: &mut usize, num_blocks: usize) -> usize {
    let i = *counter % num_blocks;
    *counter += 1;
    i
}

/// Chooses the next block and learns from observed violations.
pub trait BlockSelector {
    fn next_block(&mut self, rng: &mut dyn rand::RngCore) -> usize;

    /// Called after block `block`'s approximate violation was refreshed.
    fn observe_update(&mut self, _block: usize, _violation: f64) {}

    /// Whether the selector needs exact violations at the starting point.
    fn wants_initial_violations(&self) -> bool {
        false
    }

    /// Seeds the selector with the starting violations.
    fn initialize(&mut self, _z: &ViolationVector) {}
}

#[derive(Debug, Clone)]
pub struct CyclicSelector {
    counter: usize,
    num_blocks: usize,
}

impl CyclicSelector {
    pub fn new(num_blocks: usize) -> Self {
        Self { counter: 0, num_blocks }
    }
}

impl BlockSelector for CyclicSelector {
    fn next_block(&mut self, _rng: &mut dyn rand::RngCore) -> usize {
        cyclic_next(&mut self.counter, self.num_blocks)
    }
}

#[derive(Debug, Clone)]
pub struct UniformSelector {
    dist: SamplingDistribution,
}

impl UniformSelector {
    pub fn new(num_blocks: usize) -> Self {
        Self { dist: SamplingDistribution::uniform(num_blocks) }
    }
}

impl BlockSelector for UniformSelector {
    fn next_block(&mut self, rng: &mut dyn rand::RngCore) -> usize {
        sample_block(&self.dist, rng)
    }
}

/// Samples from the importance distribution of the tracked `z̃`, refreshed
/// after every observed update.
#[derive(Debug, Clone)]
pub struct ImportanceSelector {
    epsilon: f64,
    scores: Vec<f64>,
    dist: SamplingDistribution,
}

impl ImportanceSelector {
    pub fn new(num_blocks: usize, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            scores: vec![0.0; num_blocks],
            dist: SamplingDistribution::uniform(num_blocks),
        })
    }

    pub fn distribution(&self) -> &SamplingDistribution {
        &self.dist
    }

    fn refresh(&mut self) {
        fill_importance_probabilities(&self.scores, self.epsilon, &mut self.dist)
            .expect("scores are kept finite and non-negative");
    }
}

impl BlockSelector for ImportanceSelector {
    fn next_block(&mut self, rng: &mut dyn rand::RngCore) -> usize {
        sample_block(&self.dist, rng)
    }

    fn observe_update(&mut self, block: usize, violation: f64) {
        self.scores[block] = if violation.is_finite() { violation } else { 0.0 };
        self.refresh();
    }

    fn wants_initial_violations(&self) -> bool {
        true
    }

    fn initialize(&mut self, z: &ViolationVector) {
        for (s, &v) in self.scores.iter_mut().zip(z.values()) {
            *s = if v.is_finite() { v } else { 0.0 };
        }
        self.refresh();
    }
}

/// Block-selection strategy by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Uniform,
    Cyclic,
    Importance { epsilon: f64 },
}

/// Default mixing weight of the importance distribution.
pub const DEFAULT_EPSILON: f64 = 0.2;

impl SamplerKind {
    pub fn build(self, num_blocks: usize) -> Result<Box<dyn BlockSelector + Send>> {
        Ok(match self {
            SamplerKind::Uniform => Box::new(UniformSelector::new(num_blocks)),
            SamplerKind::Cyclic => Box::new(CyclicSelector::new(num_blocks)),
            SamplerKind::Importance { epsilon } => Box::new(ImportanceSelector::new(num_blocks, epsilon)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{Loss, PredictionCache};
    use crate::penalty::{Penalty, L1};
    use crate::sparse::CscMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_one_is_uniform() {
        let d = importance_probabilities(&[0.0, 3.0, 1.0, 7.5], 1.0).unwrap();
        assert!(d.probs().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn two_block_example() {
        let d = importance_probabilities(&[1.0, 0.0], 0.5).unwrap();
        assert!((d.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_scores_are_uniform() {
        for eps in [0.05, 0.2, 0.9] {
            let d = importance_probabilities(&[2.5; 5], eps).unwrap();
            assert!(d.probs().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        }
        let d = importance_probabilities(&[0.0; 3], 0.1).unwrap();
        assert!(d.probs().iter().all(|&p| p == 1.0 / 3.0));
    }

    #[test]
    fn rejects_bad_epsilon_and_scores() {
        assert!(importance_probabilities(&[1.0], 0.0).is_err());
        assert!(importance_probabilities(&[1.0], 1.5).is_err());
        assert!(importance_probabilities(&[-1.0], 0.5).is_err());
        assert!(importance_probabilities(&[f64::NAN], 0.5).is_err());
    }

    fn frequencies(dist: &SamplingDistribution, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; dist.probs().len()];
        for _ in 0..draws {
            counts[sample_block(dist, &mut rng)] += 1;
        }
        counts.into_iter().map(|c| c as f64).collect()
    }

    #[test]
    fn uniform_draw_frequencies() {
        let n = 100_000.0;
        let counts = frequencies(&SamplingDistribution::uniform(4), n as usize, 11);
        let sd = (n * 0.25 * 0.75f64).sqrt();
        for c in counts {
            assert!((c - 0.25 * n).abs() < 3.0 * sd, "{c}");
        }
    }

    #[test]
    fn weighted_draw_frequencies() {
        let n = 300_000.0;
        let dist = importance_probabilities(&[1.0, 0.0], 0.5).unwrap();
        let counts = frequencies(&dist, n as usize, 12);
        for (c, p) in counts.iter().zip(dist.probs()) {
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((c - p * n).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let dist = importance_probabilities(&[0.3, 2.0, 0.0, 1.0], 0.2).unwrap();
        assert_eq!(frequencies(&dist, 1000, 5), frequencies(&dist, 1000, 5));
    }

    #[test]
    fn cyclic_order() {
        let mut c = 0;
        let seq: Vec<_> = (0..7).map(|_| cyclic_next(&mut c, 3)).collect();
        assert_eq!(seq, vec![0, 1, 2, 0, 1, 2, 0]);
        let mut c = 0;
        assert!((0..5).all(|_| cyclic_next(&mut c, 1) == 0));
        let mut sel = CyclicSelector::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut visits = [0; 4];
        for _ in 0..8 {
            visits[sel.next_block(&mut rng)] += 1;
        }
        assert_eq!(visits, [2; 4]);
    }

    #[test]
    fn importance_with_unit_epsilon_matches_uniform_sequence() {
        let mut a = ImportanceSelector::new(7, 1.0).unwrap();
        let mut b = UniformSelector::new(7);
        let mut ra = ChaCha8Rng::seed_from_u64(99);
        let mut rb = ChaCha8Rng::seed_from_u64(99);
        a.initialize(&ViolationVector::from_values(vec![0.1, 5.0, 0.0, 2.0, 2.0, 0.3, 9.0]).unwrap());
        for k in 0..5000 {
            let i = a.next_block(&mut ra);
            assert_eq!(i, b.next_block(&mut rb));
            a.observe_update(i, (k % 13) as f64);
        }
    }

    fn toy_problem(lambda: f64) -> (DesignProblem, BlockPartition) {
        let a = CscMatrix::from_dense_row_major(
            4,
            4,
            &[1.0, -0.5, 0.2, 0.0, 0.3, 1.0, -1.0, 2.0, -0.7, 0.1, 0.4, 1.0, 0.0, 0.9, -0.3, -1.2],
        )
        .unwrap();
        let y = vec![1.0, -1.0, 1.0, -1.0];
        let p = DesignProblem::new(a, y, Loss::Logistic, Penalty::log_sum(1.0).unwrap(), lambda).unwrap();
        (p, BlockPartition::uniform(4, 2).unwrap())
    }

    #[test]
    fn init_violations_large_lambda_is_zero() {
        let (problem, part) = toy_problem(100.0);
        let mut c = FlopCounter::new();
        let z = init_violations(&problem, &part, &[0.0; 4], &[0.0; 4], &mut c).unwrap();
        assert!(z.all_zero());
        assert!(z.exact_at_init());
        assert_eq!(c.gradient_flops, 2 * 4 * 4 + 4);
    }

    #[test]
    fn init_violations_zero_lambda_is_gradient_norm() {
        let (problem, part) = toy_problem(0.0);
        let z = init_violations(&problem, &part, &[0.0; 4], &[0.0; 4], &mut FlopCounter::new()).unwrap();
        for b in 0..2 {
            let expect = part
                .range(b)
                .unwrap()
                .map(|j| (0.5 * (0..4).map(|i| problem.features.get(i, j) * problem.labels[i]).sum::<f64>()).abs())
                .fold(0.0, f64::max);
            assert!((z.get(b) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn init_violations_matches_definition_at_any_point() {
        let (problem, part) = toy_problem(0.3);
        let x = [0.4, 0.0, -1.1, 0.2];
        let cache = PredictionCache::new(&problem.features, &x).unwrap();
        let z = init_violations(&problem, &part, &x, cache.margins(), &mut FlopCounter::new()).unwrap();
        let g = full_gradient(&problem.loss, &problem.features, cache.margins(), &problem.labels, &mut FlopCounter::new()).unwrap();
        for b in 0..2 {
            let r = part.range(b).unwrap();
            let expect = block_violation(&problem.penalty, &x[r.clone()], &g[r], 0.3).unwrap();
            assert_eq!(z.get(b), expect);
        }
    }

    #[test]
    fn update_violation_is_local() {
        let mut z = ViolationVector::from_values(vec![0.5, 0.25, 1.0]).unwrap();
        let before = z.clone();
        // stationary block for ℓ1: x = 0, |g| ≤ λ
        let v = update_violation(&mut z, 1, &[0.0, 0.0], &[0.1, -0.2], &L1, 1.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(z.get(0).to_bits(), before.get(0).to_bits());
        assert_eq!(z.get(2).to_bits(), before.get(2).to_bits());
        assert!(update_violation(&mut z, 3, &[0.0], &[0.0], &L1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn distribution_invariants(z in prop::collection::vec(0.0f64..100.0, 1..50), eps in 0.001f64..=1.0) {
            let d = importance_probabilities(&z, eps).unwrap();
            let m = z.len() as f64;
            let sum: f64 = d.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for &p in d.probs() {
                prop_assert!(p >= eps / m * (1.0 - 1e-14));
            }
        }

        #[test]
        fn distribution_is_scale_invariant(z in prop::collection::vec(0.0f64..10.0, 1..30), eps in 0.01f64..1.0, alpha in 0.001f64..1000.0) {
            let scaled: Vec<f64> = z.iter().map(|v| v * alpha).collect();
            let d1 = importance_probabilities(&z, eps).unwrap();
            let d2 = importance_probabilities(&scaled, eps).unwrap();
            for (a, b) in d1.probs().iter().zip(d2.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn larger_violation_gets_larger_probability(z in prop::collection::vec(0.0f64..10.0, 2..30), eps in 0.0f64..0.999) {
            let eps = eps.max(1e-3);
            let d = importance_probabilities(&z, eps).unwrap();
            for i in 0..z.len() {
                for j in 0..z.len() {
                    if z[i] > z[j] {
                        prop_assert!(d.probs()[i] > d.probs()[j]);
                    }
                }
            }
        }
    }
}
