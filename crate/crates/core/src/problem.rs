use crate::error::{invalid, Result};
use crate::loss::{full_gradient, loss_value, Loss, PredictionCache};
use crate::penalty::{unscaled_value, Penalty};
use crate::sparse::CscMatrix;
use crate::blocks::FlopCounter;

/// `min_x F(x) = Σ_j L(a_jᵀx; y_j) + λ·Σ_t h(x_t)`.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub features: CscMatrix,
    pub labels: Vec<f64>,
    pub loss: Loss,
    pub penalty: Penalty,
    pub lambda: f64,
}

impl DesignProblem {
    pub fn new(features: CscMatrix, labels: Vec<f64>, loss: Loss, penalty: Penalty, lambda: f64) -> Result<Self> {
        if labels.len() != features.nrows() {
            return invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                features.nrows()
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("regularization weight must be non-negative, got {lambda}"));
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return invalid("labels must be finite");
        }
        Ok(Self { features, labels, loss, penalty, lambda })
    }

    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `F(x)` computed from scratch; no flops charged.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        let cache = PredictionCache::new(&self.features, x)?;
        let f = loss_value(&self.loss, cache.margins(), &self.labels, &mut FlopCounter::new())?;
        Ok(f + self.lambda * unscaled_value(&self.penalty, x))
    }

    /// `∇f(x)` computed from scratch; no flops charged.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = PredictionCache::new(&self.features, x)?;
        full_gradient(&self.loss, &self.features, cache.margins(), &self.labels, &mut FlopCounter::new())
    }
}
