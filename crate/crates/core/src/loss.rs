//! Smooth data-fit terms `f(x) = Σ_j L(a_jᵀx; y_j)` for linear models.
//!
//! Gradients are `∇_B f(x) = A_Bᵀ L'(Ax)` where `L'` is applied pointwise to
//! the cached predictions `Ax`. The cache is kept in sync with
//! `A_B (x_B^new − x_B^old)` updates so that a block step never touches
//! columns outside the block.

use std::ops::Range;

use crate::blocks::{gradient_cost, BlockPartition, FlopCategory, FlopCounter};
use crate::error::{invalid, Error, Result};
use crate::sparse::CscMatrix;

/// Pointwise loss `L(margin; label)` and its derivative in the margin.
pub trait SmoothLoss {
    fn value(&self, margin: f64, label: f64) -> f64;
    fn derivative(&self, margin: f64, label: f64) -> f64;
}

/// `log(1 + exp(−y·t))`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Logistic;

/// `½ (t − y)²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Squared;

/// `log(1 + e^t)` without overflow for large `|t|`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^{−t})` without overflow.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl SmoothLoss for Logistic {
    #[inline]
    fn value(&self, margin: f64, label: f64) -> f64 {
        softplus(-label * margin)
    }

    #[inline]
    fn derivative(&self, margin: f64, label: f64) -> f64 {
        -label * sigmoid(-label * margin)
    }
}

impl SmoothLoss for Squared {
    #[inline]
    fn value(&self, margin: f64, label: f64) -> f64 {
        0.5 * (margin - label) * (margin - label)
    }

    #[inline]
    fn derivative(&self, margin: f64, label: f64) -> f64 {
        margin - label
    }
}

/// Runtime choice of loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Loss {
    #[default]
    Logistic,
    Squared,
}

impl SmoothLoss for Loss {
    #[inline]
    fn value(&self, margin: f64, label: f64) -> f64 {
        match self {
            Loss::Logistic => Logistic.value(margin, label),
            Loss::Squared => Squared.value(margin, label),
        }
    }

    #[inline]
    fn derivative(&self, margin: f64, label: f64) -> f64 {
        match self {
            Loss::Logistic => Logistic.derivative(margin, label),
            Loss::Squared => Squared.derivative(margin, label),
        }
    }
}

/// `f = Σ_j L(margin_j; y_j)`. Charges `n` cost flops (the pointwise part of
/// an objective evaluation).
pub fn loss_value<L: SmoothLoss + ?Sized>(
    loss: &L,
    margins: &[f64],
    labels: &[f64],
    counter: &mut FlopCounter,
) -> Result<f64> {
    if margins.len() != labels.len() {
        return invalid("margins and labels differ in length");
    }
    counter.charge(FlopCategory::Cost, margins.len() as u64);
    let mut total = 0.0;
    for (&m, &y) in margins.iter().zip(labels) {
        if !m.is_finite() {
            return Err(Error::NumericalOverflow(format!("non-finite margin {m}")));
        }
        total += loss.value(m, y);
    }
    Ok(total)
}

fn pointwise_derivatives<L: SmoothLoss + ?Sized>(loss: &L, margins: &[f64], labels: &[f64]) -> Vec<f64> {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| loss.derivative(m, y))
        .collect()
}

/// `A_{:, cols}ᵀ L'(margins)` written into `out`; charges `2·n·|cols| + n`.
pub fn gradient_cols_into<L: SmoothLoss + ?Sized>(
    loss: &L,
    a: &CscMatrix,
    margins: &[f64],
    labels: &[f64],
    cols: Range<usize>,
    out: &mut [f64],
    counter: &mut FlopCounter,
) -> Result<()> {
    if margins.len() != a.nrows() || labels.len() != a.nrows() {
        return invalid("margins/labels do not match the design matrix rows");
    }
    if cols.end > a.ncols() || out.len() != cols.len() {
        return invalid("gradient column range does not match the design matrix");
    }
    let w = pointwise_derivatives(loss, margins, labels);
    a.transpose_mul_cols(cols.clone(), &w, out);
    counter.charge(FlopCategory::Gradient, gradient_cost(a.nrows(), cols.len()));
    Ok(())
}

/// Partial gradient `∇_i f(x) = A_iᵀ L'(Ax)` of block `block`.
pub fn partial_gradient<L: SmoothLoss + ?Sized>(
    loss: &L,
    a: &CscMatrix,
    partition: &BlockPartition,
    margins: &[f64],
    labels: &[f64],
    block: usize,
    counter: &mut FlopCounter,
) -> Result<Vec<f64>> {
    let cols = partition.range(block)?;
    let mut out = vec![0.0; cols.len()];
    gradient_cols_into(loss, a, margins, labels, cols, &mut out, counter)?;
    Ok(out)
}

/// Full gradient `Aᵀ L'(Ax)`; charges `2·n·d + n`.
pub fn full_gradient<L: SmoothLoss + ?Sized>(
    loss: &L,
    a: &CscMatrix,
    margins: &[f64],
    labels: &[f64],
    counter: &mut FlopCounter,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; a.ncols()];
    gradient_cols_into(loss, a, margins, labels, 0..a.ncols(), &mut out, counter)?;
    Ok(out)
}

/// Updates between full recomputations of `Ax`.
pub const DEFAULT_REFRESH_INTERVAL: usize = 10_000;

/// Cached predictions `Ax` for the current iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCache {
    margins: Vec<f64>,
    updates_since_refresh: usize,
    refresh_interval: usize,
}

impl PredictionCache {
    /// Computes `Ax` from scratch. Not charged; callers account for it.
    pub fn new(a: &CscMatrix, x: &[f64]) -> Result<Self> {
        if x.len() != a.ncols() {
            return invalid("iterate length does not match the design matrix");
        }
        let mut margins = vec![0.0; a.nrows()];
        a.mul_vec(x, &mut margins);
        Ok(Self {
            margins,
            updates_since_refresh: 0,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
        })
    }

    /// Sets how many accepted updates happen between full recomputations.
    /// Zero disables the refresh.
    pub fn with_refresh_interval(mut self, interval: usize) -> Self {
        self.refresh_interval = interval;
        self
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    /// Writes `margins + A_{:, cols} (new − old)` into `out` without
    /// modifying the cache. Charges `n·|cols|` cost flops.
    pub fn candidate_into(
        &self,
        a: &CscMatrix,
        cols: Range<usize>,
        old: &[f64],
        new: &[f64],
        delta_scratch: &mut Vec<f64>,
        out: &mut Vec<f64>,
        counter: &mut FlopCounter,
    ) -> Result<()> {
        if old.len() != cols.len() || new.len() != cols.len() {
            return invalid("block values do not match the block width");
        }
        delta_scratch.clear();
        delta_scratch.extend(new.iter().zip(old).map(|(n, o)| n - o));
        out.clear();
        out.extend_from_slice(&self.margins);
        a.add_cols_mul(cols.clone(), delta_scratch, out);
        counter.charge(FlopCategory::Cost, (a.nrows() * cols.len()) as u64);
        Ok(())
    }

    /// Installs margins produced by [`candidate_into`](Self::candidate_into)
    /// for the accepted step, then recomputes `Ax` from `x` if the refresh
    /// interval is reached (charging `n·d` cost flops).
    pub fn accept(
        &mut self,
        candidate: &mut Vec<f64>,
        a: &CscMatrix,
        x: &[f64],
        counter: &mut FlopCounter,
    ) {
        std::mem::swap(&mut self.margins, candidate);
        self.updates_since_refresh += 1;
        if self.refresh_interval > 0 && self.updates_since_refresh >= self.refresh_interval {
            a.mul_vec(x, &mut self.margins);
            self.updates_since_refresh = 0;
            counter.charge(FlopCategory::Cost, (a.nrows() * a.ncols()) as u64);
        }
    }

    /// `margins += A_i (new − old)` for block `block`. Charges `n·d_i` cost
    /// flops.
    pub fn update(
        &mut self,
        a: &CscMatrix,
        partition: &BlockPartition,
        block: usize,
        old: &[f64],
        new: &[f64],
        counter: &mut FlopCounter,
    ) -> Result<()> {
        let cols = partition.range(block)?;
        if old.len() != cols.len() || new.len() != cols.len() {
            return invalid("block values do not match the block width");
        }
        let delta: Vec<f64> = new.iter().zip(old).map(|(n, o)| n - o).collect();
        a.add_cols_mul(cols.clone(), &delta, &mut self.margins);
        counter.charge(FlopCategory::Cost, (a.nrows() * cols.len()) as u64);
        Ok(())
    }
}
