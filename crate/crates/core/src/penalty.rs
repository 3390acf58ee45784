//! Separable difference-of-convex penalties.
//!
//! Each penalty acts coordinate-wise as `h(t) = h₁(t) − h₂(t)` with `h₁`, `h₂`
//! convex. The split turns Clarke stationarity of a coordinate,
//! `0 ∈ ∇_j f + λ ∂h₁(t) − λ ∇h₂(t)`, into a distance between a point and an
//! interval, which is what [`coordinate_violation`] returns.
//!
//! The regularization weight `λ` is not part of the penalty object; it is
//! passed per call.

use crate::blocks::{prox_cost, FlopCategory, FlopCounter};
use crate::error::{invalid, Result};

/// Coordinate-wise DC penalty.
pub trait DcPenalty {
    /// `h(t)`.
    fn value(&self, t: f64) -> f64;

    /// A global minimizer of `½(s − v)² + c·h(s)` for `c > 0`.
    fn prox_scalar(&self, v: f64, c: f64) -> f64;

    /// `h₁(t)`.
    fn convex_part(&self, t: f64) -> f64;

    /// `h₂(t) = h₁(t) − h(t)`.
    fn concave_part(&self, t: f64) -> f64;

    /// `∂h₁(t)` as a closed interval `[lo, hi]`.
    fn convex_subdifferential(&self, t: f64) -> (f64, f64);

    /// `∇h₂(t)`; both implemented penalties have a differentiable `h₂`.
    fn concave_gradient(&self, t: f64) -> f64;
}

/// `|t|`, with `h₁ = |t|` and `h₂ = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct L1;

/// `ρ·log(1 + |t|/ρ)`, split as `h₁ = |t|` and `h₂ = |t| − ρ·log(1 + |t|/ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSum {
    rho: f64,
}

impl LogSum {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return invalid(format!("log-sum parameter must be positive, got {rho}"));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

fn sign_interval(t: f64) -> (f64, f64) {
    if t > 0.0 {
        (1.0, 1.0)
    } else if t < 0.0 {
        (-1.0, -1.0)
    } else {
        (-1.0, 1.0)
    }
}

/// `sign(v)·max(|v| − c, 0)`.
#[inline]
pub fn soft_threshold(v: f64, c: f64) -> f64 {
    if v > c {
        v - c
    } else if v < -c {
        v + c
    } else {
        0.0
    }
}

/// Objective gap below which the log-sum prox prefers zero over a non-zero
/// stationary point.
pub const PROX_TIE_TOLERANCE: f64 = 1e-12;

impl DcPenalty for L1 {
    fn value(&self, t: f64) -> f64 {
        t.abs()
    }

    fn prox_scalar(&self, v: f64, c: f64) -> f64 {
        soft_threshold(v, c)
    }

    fn convex_part(&self, t: f64) -> f64 {
        t.abs()
    }

    fn concave_part(&self, _t: f64) -> f64 {
        0.0
    }

    fn convex_subdifferential(&self, t: f64) -> (f64, f64) {
        sign_interval(t)
    }

    fn concave_gradient(&self, _t: f64) -> f64 {
        0.0
    }
}

impl DcPenalty for LogSum {
    fn value(&self, t: f64) -> f64 {
        self.rho * (t.abs() / self.rho).ln_1p()
    }

    fn prox_scalar(&self, v: f64, c: f64) -> f64 {
        let a = v.abs();
        if a == 0.0 {
            return 0.0;
        }
        let rho = self.rho;
        let objective = |t: f64| 0.5 * (t - a) * (t - a) + c * rho * (t / rho).ln_1p();

        // Stationary points on (0, a] solve t² + (ρ − a)t + ρ(c − a) = 0.
        let b = rho - a;
        let q0 = rho * (c - a);
        let disc = (a + rho) * (a + rho) - 4.0 * c * rho;
        let mut best: Option<(f64, f64)> = None;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
            let mut roots = [f64::NAN; 2];
            roots[0] = q;
            if q != 0.0 {
                roots[1] = q0 / q;
            }
            for t in roots {
                if t.is_finite() && t > 0.0 && t <= a {
                    let f = objective(t);
                    if best.is_none_or(|(_, fb)| f < fb) {
                        best = Some((t, f));
                    }
                }
            }
        }
        let at_zero = 0.5 * a * a;
        match best {
            Some((t, f)) if f < at_zero - PROX_TIE_TOLERANCE => t.copysign(v),
            _ => 0.0,
        }
    }

    fn convex_part(&self, t: f64) -> f64 {
        t.abs()
    }

    fn concave_part(&self, t: f64) -> f64 {
        t.abs() - self.value(t)
    }

    fn convex_subdifferential(&self, t: f64) -> (f64, f64) {
        sign_interval(t)
    }

    fn concave_gradient(&self, t: f64) -> f64 {
        // sign(t)·(1 − ρ/(ρ + |t|)) without the cancellation
        t / (self.rho + t.abs())
    }
}

/// Runtime choice of penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    L1(L1),
    LogSum(LogSum),
}

impl Penalty {
    pub fn l1() -> Self {
        Penalty::L1(L1)
    }

    pub fn log_sum(rho: f64) -> Result<Self> {
        LogSum::new(rho).map(Penalty::LogSum)
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Penalty::L1($p) => $e,
            Penalty::LogSum($p) => $e,
        }
    };
}

impl DcPenalty for Penalty {
    fn value(&self, t: f64) -> f64 {
        delegate!(self, p => p.value(t))
    }
    fn prox_scalar(&self, v: f64, c: f64) -> f64 {
        delegate!(self, p => p.prox_scalar(v, c))
    }
    fn convex_part(&self, t: f64) -> f64 {
        delegate!(self, p => p.convex_part(t))
    }
    fn concave_part(&self, t: f64) -> f64 {
        delegate!(self, p => p.concave_part(t))
    }
    fn convex_subdifferential(&self, t: f64) -> (f64, f64) {
        delegate!(self, p => p.convex_subdifferential(t))
    }
    fn concave_gradient(&self, t: f64) -> f64 {
        delegate!(self, p => p.concave_gradient(t))
    }
}

/// `Σ_t h(t)` over a block, without the `λ` factor.
pub fn unscaled_value<P: DcPenalty + ?Sized>(p: &P, x: &[f64]) -> f64 {
    x.iter().map(|&t| p.value(t)).sum()
}

/// `λ·Σ_t h(t)` over a block.
pub fn penalty_value<P: DcPenalty + ?Sized>(p: &P, x: &[f64], lambda: f64) -> f64 {
    lambda * unscaled_value(p, x)
}

/// Coordinate-wise prox of `c·h` written into `out`; charges `|v|` prox flops.
pub fn prox_into<P: DcPenalty + ?Sized>(
    p: &P,
    v: &[f64],
    c: f64,
    out: &mut [f64],
    counter: &mut FlopCounter,
) -> Result<()> {
    if !(c > 0.0) {
        return invalid(format!("prox scale must be positive, got {c}"));
    }
    if out.len() != v.len() {
        return invalid("prox output length mismatch");
    }
    for (o, &vi) in out.iter_mut().zip(v) {
        *o = p.prox_scalar(vi, c);
    }
    counter.charge(FlopCategory::Prox, prox_cost(v.len()));
    Ok(())
}

pub fn prox<P: DcPenalty + ?Sized>(p: &P, v: &[f64], c: f64, counter: &mut FlopCounter) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    prox_into(p, v, c, &mut out, counter)?;
    Ok(out)
}

/// Distance from `−∇_j f + λ∇h₂(t)` to the interval `λ·∂h₁(t)`.
pub fn coordinate_violation<P: DcPenalty + ?Sized>(p: &P, t: f64, grad: f64, lambda: f64) -> f64 {
    let (lo, hi) = p.convex_subdifferential(t);
    let target = -grad + lambda * p.concave_gradient(t);
    let (lo, hi) = (lambda * lo, lambda * hi);
    if target < lo {
        lo - target
    } else if target > hi {
        target - hi
    } else {
        0.0
    }
}

/// Infinity norm of the coordinate violations over one block.
pub fn block_violation<P: DcPenalty + ?Sized>(p: &P, x: &[f64], grad: &[f64], lambda: f64) -> Result<f64> {
    if x.len() != grad.len() {
        return invalid("block values and gradient differ in length");
    }
    Ok(x.iter()
        .zip(grad)
        .map(|(&t, &g)| coordinate_violation(p, t, g, lambda))
        .fold(0.0, f64::max))
}
