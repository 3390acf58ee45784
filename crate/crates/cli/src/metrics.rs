//! Trace statistics shared by the runner and the acceptance checks.

use rbcd::TraceRecord;

/// Cumulative flops at the first record whose exact violation is at most
/// `1/factor` of the initial one. `None` if the trace never gets there or
/// the initial record carries no violation.
pub fn flops_to_reduction(trace: &[TraceRecord], factor: f64) -> Option<u64> {
    let v0 = trace.first()?.violation?;
    let target = v0 / factor;
    trace
        .iter()
        .find(|r| r.violation.is_some_and(|v| v <= target))
        .map(|r| r.cumulative_flops)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Median with unreached runs (`None`) ranked above every finite value.
pub fn median_flops(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<u64> = values.iter().map(|v| v.unwrap_or(u64::MAX)).collect();
    sorted.sort_unstable();
    let n = sorted.len();
    let (lo, hi) = (sorted[(n - 1) / 2], sorted[n / 2]);
    if hi == u64::MAX {
        return None;
    }
    Some((lo as f64 + hi as f64) / 2.0)
}
