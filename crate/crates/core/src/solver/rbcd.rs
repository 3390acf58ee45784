use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    assemble_objective, bb_from_history, check_due, exact_violation_with_margins, finalize_violation,
    sufficient_decrease, within_rounding, Clock, SolveResult, SolverConfig, SolverObserver, StepEstimates, StepEvent,
    Termination,
};
use crate::blocks::{objective_cost, BlockPartition, FlopCategory, FlopCounter, Iterate, TraceRecord};
use crate::error::{invalid, Result};
use crate::loss::{gradient_cols_into, loss_value, PredictionCache};
use crate::penalty::{prox_into, unscaled_value};
use crate::problem::DesignProblem;
use crate::sampling::{init_violations, update_violation, BlockSelector, ViolationVector};

/// Randomized block-coordinate proximal gradient descent.
pub fn rbcd_solve(
    problem: &DesignProblem,
    partition: &BlockPartition,
    selector: &mut dyn BlockSelector,
    config: &SolverConfig,
    x0: &Iterate,
) -> Result<SolveResult> {
    rbcd_solve_observed(problem, partition, selector, config, x0, &mut ())
}

pub fn rbcd_solve_observed(
    problem: &DesignProblem,
    partition: &BlockPartition,
    selector: &mut dyn BlockSelector,
    config: &SolverConfig,
    x0: &Iterate,
    observer: &mut dyn SolverObserver,
) -> Result<SolveResult> {
    config.validate()?;
    let d = problem.dim();
    let n = problem.num_samples();
    if x0.values().len() != d || partition.total_dim() != d {
        return invalid(format!(
            "problem has {d} features, iterate {} and partition {}",
            x0.values().len(),
            partition.total_dim()
        ));
    }
    let a = &problem.features;
    let lambda = problem.lambda;
    let m = partition.num_blocks();
    // With one block the tracked violation is the exact one.
    let single_block = m == 1;

    let clock = Clock::new(config.record_wall_time);
    let mut flops = FlopCounter::new();
    let mut diagnostic = FlopCounter::new();
    let mut x = x0.values().to_vec();

    let mut cache = PredictionCache::new(a, &x)?.with_refresh_interval(config.cache_refresh_interval);
    flops.charge(FlopCategory::Cost, objective_cost(n, d) - n as u64);
    let loss0 = loss_value(&problem.loss, cache.margins(), &problem.labels, &mut flops)?;
    let mut block_pen: Vec<f64> = (0..m)
        .map(|b| Ok(unscaled_value(&problem.penalty, &x[partition.range(b)?])))
        .collect::<Result<_>>()?;
    let mut f_cur = assemble_objective(loss0, lambda, block_pen.iter().copied());

    let mut z = if selector.wants_initial_violations() {
        let z = init_violations(problem, partition, &x, cache.margins(), &mut flops)?;
        selector.initialize(&z);
        z
    } else {
        ViolationVector::unknown(m)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut thetas = vec![config.clamp_theta(config.theta_init); m];
    let mut prev_x = vec![0.0; d];
    let mut prev_g = vec![0.0; d];
    let mut has_prev = vec![false; m];

    let mut trace = Vec::new();
    let v0 = if check_due(config, 0) {
        Some(exact_violation_with_margins(problem, partition, &x, cache.margins(), &mut diagnostic)?.1)
    } else {
        None
    };
    trace.push(TraceRecord {
        iteration: 0,
        cumulative_flops: flops.total(),
        objective: f_cur,
        violation: v0,
        wall_time_s: clock.now(),
    });

    let mut termination = Termination::MaxIterations;
    if z.all_zero() {
        termination = Termination::ConvergedZeroViolations;
    } else if !single_block && v0.is_some_and(|v| v < config.violation_tolerance) {
        termination = Termination::ViolationBelowTolerance;
    }

    let max_width = partition.block_sizes().iter().copied().max().unwrap_or(0);
    let mut grad = Vec::with_capacity(max_width);
    let mut shifted = Vec::with_capacity(max_width);
    let mut candidate = Vec::with_capacity(max_width);
    let mut delta = Vec::with_capacity(max_width);
    let mut cand_margins = Vec::with_capacity(n);
    let mut iterations = 0;

    let mut k = 0;
    while termination == Termination::MaxIterations && k < config.max_iterations {
        k += 1;
        let i = selector.next_block(&mut rng);
        let r = partition.range(i)?;
        let width = r.len();

        grad.clear();
        grad.resize(width, 0.0);
        gradient_cols_into(&problem.loss, a, cache.margins(), &problem.labels, r.clone(), &mut grad, &mut flops)?;
        let zi = update_violation(&mut z, i, &x[r.clone()], &grad, &problem.penalty, lambda)?;
        selector.observe_update(i, zi);

        if has_prev[i] {
            thetas[i] = bb_from_history(thetas[i], &x[r.clone()], &prev_x[r.clone()], &grad, &prev_g[r.clone()], config);
        }
        prev_x[r.clone()].copy_from_slice(&x[r.clone()]);
        prev_g[r.clone()].copy_from_slice(&grad);
        has_prev[i] = true;

        let stop_before_step = if z.all_zero() {
            Some(Termination::ConvergedZeroViolations)
        } else if single_block && zi < config.violation_tolerance {
            Some(Termination::ViolationBelowTolerance)
        } else {
            None
        };
        if let Some(t) = stop_before_step {
            termination = t;
            trace.push(TraceRecord {
                iteration: k,
                cumulative_flops: flops.total(),
                objective: f_cur,
                violation: None,
                wall_time_s: clock.now(),
            });
            break;
        }

        let old = &x[r.clone()];
        let mut accepted = None;
        for j in 0..=config.max_backtracks {
            let scaled = thetas[i] * config.eta.powi(j as i32);
            let step = 1.0 / scaled;
            shifted.clear();
            shifted.extend(old.iter().zip(&grad).map(|(xv, gv)| xv - step * gv));
            candidate.clear();
            candidate.resize(width, 0.0);
            prox_into(&problem.penalty, &shifted, lambda * step, &mut candidate, &mut flops)?;
            cache.candidate_into(a, r.clone(), old, &candidate, &mut delta, &mut cand_margins, &mut flops)?;
            let f_new = match loss_value(&problem.loss, &cand_margins, &problem.labels, &mut flops) {
                Ok(loss) => {
                    let pen = unscaled_value(&problem.penalty, &candidate);
                    let pens = block_pen.iter().enumerate().map(|(b, &p)| if b == i { pen } else { p });
                    (assemble_objective(loss, lambda, pens), pen)
                }
                Err(_) => (f64::INFINITY, f64::INFINITY),
            };
            let sq: f64 = candidate.iter().zip(old).map(|(c, o)| (c - o) * (c - o)).sum();
            // An unchanged block keeps F exactly, whatever rounding says.
            let f_new = if sq == 0.0 { (f_cur, block_pen[i]) } else { f_new };
            if sufficient_decrease(f_new.0, f_cur, sq, config.sigma, config.decrease_norm) {
                accepted = Some((f_new, sq, j));
                break;
            }
            // Below rounding noise: keep the block as it is.
            if within_rounding(f_new.0, f_cur) {
                candidate.copy_from_slice(old);
                cand_margins.clear();
                cand_margins.extend_from_slice(cache.margins());
                accepted = Some(((f_cur, block_pen[i]), 0.0, j));
                break;
            }
        }

        let Some(((f_new, pen_new), sq, backtracks)) = accepted else {
            termination = Termination::BacktrackFailure;
            trace.push(TraceRecord {
                iteration: k,
                cumulative_flops: flops.total(),
                objective: f_cur,
                violation: None,
                wall_time_s: clock.now(),
            });
            break;
        };

        observer.on_step(&StepEvent {
            iteration: k,
            block: i,
            iterate_before: &x,
            partial_gradient: &grad,
            approx_violation: zi,
            new_block: &candidate,
            objective_before: f_cur,
            objective_after: f_new,
            step_sq_norm: sq,
            backtracks,
            theta: thetas[i],
        });

        x[r].copy_from_slice(&candidate);
        cache.accept(&mut cand_margins, a, &x, &mut flops);
        block_pen[i] = pen_new;
        f_cur = f_new;
        iterations += 1;

        let violation = if check_due(config, k) {
            Some(exact_violation_with_margins(problem, partition, &x, cache.margins(), &mut diagnostic)?.1)
        } else {
            None
        };
        trace.push(TraceRecord {
            iteration: k,
            cumulative_flops: flops.total(),
            objective: f_cur,
            violation,
            wall_time_s: clock.now(),
        });
        if !single_block && violation.is_some_and(|v| v < config.violation_tolerance) {
            termination = Termination::ViolationBelowTolerance;
        }
    }

    finalize_violation(config, problem, partition, &x, cache.margins(), &mut trace, &mut diagnostic)?;

    Ok(SolveResult {
        final_iterate: Iterate::new(x, partition.clone())?,
        trace,
        termination,
        flops,
        diagnostic_flops: diagnostic,
        iterations,
        steps: StepEstimates { thetas },
        approx_violations: z,
    })
}
