use super::{
    assemble_objective, bb_from_history, check_due, exact_violation_with_margins, finalize_violation,
    sufficient_decrease, within_rounding, Clock, SolveResult, SolverConfig, SolverObserver, StepEstimates, StepEvent,
    Termination,
};
use crate::blocks::{objective_cost, BlockPartition, FlopCategory, FlopCounter, Iterate, TraceRecord};
use crate::error::{invalid, Result};
use crate::loss::{full_gradient, loss_value, PredictionCache};
use crate::penalty::{block_violation, prox_into, unscaled_value};
use crate::problem::DesignProblem;
use crate::sampling::ViolationVector;

/// Full-gradient proximal descent with a scalar Barzilai–Borwein step and
/// monotone backtracking. Stops when the exact violation at the current
/// iterate drops below `violation_tolerance` or after `max_iterations`.
pub fn gist_solve(problem: &DesignProblem, config: &SolverConfig, x0: &Iterate) -> Result<SolveResult> {
    gist_solve_observed(problem, config, x0, &mut ())
}

pub fn gist_solve_observed(
    problem: &DesignProblem,
    config: &SolverConfig,
    x0: &Iterate,
    observer: &mut dyn SolverObserver,
) -> Result<SolveResult> {
    config.validate()?;
    let d = problem.dim();
    let n = problem.num_samples();
    if x0.values().len() != d {
        return invalid(format!("problem has {d} features, iterate {}", x0.values().len()));
    }
    let whole = BlockPartition::single(d)?;
    let a = &problem.features;
    let lambda = problem.lambda;

    let clock = Clock::new(config.record_wall_time);
    let mut flops = FlopCounter::new();
    let mut diagnostic = FlopCounter::new();
    let mut x = x0.values().to_vec();

    let mut cache = PredictionCache::new(a, &x)?.with_refresh_interval(config.cache_refresh_interval);
    flops.charge(FlopCategory::Cost, objective_cost(n, d) - n as u64);
    let pen0 = unscaled_value(&problem.penalty, &x);
    let mut f_cur = assemble_objective(
        loss_value(&problem.loss, cache.margins(), &problem.labels, &mut flops)?,
        lambda,
        std::iter::once(pen0),
    );

    let mut theta = config.clamp_theta(config.theta_init);
    let mut history: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut last_violation = f64::INFINITY;

    let mut trace = vec![TraceRecord {
        iteration: 0,
        cumulative_flops: flops.total(),
        objective: f_cur,
        violation: if check_due(config, 0) {
            Some(exact_violation_with_margins(problem, &whole, &x, cache.margins(), &mut diagnostic)?.1)
        } else {
            None
        },
        wall_time_s: clock.now(),
    }];

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut candidate = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let mut delta = Vec::with_capacity(d);
    let mut cand_margins = Vec::with_capacity(n);

    for k in 1..=config.max_iterations {
        let grad = full_gradient(&problem.loss, a, cache.margins(), &problem.labels, &mut flops)?;
        last_violation = block_violation(&problem.penalty, &x, &grad, lambda)?;

        if let Some((px, pg)) = &history {
            theta = bb_from_history(theta, &x, px, &grad, pg, config);
        }

        if last_violation == 0.0 || last_violation < config.violation_tolerance {
            termination = if last_violation == 0.0 {
                Termination::ConvergedZeroViolations
            } else {
                Termination::ViolationBelowTolerance
            };
            trace.push(TraceRecord {
                iteration: k,
                cumulative_flops: flops.total(),
                objective: f_cur,
                violation: None,
                wall_time_s: clock.now(),
            });
            break;
        }

        let mut accepted = None;
        for j in 0..=config.max_backtracks {
            let step = 1.0 / (theta * config.eta.powi(j as i32));
            for ((s, &xv), &gv) in shifted.iter_mut().zip(&x).zip(&grad) {
                *s = xv - step * gv;
            }
            prox_into(&problem.penalty, &shifted, lambda * step, &mut candidate, &mut flops)?;
            cache.candidate_into(a, 0..d, &x, &candidate, &mut delta, &mut cand_margins, &mut flops)?;
            let f_new = match loss_value(&problem.loss, &cand_margins, &problem.labels, &mut flops) {
                Ok(loss) => assemble_objective(loss, lambda, std::iter::once(unscaled_value(&problem.penalty, &candidate))),
                Err(_) => f64::INFINITY,
            };
            let sq: f64 = candidate.iter().zip(&x).map(|(c, o)| (c - o) * (c - o)).sum();
            let f_new = if sq == 0.0 { f_cur } else { f_new };
            if sufficient_decrease(f_new, f_cur, sq, config.sigma, config.decrease_norm) {
                accepted = Some((f_new, sq, j));
                break;
            }
            // Below rounding noise: keep the iterate as it is.
            if within_rounding(f_new, f_cur) {
                candidate.copy_from_slice(&x);
                cand_margins.clear();
                cand_margins.extend_from_slice(cache.margins());
                accepted = Some((f_cur, 0.0, j));
                break;
            }
        }

        let Some((f_new, sq, backtracks)) = accepted else {
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
            block: 0,
            iterate_before: &x,
            partial_gradient: &grad,
            approx_violation: last_violation,
            new_block: &candidate,
            objective_before: f_cur,
            objective_after: f_new,
            step_sq_norm: sq,
            backtracks,
            theta,
        });

        history = Some((x.clone(), grad));
        x.copy_from_slice(&candidate);
        cache.accept(&mut cand_margins, a, &x, &mut flops);
        f_cur = f_new;
        iterations += 1;

        trace.push(TraceRecord {
            iteration: k,
            cumulative_flops: flops.total(),
            objective: f_cur,
            violation: if check_due(config, k) {
                Some(exact_violation_with_margins(problem, &whole, &x, cache.margins(), &mut diagnostic)?.1)
            } else {
                None
            },
            wall_time_s: clock.now(),
        });
    }
    finalize_violation(config, problem, &whole, &x, cache.margins(), &mut trace, &mut diagnostic)?;

    Ok(SolveResult {
        final_iterate: Iterate::new(x, x0.partition().clone())?,
        trace,
        termination,
        flops,
        diagnostic_flops: diagnostic,
        iterations,
        steps: StepEstimates { thetas: vec![theta] },
        approx_violations: ViolationVector::from_values(vec![last_violation])?,
    })
}
