//! Acceptance gate. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbcd::blocks::{gradient_cost, objective_cost, prox_cost};
use rbcd::loss::{full_gradient, partial_gradient};
use rbcd::penalty::soft_threshold;
use rbcd::sampling::{importance_probabilities, CyclicSelector};
use rbcd::solver::{gist_solve_observed, rbcd_solve_observed, StepEvent};
use rbcd::{
    compute_exact_violation, gist_solve, rbcd_solve, BlockPartition, CscMatrix, DcPenalty, DesignProblem, FlopCounter,
    Iterate, LogSum, Loss, Penalty, PredictionCache, SamplerKind, SolveResult, SolverConfig, L1,
};
use rbcd_cli::config::{ExperimentConfig, RawConfig};
use rbcd_cli::experiment::{replicate_data, replicate_seeds, run_experiment, sweep_blocks, ExperimentOutput};
use rbcd_cli::metrics::{flops_to_reduction, median_flops};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn toy_config(out: &Path) -> ExperimentConfig {
    let flags = RawConfig { out_dir: Some(out.to_path_buf()), ..RawConfig::default() };
    ExperimentConfig::load(&manifest(), &flags).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, penalty: Penalty, lambda: f64) -> DesignProblem {
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let labels = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let a = CscMatrix::from_dense_row_major(n, d, &data).unwrap();
    DesignProblem::new(a, labels, Loss::Logistic, penalty, lambda).unwrap()
}

/// Smooth part only: `Σ log(1 + exp(−y aᵀx))` straight from the definition.
fn logistic_sum(a: &CscMatrix, y: &[f64], x: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|i| {
            let m: f64 = (0..a.ncols()).map(|j| a.get(i, j) * x[j]).sum();
            (-y[i] * m).exp().ln_1p()
        })
        .sum()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let d = rng.random_range(1..=8);
        let p = random_problem(&mut rng, n, d, Penalty::l1(), 0.0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = PredictionCache::new(&p.features, &x).unwrap();
        let mut counter = FlopCounter::new();
        let full = full_gradient(&p.loss, &p.features, cache.margins(), &p.labels, &mut counter).unwrap();
        let m = rng.random_range(1..=d);
        let partition = BlockPartition::uniform(d, m).unwrap();
        let mut partial = Vec::new();
        for b in 0..m {
            partial.extend(partial_gradient(&p.loss, &p.features, &partition, cache.margins(), &p.labels, b, &mut counter).unwrap());
        }
        for j in 0..d {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let fd = (logistic_sum(&p.features, &p.labels, &xp) - logistic_sum(&p.features, &p.labels, &xm)) / (2.0 * h);
            for g in [full[j], partial[j]] {
                worst = worst.max((g - fd).abs() / fd.abs().max(1e-6));
            }
        }
    }
    check(worst < 1e-5, format!("200 instances, max relative error {worst:.2e} (< 1e-5)"))
}

fn prox_objective(p: &dyn DcPenalty, v: f64, c: f64, t: f64) -> f64 {
    0.5 * (t - v) * (t - v) + c * p.value(t)
}

/// Global minimizer of `½(t − v)² + c·h(t)` by grid search, golden-section
/// refinement of every discrete local minimum, and the candidate 0.
fn brute_force_prox(p: &dyn DcPenalty, v: f64, c: f64) -> f64 {
    let phi = |t: f64| prox_objective(p, v, c, t);
    let a = v.abs().max(1e-12);
    let grid = 4000;
    let step = 2.0 * a / grid as f64;
    let values: Vec<f64> = (0..=grid).map(|k| phi(-a + k as f64 * step)).collect();
    let mut candidates = vec![0.0, -a, a];
    for k in 0..=grid {
        let left = if k == 0 { f64::INFINITY } else { values[k - 1] };
        let right = if k == grid { f64::INFINITY } else { values[k + 1] };
        if values[k] <= left && values[k] <= right {
            let (mut lo, mut hi) = (-a + (k as f64 - 1.0) * step, -a + (k as f64 + 1.0) * step);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..120 {
                let x1 = hi - g * (hi - lo);
                let x2 = lo + g * (hi - lo);
                if phi(x1) <= phi(x2) {
                    hi = x2;
                } else {
                    lo = x1;
                }
            }
            candidates.push(0.5 * (lo + hi));
        }
    }
    candidates.into_iter().min_by(|s, t| phi(*s).partial_cmp(&phi(*t)).unwrap()).unwrap()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut ties = 0;
    for _ in 0..10_000 {
        let v = rng.random_range(-5.0..5.0);
        let c = rng.random_range(1e-3..3.0);
        let rho = rng.random_range(0.01..3.0);
        let ls = LogSum::new(rho).unwrap();
        let pens: [(&dyn DcPenalty, f64); 2] = [(&ls, ls.prox_scalar(v, c)), (&L1, soft_threshold(v, c))];
        for (p_obj, got) in pens {
            let oracle = brute_force_prox(p_obj, v, c);
            let err = (got - oracle).abs();
            if err > 1e-6 {
                // Two global minimizers: only a true tie in the objective is acceptable.
                let gap = prox_objective(p_obj, v, c, got) - prox_objective(p_obj, v, c, oracle);
                if gap.abs() > 1e-12 {
                    worst = worst.max(err);
                } else {
                    ties += 1;
                }
            } else {
                worst = worst.max(err);
            }
        }
    }
    check(worst <= 1e-6, format!("10^4 triples x 2 penalties, max |prox - brute| {worst:.2e} (<= 1e-6), exact ties {ties}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sum_err, mut floor_ok, mut uniform_ok, mut scale_err, mut bias_ok) = (0f64, true, true, 0f64, true);
    for _ in 0..5000 {
        let m = rng.random_range(1..60);
        let z: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..10.0) })
            .collect();
        let eps = rng.random_range(1e-3..1.0);
        let p = importance_probabilities(&z, eps).unwrap();
        let probs = p.probs();
        sum_err = sum_err.max((probs.iter().sum::<f64>() - 1.0).abs());
        floor_ok &= probs.iter().all(|&q| q >= eps / m as f64 * (1.0 - 1e-15));
        let unif = importance_probabilities(&z, 1.0).unwrap();
        uniform_ok &= unif.probs().iter().all(|&q| q == 1.0 / m as f64);
        let alpha = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = z.iter().map(|v| v * alpha).collect();
        let ps = importance_probabilities(&scaled, eps).unwrap();
        for (a, b) in probs.iter().zip(ps.probs()) {
            scale_err = scale_err.max((a - b).abs() / a);
        }
        for i in 0..m {
            for j in 0..m {
                if z[i] > z[j] {
                    bias_ok &= probs[i] > probs[j];
                }
            }
        }
    }
    let ok = sum_err <= 1e-12 && floor_ok && uniform_ok && scale_err <= 1e-12 && bias_ok;
    check(
        ok,
        format!(
            "5000 draws: |sum-1| {sum_err:.1e}, floor {floor_ok}, eps=1 uniform {uniform_ok}, scale rel diff {scale_err:.1e}, monotone {bias_ok}"
        ),
    )
}

fn same_bits(a: &SolveResult, b: &SolveResult) -> bool {
    a.trace.len() == b.trace.len()
        && a.trace.iter().zip(&b.trace).all(|(x, y)| {
            x.iteration == y.iteration
                && x.cumulative_flops == y.cumulative_flops
                && x.objective.to_bits() == y.objective.to_bits()
                && x.violation.map(f64::to_bits) == y.violation.map(f64::to_bits)
        })
        && a.final_iterate.values().iter().zip(b.final_iterate.values()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.termination == b.termination
        && a.iterations == b.iterations
        && a.flops == b.flops
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut steps = 0;
    for k in 0..12 {
        let n = rng.random_range(10..60);
        let d = rng.random_range(5..40);
        let penalty = if k % 3 == 0 { Penalty::l1() } else { Penalty::log_sum(rng.random_range(0.1..3.0)).unwrap() };
        let lambda = rng.random_range(0.05..2.0);
        let p = random_problem(&mut rng, n, d, penalty, lambda);
        let single = BlockPartition::single(d).unwrap();
        let x0 = Iterate::new((0..d).map(|_| rng.random_range(-0.5..0.5)).collect(), single.clone()).unwrap();
        let cfg = SolverConfig {
            max_iterations: 200,
            violation_tolerance: 1e-7,
            check_violation_every: Some(1 + k % 4),
            ..SolverConfig::default()
        };
        let g = gist_solve(&p, &cfg, &x0).unwrap();
        let r = rbcd_solve(&p, &single, &mut CyclicSelector::new(1), &cfg, &x0).unwrap();
        if !same_bits(&g, &r) {
            return Err(format!("instance {k} differs"));
        }
        steps += g.iterations;
    }
    Ok(format!("12 instances, {steps} steps, traces, iterates and flop counters bitwise equal"))
}

struct Matrix {
    problems: Vec<DesignProblem>,
}

fn test_matrix() -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut problems = Vec::new();
    for k in 0..6 {
        let penalty = if k % 2 == 0 { Penalty::l1() } else { Penalty::log_sum(rng.random_range(0.2..2.0)).unwrap() };
        let lambda = rng.random_range(0.1..2.0);
        problems.push(random_problem(&mut rng, 40, 30, penalty, lambda));
    }
    let cfg = toy_config(Path::new("unused"));
    let (toy, _) = replicate_data(&cfg, None, replicate_seeds(cfg.seed, 0).0).unwrap();
    problems.push(toy);
    Matrix { problems }
}

fn run_matrix(matrix: &Matrix, mut observer: impl FnMut(&DesignProblem, &BlockPartition, &StepEvent<'_>)) -> usize {
    let mut runs = 0;
    for p in &matrix.problems {
        let d = p.dim();
        let m = if d >= 100 { 100 } else { 6 };
        let partition = BlockPartition::uniform(d, m).unwrap();
        let cfg = SolverConfig {
            max_iterations: if d >= 100 { 3000 } else { 400 },
            violation_tolerance: 0.0,
            ..SolverConfig::default()
        };
        let single = BlockPartition::single(d).unwrap();
        let gcfg = SolverConfig { max_iterations: 300, ..cfg.clone() };
        gist_solve_observed(p, &gcfg, &Iterate::zeros(single.clone()), &mut |e: &StepEvent<'_>| observer(p, &single, e))
            .unwrap();
        runs += 1;
        for kind in [SamplerKind::Uniform, SamplerKind::Cyclic, SamplerKind::Importance { epsilon: 0.01 }, SamplerKind::Importance { epsilon: 0.5 }] {
            let mut sel = kind.build(m).unwrap();
            rbcd_solve_observed(p, &partition, sel.as_mut(), &cfg, &Iterate::zeros(partition.clone()), &mut |e: &StepEvent<'_>| {
                observer(p, &partition, e)
            })
            .unwrap();
            runs += 1;
        }
    }
    runs
}

fn criterion_5(matrix: &Matrix) -> Outcome {
    let sigma = SolverConfig::default().sigma;
    let (mut steps, mut bad, mut drift) = (0usize, 0usize, 0f64);
    let runs = run_matrix(matrix, |p, partition, e| {
        steps += 1;
        if !(e.objective_after <= e.objective_before - 0.5 * sigma * e.step_sq_norm) {
            bad += 1;
        }
        // The tracked objective must be the true one: spot-check from scratch.
        if steps % 25 == 0 {
            let mut x = e.iterate_before.to_vec();
            let r = if partition.num_blocks() == 1 { 0..x.len() } else { partition.range(e.block).unwrap() };
            x[r].copy_from_slice(e.new_block);
            let fresh = p.objective(&x).unwrap();
            drift = drift.max((fresh - e.objective_after).abs() / fresh.abs().max(1.0));
        }
    });
    check(
        bad == 0 && steps > 0 && drift < 1e-9,
        format!("{runs} runs, {steps} accepted steps, {bad} violations, max tracked-vs-fresh objective gap {drift:.1e}"),
    )
}

fn criterion_6(matrix: &Matrix) -> Outcome {
    let (mut checked, mut worst) = (0usize, 0f64);
    let runs = run_matrix(matrix, |p, partition, e| {
        // Every 7th step keeps the oracle cost reasonable on the toy problem.
        if e.iteration % 7 != 1 {
            return;
        }
        let at = Iterate::new(e.iterate_before.to_vec(), partition.clone()).unwrap();
        let (z, max) = compute_exact_violation(p, &at, &mut FlopCounter::new()).unwrap();
        let exact = if partition.num_blocks() == 1 { max } else { z[e.block] };
        worst = worst.max((e.approx_violation - exact).abs());
        checked += 1;
    });
    check(worst <= 1e-12, format!("{runs} runs, {checked} steps checked, max |z~_i - z_i| {worst:.1e} (<= 1e-12)"))
}

fn median_to_10x(out: &ExperimentOutput, solver: &str) -> Option<f64> {
    let hits: Vec<Option<u64>> = out
        .runs
        .iter()
        .flatten()
        .filter(|r| r.record.solver == solver)
        .map(|r| flops_to_reduction(&r.trace, 10.0))
        .collect();
    median_flops(&hits)
}

fn criterion_7(out: &ExperimentOutput) -> Outcome {
    let (Some(is), Some(unif), Some(gist)) =
        (median_to_10x(out, "is_rbcd"), median_to_10x(out, "unif_rbcd"), median_to_10x(out, "gist"))
    else {
        return Err("a solver's median run never reached a 10x violation reduction".into());
    };
    let (r1, r2) = (is / unif, unif / gist);
    check(
        r1 <= 0.6 && r2 <= 1.25,
        format!(
            "median flops to 10x: IS {is:.3e}, uniform {unif:.3e}, GIST {gist:.3e}; IS/uniform {r1:.2} (<= 0.6), uniform/GIST {r2:.2} (<= 1.25)"
        ),
    )
}

fn criterion_8(dir: &Path) -> Outcome {
    let cfg = toy_config(dir);
    let sweep = sweep_blocks(&cfg, &[10, 20, 50, 100]).unwrap();
    let medians: Vec<Option<f64>> = sweep.rows.iter().map(|r| r.flops_to_10x_median).collect();
    let text = sweep
        .rows
        .iter()
        .map(|r| format!("d_i={}: {}", r.block_size, r.flops_to_10x_median.map_or("-".into(), |v| format!("{v:.3e}"))))
        .collect::<Vec<_>>()
        .join(", ");
    match (medians[0], medians[3]) {
        (Some(small), Some(large)) => check(small < large, text),
        (Some(_), None) => Ok(format!("{text} (largest never reaches 10x)")),
        _ => Err(text),
    }
}

fn criterion_9() -> Outcome {
    let cfg = toy_config(Path::new("unused"));
    let (p, _) = replicate_data(&cfg, None, 77).unwrap();
    let (n, d) = (p.num_samples(), p.dim());
    let partition = BlockPartition::from_sizes(vec![10, 20, 50, 100, 1820]).unwrap();
    let one_step = SolverConfig { max_iterations: 1, theta_init: 1e4, ..SolverConfig::default() };
    let mut details = Vec::new();
    for b in 0..partition.num_blocks() {
        let mut sel = CyclicSelector::new(partition.num_blocks());
        for _ in 0..b {
            rbcd::BlockSelector::next_block(&mut sel, &mut ChaCha8Rng::seed_from_u64(0));
        }
        let mut backtracks = None;
        let r = rbcd_solve_observed(&p, &partition, &mut sel, &one_step, &Iterate::zeros(partition.clone()), &mut |e: &StepEvent<'_>| {
            backtracks = Some(e.backtracks)
        })
        .unwrap();
        let w = partition.block_size(b);
        let delta = r.trace[1].cumulative_flops - r.trace[0].cumulative_flops;
        let expected = (2 * n * w + n) as u64 + w as u64 + (n * w + n) as u64;
        if backtracks != Some(0) || delta != expected || r.trace[0].cumulative_flops != objective_cost(n, d) {
            return Err(format!("block width {w}: delta {delta}, expected {expected}, backtracks {backtracks:?}"));
        }
        details.push(format!("d_i={w}: {delta}"));
    }
    let mut backtracks = None;
    let g = gist_solve_observed(&p, &one_step, &Iterate::zeros(BlockPartition::single(d).unwrap()), &mut |e: &StepEvent<'_>| {
        backtracks = Some(e.backtracks)
    })
    .unwrap();
    let delta = g.trace[1].cumulative_flops - g.trace[0].cumulative_flops;
    let expected = gradient_cost(n, d) + prox_cost(d) + objective_cost(n, d);
    check(
        backtracks == Some(0) && delta == expected && expected == (2 * n * d + n + d + n * d + n) as u64,
        format!("n={n}; RBCD {}; GIST d={d}: {delta} (expected {expected})", details.join(", ")),
    )
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["", "traces"] {
        for entry in fs::read_dir(root.join(sub)).unwrap() {
            let p = entry.unwrap().path();
            if p.is_file() {
                files.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_10(first: &Path, second: &Path) -> Outcome {
    run_experiment(&toy_config(second)).unwrap();
    let (a, b) = (dir_bytes(first), dir_bytes(second));
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    check(
        a.len() == b.len() && differing == 0 && !a.is_empty(),
        format!("{} files compared, {differing} differ", a.len()),
    )
}

fn criterion_11(out: &ExperimentOutput) -> Outcome {
    let rates: Vec<(String, f64)> = out.summary.iter().map(|r| (r.solver.clone(), r.class_rate_mean)).collect();
    let lo = rates.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = rates.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let text = rates.iter().map(|(s, r)| format!("{s} {:.2}%", 100.0 * r)).collect::<Vec<_>>().join(", ");
    check(
        lo >= 0.90 && (hi - lo) < 0.03,
        format!("{text}; min {:.2}% (>= 90%), spread {:.2} pts (< 3)", 100.0 * lo, 100.0 * (hi - lo)),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("toy_a");
    let second = tmp.path().join("toy_b");
    let toy_run = catch_unwind(AssertUnwindSafe(|| run_experiment(&toy_config(&first)).ok())).ok().flatten();

    let matrix = test_matrix();
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient vs central differences", guarded(criterion_1)),
        (2, "prox vs brute-force minimizer", guarded(criterion_2)),
        (3, "importance distribution properties", guarded(criterion_3)),
        (4, "GIST equals single-block cyclic RBCD", guarded(criterion_4)),
        (5, "monotone descent", guarded(|| criterion_5(&matrix))),
        (6, "tracked violation consistency", guarded(|| criterion_6(&matrix))),
        (7, "importance sampling speedup on toy", guarded(|| criterion_7(toy_run.as_ref().ok_or("toy experiment failed to run")?))),
        (8, "smaller blocks converge faster", guarded(|| criterion_8(&tmp.path().join("sweep")))),
        (9, "per-iteration flop accounting", guarded(criterion_9)),
        (10, "end-to-end determinism", guarded(|| criterion_10(&first, &second))),
        (11, "classification sanity on toy", guarded(|| criterion_11(toy_run.as_ref().ok_or("toy experiment failed to run")?))),
    ];
    let mut failed = Vec::new();
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {name}: {detail}");
                failed.push(*id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
