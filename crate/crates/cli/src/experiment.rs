//! Replicated solver comparisons and the files they write.
//!
//! Per replicate: build the train/test pair, run GIST to its stopping rule,
//! then give every RBCD solver `GIST iterations × m` iterations (capped),
//! all from `x = 0`. Output layout under `out_dir`:
//!
//! ```text
//! traces/<solver>_r000.csv
//! runs.csv
//! summary.csv
//! summary.txt
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rbcd::blocks::{read_trace, write_trace};
use rbcd::datasets::{classification_rate, generate_toy, load_libsvm, standardize, train_test_split, LabeledDataset};
use rbcd::{gist_solve, rbcd_solve, BlockPartition, DesignProblem, Iterate, Loss, SamplerKind, SolveResult, SolverConfig, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::config::{BlockSpec, ExperimentConfig, ProblemSource, SolverKind};
use crate::metrics::{flops_to_reduction, mean, median_flops, sample_std};
use crate::CliError;

pub const SUMMARY_HEADER: [&str; 9] = [
    "solver",
    "class_rate_mean",
    "class_rate_std",
    "flops_mean",
    "flops_std",
    "violation_mean",
    "violation_std",
    "objective_mean",
    "objective_std",
];

/// One solver run within one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub solver: String,
    pub replicate: usize,
    pub data_seed: u64,
    pub solver_seed: u64,
    pub termination: String,
    pub iterations: usize,
    pub gradient_evaluations: usize,
    pub budget: usize,
    pub flops: u64,
    pub diagnostic_flops: u64,
    pub final_objective: f64,
    pub final_violation: f64,
    pub class_rate: f64,
    pub nonzeros: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub solver: String,
    pub class_rate_mean: f64,
    pub class_rate_std: f64,
    pub flops_mean: f64,
    pub flops_std: f64,
    pub violation_mean: f64,
    pub violation_std: f64,
    pub objective_mean: f64,
    pub objective_std: f64,
}

#[derive(Debug, Clone)]
pub struct SolverRun {
    pub record: RunRecord,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// `runs[r]` holds replicate `r`, solvers in config order.
    pub runs: Vec<Vec<SolverRun>>,
    pub summary: Vec<SummaryRow>,
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Data and solver seeds of replicate `r`.
pub fn replicate_seeds(base: u64, r: usize) -> (u64, u64) {
    (derive_seed(base, 2 * r as u64), derive_seed(base, 2 * r as u64 + 1))
}

fn load_source(cfg: &ExperimentConfig) -> Result<Option<LabeledDataset>, CliError> {
    match &cfg.source {
        ProblemSource::Toy(_) => Ok(None),
        ProblemSource::Libsvm { path, .. } => load_libsvm(path)
            .map(Some)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
    }
}

/// Training problem and test set for one replicate.
pub fn replicate_data(
    cfg: &ExperimentConfig,
    loaded: Option<&LabeledDataset>,
    data_seed: u64,
) -> Result<(DesignProblem, LabeledDataset), CliError> {
    let (train, test) = match (&cfg.source, loaded) {
        (ProblemSource::Toy(spec), _) => generate_toy(&rbcd::datasets::ToySpec { seed: data_seed, ..spec.clone() })?,
        (ProblemSource::Libsvm { train_fraction, .. }, Some(data)) => train_test_split(data, *train_fraction, data_seed)?,
        (ProblemSource::Libsvm { .. }, None) => unreachable!("dataset is loaded before replicates run"),
    };
    let (train, test) = if cfg.standardize { standardize(&train, &test)? } else { (train, test) };
    let problem = DesignProblem::new(train.features, train.labels, Loss::Logistic, cfg.penalty, cfg.lambda)?;
    Ok((problem, test))
}

fn gist_config(cfg: &ExperimentConfig) -> SolverConfig {
    SolverConfig { check_violation_every: Some(1), ..cfg.solver.clone() }
}

/// RBCD runs use their whole budget; exact checks every `m` iterations.
fn rbcd_config(cfg: &ExperimentConfig, m: usize, budget: usize, seed: u64) -> SolverConfig {
    SolverConfig {
        max_iterations: budget,
        violation_tolerance: 0.0,
        check_violation_every: Some(m),
        seed,
        ..cfg.solver.clone()
    }
}

pub fn rbcd_budget(gist_gradients: usize, m: usize, cap: usize) -> usize {
    gist_gradients.saturating_mul(m).min(cap).max(1)
}

fn gradient_evaluations(result: &SolveResult) -> usize {
    result.trace.last().map_or(0, |r| r.iteration)
}

fn record(
    name: &str,
    replicate: usize,
    seeds: (u64, u64),
    budget: usize,
    result: &SolveResult,
    test: &LabeledDataset,
) -> RunRecord {
    let x = result.final_iterate.values();
    RunRecord {
        solver: name.to_string(),
        replicate,
        data_seed: seeds.0,
        solver_seed: seeds.1,
        termination: result.termination.as_str().to_string(),
        iterations: result.iterations,
        gradient_evaluations: gradient_evaluations(result),
        budget,
        flops: result.flops.total(),
        diagnostic_flops: result.diagnostic_flops.total(),
        final_objective: result.final_objective(),
        final_violation: result.final_violation().unwrap_or(f64::NAN),
        class_rate: classification_rate(&test.features, &test.labels, x),
        nonzeros: x.iter().filter(|v| **v != 0.0).count(),
    }
}

fn run_rbcd(
    problem: &DesignProblem,
    partition: &BlockPartition,
    sampler: SamplerKind,
    config: &SolverConfig,
) -> Result<SolveResult, CliError> {
    let mut selector = sampler.build(partition.num_blocks())?;
    let x0 = Iterate::zeros(partition.clone());
    Ok(rbcd_solve(problem, partition, selector.as_mut(), config, &x0)?)
}

fn run_replicate(cfg: &ExperimentConfig, loaded: Option<&LabeledDataset>, r: usize) -> Result<Vec<SolverRun>, CliError> {
    let seeds = replicate_seeds(cfg.seed, r);
    let (problem, test) = replicate_data(cfg, loaded, seeds.0)?;
    let d = problem.dim();
    let gist = gist_solve(&problem, &gist_config(cfg), &Iterate::zeros(BlockPartition::single(d)?))?;
    let used = gradient_evaluations(&gist);

    let mut out = Vec::with_capacity(cfg.solvers.len());
    for spec in &cfg.solvers {
        let (result, budget) = match &spec.kind {
            SolverKind::Gist => (gist.clone(), cfg.solver.max_iterations),
            SolverKind::Rbcd { sampler, blocks } => {
                let partition = blocks.partition(d)?;
                let budget = rbcd_budget(used, partition.num_blocks(), cfg.rbcd_iteration_cap);
                let config = rbcd_config(cfg, partition.num_blocks(), budget, seeds.1);
                (run_rbcd(&problem, &partition, *sampler, &config)?, budget)
            }
        };
        out.push(SolverRun { record: record(&spec.name, r, seeds, budget, &result, &test), trace: result.trace });
    }
    Ok(out)
}

/// Records at multiples of `stride`, plus the first, the last and every one
/// carrying an exact violation.
pub fn thin_trace(trace: &[TraceRecord], stride: usize) -> Vec<TraceRecord> {
    let last = trace.len().saturating_sub(1);
    trace
        .iter()
        .enumerate()
        .filter(|(i, r)| *i == 0 || *i == last || r.iteration % stride == 0 || r.violation.is_some())
        .map(|(_, r)| *r)
        .collect()
}

pub fn trace_path(dir: &Path, solver: &str, replicate: usize) -> PathBuf {
    dir.join("traces").join(format!("{solver}_r{replicate:03}.csv"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_trace_file(path: &Path, trace: &[TraceRecord]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, trace).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| io_err(path, e))
}

/// Per-solver mean and sample standard deviation, solvers in first-seen order.
pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.solver.as_str()) {
            names.push(&r.solver);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&RunRecord> = records.iter().filter(|r| r.solver == name).collect();
            let col = |f: fn(&RunRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (cr, fl, vi, ob) = (
                col(|r| r.class_rate),
                col(|r| r.flops as f64),
                col(|r| r.final_violation),
                col(|r| r.final_objective),
            );
            SummaryRow {
                solver: name.to_string(),
                class_rate_mean: mean(&cr),
                class_rate_std: sample_std(&cr),
                flops_mean: mean(&fl),
                flops_std: sample_std(&fl),
                violation_mean: mean(&vi),
                violation_std: sample_std(&vi),
                objective_mean: mean(&ob),
                objective_std: sample_std(&ob),
            }
        })
        .collect()
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let header = ["solver", "class rate", "flops", "violation", "objective"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.solver.clone(),
                format!("{:.4} ± {:.4}", r.class_rate_mean, r.class_rate_std),
                format!("{:.4e} ± {:.2e}", r.flops_mean, r.flops_std),
                format!("{:.3e} ± {:.2e}", r.violation_mean, r.violation_std),
                format!("{:.6} ± {:.2e}", r.objective_mean, r.objective_std),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|c| cells.iter().map(|row| row[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |row: Vec<&str>| {
        let mut s = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for row in &cells {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn write_summary(dir: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    write_csv(&dir.join("summary.csv"), rows)?;
    let path = dir.join("summary.txt");
    fs::write(&path, format_summary(rows)).map_err(|e| io_err(&path, e))
}

/// Runs every replicate (in parallel), writes traces, `runs.csv` and the
/// summary files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let loaded = load_source(cfg)?;
    let runs: Vec<Vec<SolverRun>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, loaded.as_ref(), r))
        .collect::<Result<_, _>>()?;

    let dir = &cfg.out_dir;
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(|e| io_err(&traces, e))?;
    for (r, rep) in runs.iter().enumerate() {
        for run in rep {
            write_trace_file(&trace_path(dir, &run.record.solver, r), &thin_trace(&run.trace, cfg.trace_stride))?;
        }
    }
    let records: Vec<RunRecord> = runs.iter().flatten().map(|s| s.record.clone()).collect();
    write_csv(&dir.join("runs.csv"), &records)?;
    let summary = aggregate(&records);
    write_summary(dir, &summary)?;
    Ok(ExperimentOutput { runs, summary })
}

/// Rebuilds the summary from `runs.csv` (class rates) and the trace files
/// (flops, objective, violation at the last record), then rewrites
/// `summary.csv` and `summary.txt`.
pub fn summarize(dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut records: Vec<RunRecord> = read_csv(&dir.join("runs.csv"))?;
    for rec in &mut records {
        let path = trace_path(dir, &rec.solver, rec.replicate);
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        let trace = read_trace(BufReader::new(file)).map_err(|e| io_err(&path, e))?;
        let last = trace.last().ok_or_else(|| io_err(&path, "empty trace"))?;
        rec.flops = last.cumulative_flops;
        rec.final_objective = last.objective;
        rec.final_violation = trace.iter().rev().find_map(|t| t.violation).unwrap_or(f64::NAN);
    }
    let rows = aggregate(&records);
    write_summary(dir, &rows)?;
    Ok(rows)
}

/// Importance-sampling RBCD over several block sizes.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub block_sizes: Vec<usize>,
    /// `traces[s][r]`: size index `s`, replicate `r`.
    pub traces: Vec<Vec<Vec<TraceRecord>>>,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub block_size: usize,
    pub blocks: usize,
    pub replicates: usize,
    /// Median flops to a 10× drop of the exact violation; empty when the
    /// median run never gets there.
    pub flops_to_10x_median: Option<f64>,
    pub reached: usize,
}

/// Average of aligned records over replicates, truncated to the shortest
/// trace. A violation is averaged only where every replicate has one.
pub fn mean_trace(traces: &[Vec<TraceRecord>]) -> Vec<TraceRecord> {
    let len = traces.iter().map(Vec::len).min().unwrap_or(0);
    let k = traces.len() as f64;
    (0..len)
        .map(|i| {
            let at: Vec<&TraceRecord> = traces.iter().map(|t| &t[i]).collect();
            let violations: Option<Vec<f64>> = at.iter().map(|r| r.violation).collect();
            TraceRecord {
                iteration: at[0].iteration,
                cumulative_flops: (at.iter().map(|r| r.cumulative_flops as f64).sum::<f64>() / k).round() as u64,
                objective: at.iter().map(|r| r.objective).sum::<f64>() / k,
                violation: violations.map(|v| mean(&v)),
                wall_time_s: at.iter().map(|r| r.wall_time_s).sum::<f64>() / k,
            }
        })
        .collect()
}

fn sweep_epsilon(cfg: &ExperimentConfig) -> f64 {
    cfg.solvers
        .iter()
        .find_map(|s| match s.kind {
            SolverKind::Rbcd { sampler: SamplerKind::Importance { epsilon }, .. } => Some(epsilon),
            _ => None,
        })
        .unwrap_or(rbcd::sampling::DEFAULT_EPSILON)
}

/// For each block size `d_i`, runs importance-sampling RBCD with
/// `m = ⌈d/d_i⌉` blocks and a budget of `GIST iterations × m`, so every size
/// gets the same number of full-gradient equivalents. Writes per-replicate
/// traces, one averaged trace per size and `sweep.csv` under `out_dir/sweep`.
pub fn sweep_blocks(cfg: &ExperimentConfig, block_sizes: &[usize]) -> Result<SweepOutput, CliError> {
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(CliError::Config("block sizes must be positive and non-empty".into()));
    }
    let loaded = load_source(cfg)?;
    let epsilon = sweep_epsilon(cfg);
    let per_rep: Vec<Vec<Vec<TraceRecord>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<_, CliError> {
            let seeds = replicate_seeds(cfg.seed, r);
            let (problem, _) = replicate_data(cfg, loaded.as_ref(), seeds.0)?;
            let d = problem.dim();
            if block_sizes.iter().any(|&s| s > d) {
                return Err(CliError::Config(format!("block sizes must not exceed d = {d}")));
            }
            let gist = gist_solve(&problem, &gist_config(cfg), &Iterate::zeros(BlockPartition::single(d)?))?;
            let used = gradient_evaluations(&gist);
            block_sizes
                .iter()
                .map(|&s| {
                    let partition = BlockSpec::Size(s).partition(d)?;
                    let m = partition.num_blocks();
                    let config = rbcd_config(cfg, m, rbcd_budget(used, m, cfg.rbcd_iteration_cap), seeds.1);
                    Ok(run_rbcd(&problem, &partition, SamplerKind::Importance { epsilon }, &config)?.trace)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let traces: Vec<Vec<Vec<TraceRecord>>> = (0..block_sizes.len())
        .map(|s| per_rep.iter().map(|rep| rep[s].clone()).collect())
        .collect();
    let dir = cfg.out_dir.join("sweep");
    fs::create_dir_all(dir.join("traces")).map_err(|e| io_err(&dir, e))?;
    let mut rows = Vec::new();
    for (s, &size) in block_sizes.iter().enumerate() {
        for (r, trace) in traces[s].iter().enumerate() {
            write_trace_file(&trace_path(&dir, &format!("is_d{size}"), r), &thin_trace(trace, cfg.trace_stride))?;
        }
        write_trace_file(&dir.join(format!("is_d{size}_mean.csv")), &thin_trace(&mean_trace(&traces[s]), cfg.trace_stride))?;
        let hits: Vec<Option<u64>> = traces[s].iter().map(|t| flops_to_reduction(t, 10.0)).collect();
        rows.push(SweepRow {
            block_size: size,
            blocks: total_dim(cfg, loaded.as_ref()).div_ceil(size),
            replicates: cfg.replicates,
            flops_to_10x_median: median_flops(&hits),
            reached: hits.iter().filter(|h| h.is_some()).count(),
        });
    }
    write_csv(&dir.join("sweep.csv"), &rows)?;
    Ok(SweepOutput { block_sizes: block_sizes.to_vec(), traces, rows })
}

fn total_dim(cfg: &ExperimentConfig, loaded: Option<&LabeledDataset>) -> usize {
    match (&cfg.source, loaded) {
        (ProblemSource::Toy(spec), _) => spec.dim,
        (_, Some(data)) => data.dim(),
        _ => 0,
    }
}

/// Writes `train.svm` and `test.svm` for a toy draw.
pub fn gen_toy(spec: &rbcd::datasets::ToySpec, standardized: bool, dir: &Path) -> Result<(), CliError> {
    let (train, test) = generate_toy(spec)?;
    let (train, test) = if standardized { standardize(&train, &test)? } else { (train, test) };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, data) in [("train.svm", &train), ("test.svm", &test)] {
        let path = dir.join(name);
        rbcd::datasets::save_libsvm(data, &path).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
