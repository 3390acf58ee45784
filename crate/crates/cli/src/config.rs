//! Experiment manifests: flat top-level keys plus one `[solver.<name>]`
//! table per solver. Every top-level key is also a command-line flag, and
//! flags win over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rbcd::datasets::{CovarianceMode, RelevantPlacement, ToySpec};
use rbcd::{BlockPartition, Penalty, SamplerKind, SolverConfig};
use serde::Deserialize;

use crate::CliError;

/// Unresolved manifest values; `None` means "use the default".
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// `toy` or `libsvm`.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_relevant: Option<usize>,
    /// `first` or `shuffled`.
    #[arg(long)]
    pub relevant_placement: Option<String>,
    /// `shared` or `per_class`.
    #[arg(long)]
    pub covariance: Option<String>,
    /// LIBSVM file for `problem = "libsvm"`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub standardize: Option<bool>,
    /// `log_sum` or `l1`.
    #[arg(long)]
    pub penalty: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GIST iteration limit.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub violation_tolerance: Option<f64>,
    #[arg(long)]
    pub rbcd_iteration_cap: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub theta_min: Option<f64>,
    #[arg(long)]
    pub theta_max: Option<f64>,
    #[arg(long)]
    pub theta_init: Option<f64>,
    #[arg(long)]
    pub max_backtracks: Option<usize>,
    /// Keep every k-th trace record (plus checked and final ones).
    #[arg(long)]
    pub trace_stride: Option<usize>,
    #[arg(long, visible_alias = "out")]
    pub out_dir: Option<PathBuf>,
    #[arg(skip)]
    pub solver: Option<BTreeMap<String, RawSolver>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    /// `gist` or `rbcd`.
    pub kind: String,
    pub sampler: Option<String>,
    pub blocks: Option<usize>,
    pub block_size: Option<usize>,
    pub epsilon: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $(if $top.$field.is_some() { $base.$field = $top.$field.clone(); })*
    };
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &RawConfig) -> Self {
        overlay!(self, top; problem, n_train, n_test, dim, n_relevant, relevant_placement, covariance,
            dataset, train_fraction, standardize, penalty, rho, lambda, replicates, seed, max_iterations,
            violation_tolerance, rbcd_iteration_cap, sigma, eta, theta_min, theta_max, theta_init,
            max_backtracks, trace_stride, out_dir, solver);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Toy(ToySpec),
    Libsvm { path: PathBuf, train_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockSpec {
    Count(usize),
    Size(usize),
}

impl BlockSpec {
    pub fn partition(&self, dim: usize) -> rbcd::Result<BlockPartition> {
        match *self {
            BlockSpec::Count(m) => BlockPartition::uniform(dim, m),
            BlockSpec::Size(s) => {
                if s == 0 {
                    return Err(rbcd::Error::InvalidArgument("block size must be positive".into()));
                }
                let mut sizes = vec![s; dim / s];
                if !dim.is_multiple_of(s) {
                    sizes.push(dim % s);
                }
                BlockPartition::from_sizes(sizes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverKind {
    Gist,
    Rbcd { sampler: SamplerKind, blocks: BlockSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub name: String,
    pub kind: SolverKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: ProblemSource,
    pub standardize: bool,
    pub penalty: Penalty,
    pub lambda: f64,
    /// Ordered by name, GIST first.
    pub solvers: Vec<SolverSpec>,
    pub replicates: usize,
    pub seed: u64,
    pub violation_tolerance: f64,
    pub rbcd_iteration_cap: usize,
    /// Shared line-search settings; `max_iterations` is the GIST limit.
    pub solver: SolverConfig,
    pub trace_stride: usize,
    pub out_dir: PathBuf,
}

pub const DEFAULT_TOY_ITERATIONS: usize = 1000;
pub const DEFAULT_DATASET_ITERATIONS: usize = 5000;
pub const DEFAULT_RBCD_CAP: usize = 20_000;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_sampler(name: &str, raw: &RawSolver) -> Result<SamplerKind, CliError> {
    let sampler = raw.sampler.as_deref().unwrap_or("uniform");
    if raw.epsilon.is_some() && sampler != "importance" {
        return Err(bad(format!("solver {name}: epsilon only applies to the importance sampler")));
    }
    match sampler {
        "uniform" => Ok(SamplerKind::Uniform),
        "cyclic" => Ok(SamplerKind::Cyclic),
        "importance" => {
            let epsilon = raw.epsilon.unwrap_or(rbcd::sampling::DEFAULT_EPSILON);
            rbcd::sampling::check_epsilon(epsilon).map_err(|e| bad(format!("solver {name}: {e}")))?;
            Ok(SamplerKind::Importance { epsilon })
        }
        other => Err(bad(format!("solver {name}: unknown sampler {other:?}"))),
    }
}

fn parse_solver(name: &str, raw: &RawSolver) -> Result<SolverSpec, CliError> {
    let kind = match raw.kind.as_str() {
        "gist" => {
            if raw.sampler.is_some() || raw.blocks.is_some() || raw.block_size.is_some() || raw.epsilon.is_some() {
                return Err(bad(format!("solver {name}: gist takes no sampler or block options")));
            }
            SolverKind::Gist
        }
        "rbcd" => {
            let blocks = match (raw.blocks, raw.block_size) {
                (Some(m), None) if m > 0 => BlockSpec::Count(m),
                (None, Some(s)) if s > 0 => BlockSpec::Size(s),
                (None, None) => return Err(bad(format!("solver {name}: set blocks or block_size"))),
                (Some(_), Some(_)) => return Err(bad(format!("solver {name}: blocks and block_size are exclusive"))),
                _ => return Err(bad(format!("solver {name}: block options must be positive"))),
            };
            SolverKind::Rbcd { sampler: parse_sampler(name, raw)?, blocks }
        }
        other => return Err(bad(format!("solver {name}: unknown kind {other:?}"))),
    };
    Ok(SolverSpec { name: name.to_string(), kind })
}

fn choice<'a>(key: &str, value: Option<&'a str>, default: &'a str, allowed: &[&str]) -> Result<&'a str, CliError> {
    let v = value.unwrap_or(default);
    if allowed.contains(&v) {
        Ok(v)
    } else {
        Err(bad(format!("{key} must be one of {allowed:?}, got {v:?}")))
    }
}

impl ExperimentConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self, CliError> {
        let problem = choice("problem", raw.problem.as_deref(), "toy", &["toy", "libsvm"])?;
        let is_toy = problem == "toy";
        let source = if is_toy {
            let placement = match choice("relevant_placement", raw.relevant_placement.as_deref(), "first", &["first", "shuffled"])? {
                "first" => RelevantPlacement::First,
                _ => RelevantPlacement::Shuffled,
            };
            let covariance = match choice("covariance", raw.covariance.as_deref(), "shared", &["shared", "per_class"])? {
                "shared" => CovarianceMode::Shared,
                _ => CovarianceMode::PerClass,
            };
            let spec = ToySpec {
                n_train: raw.n_train.unwrap_or(200),
                n_test: raw.n_test.unwrap_or(1000),
                dim: raw.dim.unwrap_or(2000),
                n_relevant: raw.n_relevant.unwrap_or(20),
                seed: 0,
                placement,
                covariance,
            };
            if spec.n_train == 0 || spec.n_test == 0 || spec.n_relevant == 0 || spec.n_relevant > spec.dim {
                return Err(bad("toy sizes need positive counts and n_relevant <= dim"));
            }
            ProblemSource::Toy(spec)
        } else {
            let path = raw.dataset.clone().ok_or_else(|| bad("problem = \"libsvm\" needs a dataset path"))?;
            let train_fraction = raw.train_fraction.unwrap_or(0.8);
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(bad(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
            }
            ProblemSource::Libsvm { path, train_fraction }
        };

        let penalty = match choice("penalty", raw.penalty.as_deref(), "log_sum", &["log_sum", "l1"])? {
            "l1" => {
                if raw.rho.is_some() {
                    return Err(bad("rho only applies to the log_sum penalty"));
                }
                Penalty::l1()
            }
            _ => Penalty::log_sum(raw.rho.unwrap_or(1.0)).map_err(|e| bad(e.to_string()))?,
        };
        let lambda = raw.lambda.ok_or_else(|| bad("lambda is required"))?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(bad(format!("lambda must be non-negative, got {lambda}")));
        }

        let mut solvers = raw
            .solver
            .as_ref()
            .map(|m| m.iter().map(|(n, s)| parse_solver(n, s)).collect::<Result<Vec<_>, _>>())
            .transpose()?
            .unwrap_or_default();
        if solvers.is_empty() {
            return Err(bad("at least one [solver.<name>] section is required"));
        }
        solvers.sort_by_key(|s| (s.kind != SolverKind::Gist, s.name.clone()));

        let replicates = raw.replicates.unwrap_or(1);
        if replicates == 0 {
            return Err(bad("replicates must be at least 1"));
        }
        let violation_tolerance = raw.violation_tolerance.unwrap_or(1e-3);
        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            sigma: raw.sigma.unwrap_or(defaults.sigma),
            eta: raw.eta.unwrap_or(defaults.eta),
            theta_min: raw.theta_min.unwrap_or(defaults.theta_min),
            theta_max: raw.theta_max.unwrap_or(defaults.theta_max),
            theta_init: raw.theta_init.unwrap_or(defaults.theta_init),
            max_iterations: raw
                .max_iterations
                .unwrap_or(if is_toy { DEFAULT_TOY_ITERATIONS } else { DEFAULT_DATASET_ITERATIONS }),
            max_backtracks: raw.max_backtracks.unwrap_or(defaults.max_backtracks),
            violation_tolerance,
            ..defaults
        };
        solver.validate().map_err(|e| bad(e.to_string()))?;
        let rbcd_iteration_cap = raw.rbcd_iteration_cap.unwrap_or(DEFAULT_RBCD_CAP);
        let trace_stride = raw.trace_stride.unwrap_or(1);
        if rbcd_iteration_cap == 0 || trace_stride == 0 {
            return Err(bad("rbcd_iteration_cap and trace_stride must be positive"));
        }

        Ok(Self {
            source,
            standardize: raw.standardize.unwrap_or(is_toy),
            penalty,
            lambda,
            solvers,
            replicates,
            seed: raw.seed.unwrap_or(0),
            violation_tolerance,
            rbcd_iteration_cap,
            solver,
            trace_stride,
            out_dir: raw.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    /// Reads `path`, applies `overrides`, resolves defaults.
    pub fn load(path: &Path, overrides: &RawConfig) -> Result<Self, CliError> {
        Self::resolve(&RawConfig::from_file(path)?.overlay(overrides))
    }
}
