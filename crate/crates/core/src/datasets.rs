//! Synthetic toy problems, LIBSVM ingestion and the train/test protocol.
//!
//! The toy generator draws a binary problem in `R^d` where only `T`
//! coordinates carry signal: class `±1` samples those coordinates from
//! `N(±μ, Σ)` with `μ ∈ {−1, +1}^T` and `Σ = G Gᵀ`, `G` a `T × T` matrix of
//! standard normals (a Wishart `W(I, T)` draw). The other `d − T`
//! coordinates are standard normal noise for both classes.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::sparse::CscMatrix;

/// Where the informative coordinates sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelevantPlacement {
    /// Indices `0..T`.
    #[default]
    First,
    /// A seeded random subset of the columns.
    Shuffled,
}

/// Whether both classes share one covariance draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    #[default]
    Shared,
    PerClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub n_relevant: usize,
    pub seed: u64,
    pub placement: RelevantPlacement,
    pub covariance: CovarianceMode,
}

impl ToySpec {
    pub fn new(n_train: usize, n_test: usize, dim: usize, n_relevant: usize, seed: u64) -> Self {
        Self {
            n_train,
            n_test,
            dim,
            n_relevant,
            seed,
            placement: RelevantPlacement::First,
            covariance: CovarianceMode::Shared,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_relevant == 0 || self.n_relevant > self.dim {
            return invalid(format!(
                "need 0 < relevant ({}) <= dim ({})",
                self.n_relevant, self.dim
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return invalid("toy sample counts must be positive");
        }
        Ok(())
    }
}

/// Per-column affine map `x ↦ (x − mean)/scale` learned on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: CscMatrix,
    /// `±1`.
    pub labels: Vec<f64>,
    pub standardization: Option<Standardization>,
}

impl LabeledDataset {
    pub fn new(features: CscMatrix, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return invalid("label count does not match the number of rows");
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return invalid("labels must be +1 or -1");
        }
        Ok(Self { features, labels, standardization: None })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(rows)?,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            standardization: self.standardization.clone(),
        })
    }
}

/// Ground truth behind a toy draw.
#[derive(Debug, Clone)]
pub struct ToyTruth {
    pub mean: Vec<f64>,
    /// Covariance of class `+1` (and `−1` when shared), `T × T`.
    pub covariance_pos: DMatrix<f64>,
    pub covariance_neg: DMatrix<f64>,
    pub relevant: Vec<usize>,
}

fn wishart_identity(t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(t, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose()
}

fn lower_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = sigma.nrows();
    let jittered = sigma + DMatrix::<f64>::identity(t, t) * 1e-10;
    jittered
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NumericalOverflow("covariance factorization failed".into()))
}

/// Generates train and test sets with the same `μ`, `Σ` and relevant
/// coordinates. Classes are balanced, any odd sample going to `+1`; the
/// positive rows come first.
pub fn generate_toy(spec: &ToySpec) -> Result<(LabeledDataset, LabeledDataset)> {
    generate_toy_with_truth(spec).map(|(a, b, _)| (a, b))
}

pub fn generate_toy_with_truth(spec: &ToySpec) -> Result<(LabeledDataset, LabeledDataset, ToyTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = spec.n_relevant;
    let d = spec.dim;

    let mean: Vec<f64> = (0..t).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let cov_pos = wishart_identity(t, &mut rng);
    let cov_neg = match spec.covariance {
        CovarianceMode::Shared => cov_pos.clone(),
        CovarianceMode::PerClass => wishart_identity(t, &mut rng),
    };
    let l_pos = lower_factor(&cov_pos)?;
    let l_neg = lower_factor(&cov_neg)?;
    let mut relevant: Vec<usize> = match spec.placement {
        RelevantPlacement::First => (0..t).collect(),
        RelevantPlacement::Shuffled => rand::seq::index::sample(&mut rng, d, t).into_vec(),
    };
    relevant.sort_unstable();
    let relevant_set: BTreeSet<usize> = relevant.iter().copied().collect();
    let noise_cols: Vec<usize> = (0..d).filter(|j| !relevant_set.contains(j)).collect();

    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<LabeledDataset> {
        let n_pos = n - n / 2;
        let mut data = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; t];
        for row in 0..n {
            let (label, factor) = if row < n_pos { (1.0, &l_pos) } else { (-1.0, &l_neg) };
            labels.push(label);
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let out = &mut data[row * d..(row + 1) * d];
            for (a, &col) in relevant.iter().enumerate() {
                let mut acc = label * mean[a];
                for (b, zb) in z.iter().enumerate().take(a + 1) {
                    acc += factor[(a, b)] * zb;
                }
                out[col] = acc;
            }
            for &col in &noise_cols {
                out[col] = rng.sample(StandardNormal);
            }
        }
        LabeledDataset::new(CscMatrix::from_dense_row_major(n, d, &data)?, labels)
    };
    let train = draw(spec.n_train, &mut rng)?;
    let test = draw(spec.n_test, &mut rng)?;
    Ok((
        train,
        test,
        ToyTruth { mean, covariance_pos: cov_pos, covariance_neg: cov_neg, relevant },
    ))
}

fn column_stats(a: &CscMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows() as f64;
    let mut means = Vec::with_capacity(a.ncols());
    let mut scales = Vec::with_capacity(a.ncols());
    for j in 0..a.ncols() {
        let (_, vals) = a.column(j);
        let mean = vals.iter().sum::<f64>() / n;
        let zeros = a.nrows() - vals.len();
        let var = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() + zeros as f64 * mean * mean) / n;
        let sd = var.sqrt();
        means.push(mean);
        // treat round-off-level spread as a constant column
        scales.push(if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 });
    }
    (means, scales)
}

fn apply_standardization(a: &CscMatrix, st: &Standardization) -> Result<CscMatrix> {
    let (n, d) = (a.nrows(), a.ncols());
    let mut data = vec![0.0; n * d];
    for j in 0..d {
        let (mean, scale) = (st.mean[j], st.scale[j]);
        for i in 0..n {
            data[i * d + j] = -mean / scale;
        }
        let (rows, vals) = a.column(j);
        for (&i, &v) in rows.iter().zip(vals) {
            data[i * d + j] = (v - mean) / scale;
        }
    }
    CscMatrix::from_dense_row_major(n, d, &data)
}

/// Centers and scales each column with training statistics (population
/// standard deviation) and applies the same map to the test set. Columns
/// without spread are only centered.
pub fn standardize(train: &LabeledDataset, test: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    if train.dim() != test.dim() {
        return invalid("train and test have different dimensions");
    }
    let (mean, scale) = column_stats(&train.features);
    let st = Standardization { mean, scale };
    let out = |ds: &LabeledDataset| -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            features: apply_standardization(&ds.features, &st)?,
            labels: ds.labels.clone(),
            standardization: Some(st.clone()),
        })
    };
    Ok((out(train)?, out(test)?))
}

/// Seeded shuffle, then the first `⌊n·fraction⌋` rows go to training.
pub fn train_test_split(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid(format!("train fraction must lie in (0, 1), got {fraction}"));
    }
    let n = data.num_samples();
    // guard against 0.57·100 = 56.99999999999999
    let n_train = (n as f64 * fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= n {
        return invalid(format!("fraction {fraction} of {n} samples leaves an empty side"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.select_rows(&order[..n_train])?, data.select_rows(&order[n_train..])?))
}

/// Fraction of samples with `sign(a_jᵀx) = y_j`; a zero margin is an error.
pub fn classification_rate(features: &CscMatrix, labels: &[f64], x: &[f64]) -> f64 {
    let mut margins = vec![0.0; features.nrows()];
    features.mul_vec(x, &mut margins);
    let correct = margins.iter().zip(labels).filter(|(m, y)| **m * **y > 0.0).count();
    correct as f64 / labels.len() as f64
}

/// Parses LIBSVM text (`label idx:val …`, 1-based indices). With
/// `n_features` the column count is fixed, otherwise it is the largest index
/// seen. Two-class label sets map to `{−1, +1}` in ascending order.
pub fn parse_libsvm<R: BufRead>(input: R, n_features: Option<usize>) -> Result<LabeledDataset> {
    let mut raw_labels = Vec::new();
    let mut rows = Vec::new();
    let mut max_col = 0usize;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: lineno, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| bad(format!("invalid label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(bad(format!("invalid label {label_tok:?}")));
        }
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| bad(format!("expected index:value, found {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| bad(format!("invalid index in {tok:?}")))?;
            if idx == 0 {
                return Err(bad("indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| bad(format!("invalid value in {tok:?}")))?;
            if !val.is_finite() {
                return Err(bad(format!("non-finite value in {tok:?}")));
            }
            if let Some(limit) = n_features {
                if idx > limit {
                    return Err(bad(format!("index {idx} exceeds {limit} features")));
                }
            }
            if row.iter().any(|&(c, _)| c == idx - 1) {
                return Err(bad(format!("duplicate index {idx}")));
            }
            max_col = max_col.max(idx);
            row.push((idx - 1, val));
        }
        raw_labels.push(label);
        rows.push(row);
    }

    let mut distinct: Vec<f64> = Vec::new();
    for &y in &raw_labels {
        if !distinct.contains(&y) {
            distinct.push(y);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let labels: Vec<f64> = match distinct.len() {
        0 => Vec::new(),
        1 => {
            let y = if distinct[0] > 0.0 { 1.0 } else { -1.0 };
            vec![y; raw_labels.len()]
        }
        2 => raw_labels
            .iter()
            .map(|&y| if y == distinct[0] { -1.0 } else { 1.0 })
            .collect(),
        k => {
            return Err(Error::UnsupportedProblem(format!(
                "{k} distinct labels; only binary problems are supported"
            )))
        }
    };
    let ncols = n_features.unwrap_or(max_col);
    LabeledDataset::new(CscMatrix::from_sparse_rows(ncols, &rows)?, labels)
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    parse_libsvm(BufReader::new(File::open(path)?), None)
}

/// Writes LIBSVM text; stored entries only, shortest round-trip float form.
pub fn write_libsvm<W: Write>(data: &LabeledDataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for (row, y) in data.features.to_sparse_rows().iter().zip(&data.labels) {
        write!(out, "{}", if *y > 0.0 { "+1" } else { "-1" })?;
        for &(j, v) in row {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_libsvm(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_libsvm(data, File::create(path)?)
}
