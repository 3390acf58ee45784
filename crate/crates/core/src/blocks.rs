//! Block partitions, iterates, flop accounting and trace records.
//!
//! The decision vector `x ∈ R^d` is split into `m` contiguous blocks
//! `x = [x_1, …, x_m]` with `Σ d_i = d`. Every solver in this crate works on
//! that layout; a single block is plain full-vector proximal descent.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use crate::error::{invalid, Error, Result};

/// Decomposition of `total_dim` coordinates into contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    total_dim: usize,
    block_sizes: Vec<usize>,
    block_offsets: Vec<usize>,
}

impl BlockPartition {
    /// Balanced contiguous split of `total_dim` coordinates into `num_blocks`
    /// blocks. When `num_blocks` does not divide `total_dim` the first
    /// `total_dim % num_blocks` blocks carry one extra coordinate.
    pub fn uniform(total_dim: usize, num_blocks: usize) -> Result<Self> {
        if total_dim == 0 || num_blocks == 0 {
            return invalid("partition dimension and block count must be positive");
        }
        if num_blocks > total_dim {
            return invalid(format!(
                "cannot split {total_dim} coordinates into {num_blocks} non-empty blocks"
            ));
        }
        let base = total_dim / num_blocks;
        let extra = total_dim % num_blocks;
        let sizes = (0..num_blocks)
            .map(|i| if i < extra { base + 1 } else { base })
            .collect();
        Self::from_sizes(sizes)
    }

    /// Single block covering every coordinate.
    pub fn single(total_dim: usize) -> Result<Self> {
        Self::uniform(total_dim, 1)
    }

    pub fn from_sizes(block_sizes: Vec<usize>) -> Result<Self> {
        if block_sizes.is_empty() {
            return invalid("a partition needs at least one block");
        }
        if block_sizes.contains(&0) {
            return invalid("block sizes must be positive");
        }
        let mut block_offsets = Vec::with_capacity(block_sizes.len());
        let mut acc = 0;
        for &s in &block_sizes {
            block_offsets.push(acc);
            acc += s;
        }
        Ok(Self {
            total_dim: acc,
            block_sizes,
            block_offsets,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn block_offsets(&self) -> &[usize] {
        &self.block_offsets
    }

    pub fn block_size(&self, block: usize) -> usize {
        self.block_sizes[block]
    }

    /// Coordinate range `[offset_i, offset_i + d_i)` of a block.
    pub fn range(&self, block: usize) -> Result<Range<usize>> {
        if block >= self.num_blocks() {
            return invalid(format!(
                "block index {block} out of range for {} blocks",
                self.num_blocks()
            ));
        }
        let start = self.block_offsets[block];
        Ok(start..start + self.block_sizes[block])
    }

    /// Block owning coordinate `coord`.
    pub fn block_of(&self, coord: usize) -> Option<usize> {
        if coord >= self.total_dim {
            return None;
        }
        match self.block_offsets.binary_search(&coord) {
            Ok(i) => Some(i),
            Err(i) => Some(i - 1),
        }
    }
}

/// The decision vector together with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    values: Vec<f64>,
    partition: BlockPartition,
}

impl Iterate {
    pub fn new(values: Vec<f64>, partition: BlockPartition) -> Result<Self> {
        if values.len() != partition.total_dim() {
            return invalid(format!(
                "iterate has {} values but the partition covers {}",
                values.len(),
                partition.total_dim()
            ));
        }
        Ok(Self { values, partition })
    }

    pub fn zeros(partition: BlockPartition) -> Self {
        Self {
            values: vec![0.0; partition.total_dim()],
            partition,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn block(&self, block: usize) -> Result<&[f64]> {
        let r = self.partition.range(block)?;
        Ok(&self.values[r])
    }

    pub fn block_mut(&mut self, block: usize) -> Result<&mut [f64]> {
        let r = self.partition.range(block)?;
        Ok(&mut self.values[r])
    }
}

/// Cost categories of the per-iteration operation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlopCategory {
    Gradient,
    Prox,
    Cost,
}

/// Symbolic floating-point operation counts, charged per operation with the
/// linear-model formulas below rather than measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub gradient_flops: u64,
    pub prox_flops: u64,
    pub cost_flops: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, category: FlopCategory, amount: u64) {
        let slot = match category {
            FlopCategory::Gradient => &mut self.gradient_flops,
            FlopCategory::Prox => &mut self.prox_flops,
            FlopCategory::Cost => &mut self.cost_flops,
        };
        *slot += amount;
    }

    pub fn total(&self) -> u64 {
        self.gradient_flops + self.prox_flops + self.cost_flops
    }
}

/// Flops of `A_Bᵀ L'(Ax)` for a column subset of width `width`: `2·n·width + n`.
pub fn gradient_cost(n: usize, width: usize) -> u64 {
    (2 * n * width + n) as u64
}

/// Flops of a separable prox over `width` coordinates.
pub fn prox_cost(width: usize) -> u64 {
    width as u64
}

/// Flops of re-evaluating the objective after changing `width` coordinates:
/// `n·width` for the prediction update plus `n` pointwise losses.
pub fn objective_cost(n: usize, width: usize) -> u64 {
    (n * width + n) as u64
}

/// One row of convergence telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cumulative_flops: u64,
    pub objective: f64,
    /// Exact optimality violation, `None` when not evaluated at this record.
    pub violation: Option<f64>,
    pub wall_time_s: f64,
}

pub const TRACE_HEADER: &str = "iteration,flops,objective,violation,wall_time_s";

impl TraceRecord {
    /// CSV row without trailing newline. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn to_csv_row(&self) -> String {
        let mut s = String::new();
        write!(s, "{},{},{},", self.iteration, self.cumulative_flops, self.objective).unwrap();
        if let Some(v) = self.violation {
            write!(s, "{v}").unwrap();
        }
        write!(s, ",{}", self.wall_time_s).unwrap();
        s
    }

    pub fn parse_csv_row(row: &str, line: usize) -> Result<Self> {
        let bad = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = row.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        Ok(Self {
            iteration: fields[0].parse().map_err(|e| bad(format!("iteration: {e}")))?,
            cumulative_flops: fields[1].parse().map_err(|e| bad(format!("flops: {e}")))?,
            objective: float(fields[2])?,
            violation: if fields[3].is_empty() { None } else { Some(float(fields[3])?) },
            wall_time_s: float(fields[4])?,
        })
    }
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    match header {
        Some(h) if h.trim_end() == TRACE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing trace header {TRACE_HEADER:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(TraceRecord::parse_csv_row(&line, i + 2)?);
    }
    Ok(out)
}
