//! Compressed sparse column storage for the design matrix `A`.
//!
//! Column-major layout makes `A_iᵀ v` and `A_i δ` touch only the columns of
//! block `i`.

use std::ops::Range;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from raw CSC arrays. Row indices inside a column must be
    /// strictly increasing; stored values must be finite.
    pub fn new(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != ncols + 1 || col_ptr[0] != 0 {
            return invalid("column pointer array has the wrong shape");
        }
        if row_idx.len() != values.len() || *col_ptr.last().unwrap() != values.len() {
            return invalid("row index and value arrays disagree with column pointers");
        }
        for j in 0..ncols {
            if col_ptr[j] > col_ptr[j + 1] {
                return invalid("column pointers must be non-decreasing");
            }
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) || rows.iter().any(|&r| r >= nrows) {
                return invalid(format!("column {j} has unsorted or out-of-range rows"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("design matrix entries must be finite");
        }
        Ok(Self { nrows, ncols, col_ptr, row_idx, values })
    }

    /// Builds from a dense row-major buffer, dropping exact zeros.
    pub fn from_dense_row_major(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != nrows * ncols {
            return invalid("dense buffer length does not match the shape");
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for j in 0..ncols {
            for i in 0..nrows {
                let v = data[i * ncols + j];
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(values.len());
        }
        Self::new(nrows, ncols, col_ptr, row_idx, values)
    }

    /// Builds from sparse rows of `(column, value)` pairs. Duplicate columns
    /// within a row are rejected; zeros are dropped.
    pub fn from_sparse_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let nrows = rows.len();
        let mut counts = vec![0usize; ncols];
        for row in rows {
            for &(j, v) in row {
                if j >= ncols {
                    return invalid(format!("column {j} out of range for {ncols} columns"));
                }
                if v != 0.0 {
                    counts[j] += 1;
                }
            }
        }
        let mut col_ptr = vec![0usize; ncols + 1];
        for j in 0..ncols {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let nnz = col_ptr[ncols];
        let mut next = col_ptr[..ncols].to_vec();
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                if v == 0.0 {
                    continue;
                }
                let k = next[j];
                if k > col_ptr[j] && row_idx[k - 1] == i {
                    return invalid(format!("duplicate column {j} in row {i}"));
                }
                row_idx[k] = i;
                values[k] = v;
                next[j] += 1;
            }
        }
        Self::new(nrows, ncols, col_ptr, row_idx, values)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `j`.
    #[inline]
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.column(j);
        match rows.binary_search(&i) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `out = A x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(j);
            for (&i, &a) in rows.iter().zip(vals) {
                out[i] += a * xj;
            }
        }
    }

    /// `out[k] = A_{:, cols.start + k}ᵀ w` for the given column range.
    pub fn transpose_mul_cols(&self, cols: Range<usize>, w: &[f64], out: &mut [f64]) {
        assert_eq!(w.len(), self.nrows);
        assert_eq!(out.len(), cols.len());
        for (o, j) in out.iter_mut().zip(cols) {
            let (rows, vals) = self.column(j);
            *o = rows.iter().zip(vals).map(|(&i, &a)| a * w[i]).sum();
        }
    }

    /// `acc += A_{:, cols} δ`, skipping zero entries of `δ`.
    pub fn add_cols_mul(&self, cols: Range<usize>, delta: &[f64], acc: &mut [f64]) {
        assert_eq!(delta.len(), cols.len());
        for (&dj, j) in delta.iter().zip(cols) {
            if dj == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(j);
            for (&i, &a) in rows.iter().zip(vals) {
                acc[i] += a * dj;
            }
        }
    }

    /// Row-major view of the stored entries, `(column, value)` per row.
    pub fn to_sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for j in 0..self.ncols {
            let (r, v) = self.column(j);
            for (&i, &a) in r.iter().zip(v) {
                rows[i].push((j, a));
            }
        }
        rows
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let all = self.to_sparse_rows();
        let picked: Vec<_> = rows
            .iter()
            .map(|&i| all.get(i).cloned().ok_or(()))
            .collect::<std::result::Result<_, _>>()
            .or_else(|_| invalid("row selection out of range"))?;
        Self::from_sparse_rows(self.ncols, &picked)
    }
}
