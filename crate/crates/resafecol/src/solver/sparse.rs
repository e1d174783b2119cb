//! Row-oriented sparse matrix used for constraint Jacobians.

use nalgebra::{DMatrix, DVector};

/// A sparse matrix stored as rows of `(column, value)` pairs.
#[derive(Debug, Clone, Default)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::with_capacity(nrows),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Append a row; entries need not be sorted but columns must be unique.
    pub fn push_row(&mut self, entries: Vec<(usize, f64)>) {
        debug_assert!(entries.iter().all(|&(c, _)| c < self.ncols));
        self.rows.push(entries);
    }

    /// Append all rows of another matrix with the same column count.
    pub fn append(&mut self, other: SparseRows) {
        debug_assert_eq!(self.ncols, other.ncols);
        self.rows.extend(other.rows);
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows());
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(c, v) in row {
                acc += v * x[c];
            }
            out[i] = acc;
        }
        out
    }

    /// `A^T y`.
    pub fn tr_mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for &(c, v) in row {
                out[c] += v * yi;
            }
        }
        out
    }

    /// `out += A^T diag(weights) A`, exploiting row sparsity.
    pub fn add_weighted_gram(&self, weights: &DVector<f64>, out: &mut DMatrix<f64>) {
        debug_assert_eq!(out.nrows(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            for &(c1, v1) in row {
                for &(c2, v2) in row {
                    out[(c1, c2)] += w * v1 * v2;
                }
            }
        }
    }

    /// Largest column spread of any row; the Gram matrix bandwidth.
    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| {
                let (mut lo, mut hi) = (usize::MAX, 0);
                for &(c, _) in r.iter() {
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[(i, c)] += v;
            }
        }
        out
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Self::with_capacity(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let row: Vec<(usize, f64)> = (0..m.ncols())
                .filter(|&j| m[(i, j)] != 0.0)
                .map(|j| (j, m[(i, j)]))
                .collect();
            out.push_row(row);
        }
        out
    }
}
