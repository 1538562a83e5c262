use crate::error::{Error, Result};

use super::DenseMatrix;

/// Compressed sparse row matrix with fixed (non-differentiable) weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, weight)` lists. Columns are kept in the
    /// given order, which fixes the summation order of [`CsrMatrix::spmm`].
    pub fn from_row_lists(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(c, w) in row {
                debug_assert!(c < cols);
                indices.push(c);
                values.push(w);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `(column, weight)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, w)| w)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, w) in self.row(r) {
                m.set(r, c, m.get(r, c) + w);
            }
        }
        m
    }

    /// Writes row `r` of `self * x` into `out`.
    pub fn spmm_row_into(&self, r: usize, x: &DenseMatrix, out: &mut [f64]) {
        out.fill(0.0);
        for (c, w) in self.row(r) {
            for (o, &v) in out.iter_mut().zip(x.row(c)) {
                *o += w * v;
            }
        }
    }

    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != x.rows() {
            return Err(Error::Dimension {
                op: "spmm",
                left: (self.rows, self.cols),
                right: x.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, x.cols());
        for r in 0..self.rows {
            self.spmm_row_into(r, x, out.row_mut(r));
        }
        Ok(out)
    }

    /// `selfᵀ * g`, used to propagate gradients through [`CsrMatrix::spmm`].
    pub fn spmm_transpose(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != g.rows() {
            return Err(Error::Dimension {
                op: "spmm_transpose",
                left: (self.rows, self.cols),
                right: g.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.cols, g.cols());
        for r in 0..self.rows {
            let g_row = g.row(r).to_vec();
            for (c, w) in self.row(r) {
                for (o, &v) in out.row_mut(c).iter_mut().zip(&g_row) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}
