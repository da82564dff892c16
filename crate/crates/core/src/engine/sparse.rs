use std::sync::Arc;

use rayon::prelude::*;

use super::{Real, Tensor};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut per_row: Vec<Vec<(usize, T)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    let slot = values.len() - 1;
                    values[slot] = values[slot] + v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
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
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    /// Dense product `self . x` for `x` of shape `[cols, m]`.
    pub fn matmul_dense(&self, x: &Tensor<T>) -> Tensor<T> {
        let m = x.shape()[1];
        let xd = x.data();
        let mut out = vec![T::zero(); self.rows * m];
        out.par_chunks_mut(m.max(1)).enumerate().for_each(|(r, row)| {
            for (c, v) in self.row_entries(r) {
                let src = &xd[c * m..(c + 1) * m];
                for (o, &s) in row.iter_mut().zip(src) {
                    *o = *o + v * s;
                }
            }
        });
        Tensor::from_raw(vec![self.rows, m], out)
    }
}

/// A constant sparse operator together with its transpose, so the adjoint
/// of a sparse product is another sparse product.
#[derive(Clone, Debug)]
pub struct SparseOp<T> {
    forward: Arc<Csr<T>>,
    adjoint: Arc<Csr<T>>,
}

impl<T: Real> SparseOp<T> {
    pub fn new(m: Csr<T>) -> Self {
        let adjoint = Arc::new(m.transpose());
        Self {
            forward: Arc::new(m),
            adjoint,
        }
    }

    pub fn matrix(&self) -> &Csr<T> {
        &self.forward
    }

    pub fn rows(&self) -> usize {
        self.forward.rows()
    }

    pub fn cols(&self) -> usize {
        self.forward.cols()
    }

    pub fn transposed(&self) -> Self {
        Self {
            forward: Arc::clone(&self.adjoint),
            adjoint: Arc::clone(&self.forward),
        }
    }
}
