use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::fem::Mesh;
use crate::Real;

/// Symmetric sparse matrix in compressed-row form with the full pattern
/// (both triangles) stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymOperator<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseSymOperator<T> {
    /// Zero matrix carrying the node-adjacency pattern of `mesh`.
    pub fn with_mesh_pattern(mesh: &Mesh) -> Self {
        let n = mesh.num_nodes();
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for el in mesh.elements() {
            for &a in el {
                for &b in el {
                    adj[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![T::zero(); nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    /// Entry `(i, j)`; zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |k| self.values[k])
    }

    /// Adds `v` to `(i, j)`. Panics if the entry is outside the pattern.
    pub(crate) fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self.slot(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    /// Iterates `(row, col, value)` over stored entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.n, "dimension mismatch in sparse product");
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|i| {
                let mut s = T::zero();
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[k] * x[self.col_idx[k]];
                }
                s
            }),
        )
    }

    /// `x^T A y`.
    pub fn inner(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        x.dot(&self.mul_vec(y))
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &DVector<T>) -> T {
        self.inner(x, x)
    }

    pub fn diagonal(&self) -> DVector<T> {
        DVector::from_iterator(self.n, (0..self.n).map(|i| self.get(i, i)))
    }

    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + other` for operators sharing one pattern.
    pub fn add_same_pattern(&self, other: &Self) -> Result<Self> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return invalid("operators do not share a sparsity pattern");
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    /// True when every stored `(i, j, v)` has a bitwise-equal `(j, i, v)`.
    pub fn is_exactly_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.slot(j, i).is_some_and(|k| self.values[k] == v))
    }

    pub fn total(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &b| a + b)
    }
}
