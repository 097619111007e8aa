//! Compressed sparse row storage for the assembled operators and a sparse
//! Cholesky factorization backed by `faer`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::LltRegularization;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Square sparse matrix in CSR layout with sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions. Duplicates are summed in
/// insertion order, so assembly is deterministic for a fixed element order.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn extend_from(&mut self, other: TripletBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable sort keeps insertion order among duplicates
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n: self.n,
            indptr,
            indices,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Keeps entries with `|value| > 0` of a dense matrix.
    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        assert_eq!(dense.nrows(), dense.ncols());
        let n = dense.nrows();
        let mut b = TripletBuilder::new(n);
        for i in 0..n {
            for j in 0..n {
                let v = dense[(i, j)];
                if v != 0.0 {
                    b.push(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn mul_dvec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.mul_vec(x.as_slice()))
    }

    /// `self * x` for a dense block, column by column.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let cols: Vec<Vec<f64>> = (0..x.ncols())
            .into_par_iter()
            .map(|j| self.mul_vec(x.column(j).as_slice()))
            .collect();
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for (j, c) in cols.into_iter().enumerate() {
            out.column_mut(j).copy_from_slice(&c);
        }
        out
    }

    /// `xᵀ A y`
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// `max |A - Aᵀ|`
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `self + alpha * diag(d)`, keeping the pattern (every row already
    /// stores its diagonal after FEM assembly).
    pub fn add_diagonal(&self, alpha: f64, d: &[f64]) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.n, self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.push(i, j, v);
            }
            b.push(i, i, alpha * d[i]);
        }
        b.build()
    }

    /// `a * self + b * other`; both operands must be square and equally sized.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = TripletBuilder::with_capacity(self.n, self.nnz() + other.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push(i, j, a * v);
            }
            for (j, v) in other.row(i) {
                t.push(i, j, b * v);
            }
        }
        t.build()
    }

    /// Replaces the rows and columns of `dofs` by those of the identity.
    pub fn with_identity_rows(&self, dofs: &[bool]) -> CsrMatrix {
        assert_eq!(dofs.len(), self.n);
        let mut b = TripletBuilder::with_capacity(self.n, self.nnz());
        for i in 0..self.n {
            if dofs[i] {
                b.push(i, i, 1.0);
                continue;
            }
            for (j, v) in self.row(i) {
                if !dofs[j] {
                    b.push(i, j, v);
                }
            }
        }
        b.build()
    }

    /// Dense `Bᵀ A B`.
    pub fn project(&self, basis: &DMatrix<f64>) -> DMatrix<f64> {
        let ab = self.mul_mat(basis);
        let mut r = basis.transpose() * ab;
        // symmetrize the rounding noise
        let rt = r.transpose();
        r += rt;
        r *= 0.5;
        r
    }
}

/// Sparse `LLᵀ` factorization of a symmetric positive definite [`CsrMatrix`].
///
/// Runs sequentially so repeated factorizations and solves are bit-identical.
pub struct SparseCholesky {
    n: usize,
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl std::fmt::Debug for SparseCholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseCholesky")
            .field("n", &self.n)
            .field("factor_nnz", &self.values.len())
            .finish()
    }
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        // A symmetric matrix in CSR is its own CSC transpose.
        let symbolic_a =
            SymbolicSparseColMatRef::new_checked(n, n, &a.indptr, None, &a.indices);
        let mat = SparseColMatRef::new(symbolic_a, &a.values);
        let symbolic = factorize_symbolic_cholesky(
            symbolic_a,
            Side::Lower,
            Default::default(),
            Default::default(),
        )
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let mut values = vec![0.0f64; symbolic.len_val()];
        let par = Par::Seq;
        let mut mem =
            MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(par, Default::default()));
        symbolic
            .factorize_numeric_llt::<f64>(
                &mut values,
                mat,
                Side::Lower,
                LltRegularization {
                    dynamic_regularization_delta: 0.0,
                    dynamic_regularization_epsilon: 0.0,
                },
                par,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite factor entries".into()));
        }
        Ok(Self {
            n,
            symbolic,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    /// Solves in place for a column-major block of right-hand sides.
    pub fn solve_in_place(&self, data: &mut [f64], ncols: usize) {
        assert_eq!(data.len(), self.n * ncols);
        let par = Par::Seq;
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(ncols, par));
        let rhs = MatMut::from_column_major_slice_mut(data, self.n, ncols);
        LltRef::<'_, usize, f64>::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            rhs,
            par,
            MemStack::new(&mut mem),
        );
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice(), 1);
        x
    }

    /// Solves every column independently; columns are distributed over the
    /// rayon pool, which keeps results independent of thread count.
    pub fn solve_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n);
        let mut out = b.clone();
        out.as_mut_slice()
            .par_chunks_mut(self.n.max(1))
            .for_each(|col| self.solve_in_place(col, 1));
        out
    }
}
