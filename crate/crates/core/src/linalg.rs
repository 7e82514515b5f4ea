//! Sparse symmetric assembly and factorisations behind a small solve trait.

use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::solvers::Solve;
use faer::{MatMut, Side};
use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};

/// Anything that applies `A⁻¹` to vectors.
pub trait LinearSolve: Sync {
    fn dim(&self) -> usize;

    fn solve_in_place(&self, rhs: &mut [f64]);

    /// Solves for every column of `rhs` (column-major, `dim()` rows).
    fn solve_columns(&self, rhs: &mut DMatrix<f64>) {
        let n = self.dim();
        for mut c in rhs.column_iter_mut() {
            self.solve_in_place(&mut c.as_mut_slice()[..n]);
        }
    }
}

/// Lower-triangle triplets of a symmetric matrix.
#[derive(Debug, Clone, Default)]
pub struct SymmetricBuilder {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        SymmetricBuilder { n, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` at `(r, c)`; entries above the diagonal are dropped, so
    /// callers add full symmetric blocks.
    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        if r >= c {
            self.entries.push(Triplet::new(r, c, v));
        }
    }

    pub fn add_block(&mut self, r: usize, c: usize, block: &Matrix3<f64>) {
        for i in 0..3 {
            for j in 0..3 {
                self.add(r + i, c + j, block[(i, j)]);
            }
        }
    }

    pub fn build(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| Error::Argument(format!("sparse assembly failed: {e:?}")))
    }

    /// Dense copy including the mirrored upper triangle.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for t in &self.entries {
            m[(t.row, t.col)] += t.val;
            if t.row != t.col {
                m[(t.col, t.row)] += t.val;
            }
        }
        m
    }

    /// `y = A x` using the stored lower triangle.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
            if t.row != t.col {
                y[t.col] += t.val * x[t.row];
            }
        }
        y
    }
}

/// Symbolic analysis kept between factorisations with an identical pattern.
#[derive(Default)]
pub struct SymbolicCache {
    pattern: Option<(Vec<usize>, Vec<usize>)>,
    symbolic: Option<SymbolicLlt<usize>>,
}

impl SymbolicCache {
    fn get(&mut self, a: &SparseColMat<usize, f64>) -> Result<SymbolicLlt<usize>> {
        let s = a.symbolic();
        let same = matches!(&self.pattern, Some((cp, ri)) if cp.as_slice() == s.col_ptr() && ri.as_slice() == s.row_idx());
        if !same || self.symbolic.is_none() {
            let sym = SymbolicLlt::try_new(s, Side::Lower).map_err(|e| Error::Singular(format!("symbolic analysis failed: {e:?}")))?;
            self.pattern = Some((s.col_ptr().to_vec(), s.row_idx().to_vec()));
            self.symbolic = Some(sym);
        }
        Ok(self.symbolic.clone().unwrap())
    }
}

/// Sparse Cholesky factor of an SPD matrix.
pub struct SparseCholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn factor(builder: &SymmetricBuilder, cache: &mut SymbolicCache) -> Result<Self> {
        let a = builder.build()?;
        let sym = cache.get(&a)?;
        let llt = Llt::try_new_with_symbolic(sym, a.as_ref(), Side::Lower)
            .map_err(|e| Error::Singular(format!("matrix is not positive definite: {e:?}")))?;
        Ok(SparseCholesky { n: builder.dim(), llt })
    }
}

impl LinearSolve for SparseCholesky {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
    }

    fn solve_columns(&self, rhs: &mut DMatrix<f64>) {
        let k = rhs.ncols();
        if k > 0 {
            self.llt
                .solve_in_place(MatMut::from_column_major_slice_mut(rhs.as_mut_slice(), self.n, k));
        }
    }
}

/// Dense Cholesky, for small systems and tests.
pub struct DenseCholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>);

impl DenseCholesky {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        nalgebra::Cholesky::new(a)
            .map(DenseCholesky)
            .ok_or_else(|| Error::Singular("dense matrix is not positive definite".into()))
    }
}

impl LinearSolve for DenseCholesky {
    fn dim(&self) -> usize {
        self.0.l_dirty().nrows()
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut v = nalgebra::DVectorViewMut::from_slice(rhs, self.dim());
        self.0.solve_mut(&mut v);
    }
}

/// Independent diagonal blocks at consecutive offsets.
pub struct BlockDiagonal<'a> {
    blocks: Vec<&'a dyn LinearSolve>,
}

impl<'a> BlockDiagonal<'a> {
    pub fn new(blocks: Vec<&'a dyn LinearSolve>) -> Self {
        BlockDiagonal { blocks }
    }
}

impl LinearSolve for BlockDiagonal<'_> {
    fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut rest = rhs;
        for b in &self.blocks {
            let (head, tail) = rest.split_at_mut(b.dim());
            b.solve_in_place(head);
            rest = tail;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_matches_dense() {
        let mut b = SymmetricBuilder::new(3);
        let a = Matrix3::new(4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0);
        b.add_block(0, 0, &a);
        b.add(1, 1, 1.0);
        let dense = b.to_dense();
        let f = SparseCholesky::factor(&b, &mut SymbolicCache::default()).unwrap();
        let mut x = vec![1.0, -2.0, 0.5];
        f.solve_in_place(&mut x);
        let r = &dense * nalgebra::DVector::from_column_slice(&x);
        assert!((&r - nalgebra::DVector::from_column_slice(&[1.0, -2.0, 0.5])).norm() < 1e-12);
        let y = b.mul_vec(&x);
        assert!(y.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn indefinite_is_singular_error() {
        let mut b = SymmetricBuilder::new(2);
        b.add(0, 0, -1.0);
        b.add(1, 1, 1.0);
        assert!(matches!(SparseCholesky::factor(&b, &mut SymbolicCache::default()), Err(Error::Singular(_))));
    }
}
