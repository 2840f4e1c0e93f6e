//! Complex sparse matrices, direct factorizations and spectral-norm estimation.
//!
//! Storage is compressed-row. Factorizations are computed by `faer`'s supernodal
//! sparse LU (partial pivoting, COLAMD ordering) or sparse Cholesky (AMD ordering)
//! and are immutable once built, so one handle can serve any number of solves.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::linalg::{LltError, LuError};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Mat, Side};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square or rectangular complex matrix in compressed-row form.
///
/// Column indices are strictly increasing within each row; duplicates are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<Complex64>,
}

impl ComplexSparseMatrix {
    /// Builds from raw CSR arrays, validating the structure.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return Err(Error::Geometry(
                "row offsets must have n_rows + 1 entries starting at 0".into(),
            ));
        }
        if row_offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Geometry("row offsets must be nondecreasing".into()));
        }
        let nnz = *row_offsets.last().unwrap();
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(Error::Geometry(format!(
                "last row offset {nnz} does not match {} indices / {} values",
                col_indices.len(),
                values.len()
            )));
        }
        for r in 0..n_rows {
            let cols = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            if cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::Geometry(format!("column index out of bounds in row {r}")));
            }
            if cols.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Geometry(format!(
                    "column indices of row {r} are not strictly increasing"
                )));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; repeated positions are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, Complex64)]) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Geometry(format!(
                    "triplet ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for r in 0..n_rows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![ZERO; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut row: Vec<(usize, Complex64)> = Vec::new();
        for r in 0..n_rows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            for &(c, v) in &row {
                if col_indices.len() > row_offsets[r] && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Stored entries of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Entry `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => ZERO,
        }
    }

    /// Position in the value array of entry `(r, c)`, if stored.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        Ok((0..self.n_rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                got: x.len(),
            });
        }
        let mut y = vec![ZERO; self.n_cols];
        for (r, xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v.conj() * xr;
            }
        }
        Ok(y)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        self.transpose_with(|v| v.conj())
    }

    pub fn transpose(&self) -> Self {
        self.transpose_with(|v| v)
    }

    fn transpose_with(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![ZERO; self.nnz()];
        // rows are visited in increasing order, so each output row comes out sorted
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                col_indices[next[c]] = r;
                values[next[c]] = f(v);
                next[c] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: other.n_rows,
            });
        }
        let n = other.n_cols;
        let mut acc = vec![ZERO; n];
        let mut marker = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.n_rows {
            touched.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = ZERO;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_indices.push(c);
                values.push(acc[c]);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_cols: n,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Adds `diag[i]` at `(rows[i], rows[i])`; every position must already be stored.
    pub fn add_to_diagonal(&mut self, rows: &[usize], diag: &[Complex64]) -> Result<()> {
        if rows.len() != diag.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: diag.len(),
            });
        }
        for (&r, &d) in rows.iter().zip(diag) {
            let p = self
                .position(r, r)
                .ok_or_else(|| Error::Geometry(format!("diagonal entry {r} is not stored")))?;
            self.values[p] += d;
        }
        Ok(())
    }

    /// Dense row-major copy, for small matrices and tests.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let mut d = vec![ZERO; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                d[r * self.n_cols + c] = v;
            }
        }
        d
    }

    /// Largest `|A_ij - A_ji|` over stored entries (plain transpose, no conjugation).
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n_rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .map(|(r, c, v)| {
                if c < self.n_rows && r < self.n_cols {
                    (v - self.get(c, r)).norm()
                } else {
                    v.norm()
                }
            })
            .fold(0.0, f64::max)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, Complex64>> {
        // CSR of A is CSC of A^T; transpose to get CSC of A.
        let t = self.transpose();
        let symbolic = SymbolicSparseColMat::new_checked(self.n_rows, self.n_cols, t.row_offsets, None, t.col_indices);
        Ok(SparseColMat::new(symbolic, t.values))
    }
}

/// Which factorization a [`Factorization`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// General LU with partial pivoting.
    Lu,
    /// Cholesky `L L^H` for Hermitian positive definite matrices.
    Cholesky,
}

enum Inner {
    Lu(Box<Lu<usize, Complex64>>),
    Llt(Llt<usize, Complex64>),
}

/// Factorization handle bound to one matrix; read-only, shareable across threads.
pub struct Factorization {
    n: usize,
    inner: Inner,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("n", &self.n)
            .field("kind", &self.kind())
            .finish()
    }
}

/// Factorizes a square matrix with sparse LU.
pub fn factorize(a: &ComplexSparseMatrix) -> Result<Factorization> {
    Factorizer::default().lu(a)
}

/// Factorizes a Hermitian positive definite matrix with sparse Cholesky (lower triangle read).
pub fn factorize_hermitian(a: &ComplexSparseMatrix) -> Result<Factorization> {
    Factorizer::default().cholesky(a)
}

/// Builds factorizations, reusing the symbolic analysis while the sparsity pattern is unchanged.
#[derive(Default)]
pub struct Factorizer {
    lu: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
    llt: Option<(Vec<usize>, Vec<usize>, SymbolicLlt<usize>)>,
}

impl Factorizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lu(&mut self, a: &ComplexSparseMatrix) -> Result<Factorization> {
        check_square(a)?;
        let mat = a.to_faer()?;
        let symbolic = match &self.lu {
            Some((offsets, cols, s)) if offsets == &a.row_offsets && cols == &a.col_indices => s.clone(),
            _ => {
                let s = SymbolicLu::try_new(mat.symbolic())
                    .map_err(|e| Error::Numerical(format!("symbolic LU analysis failed: {e:?}")))?;
                self.lu = Some((a.row_offsets.clone(), a.col_indices.clone(), s.clone()));
                s
            }
        };
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref()).map_err(|e| match e {
            LuError::SymbolicSingular { index } => Error::Singular { row: index },
            LuError::Generic(g) => Error::Numerical(format!("LU failed: {g:?}")),
        })?;
        let f = Factorization {
            n: a.n_rows,
            inner: Inner::Lu(Box::new(lu)),
        };
        f.probe()?;
        Ok(f)
    }

    pub fn cholesky(&mut self, a: &ComplexSparseMatrix) -> Result<Factorization> {
        check_square(a)?;
        let mat = a.to_faer()?;
        let symbolic = match &self.llt {
            Some((offsets, cols, s)) if offsets == &a.row_offsets && cols == &a.col_indices => s.clone(),
            _ => {
                let s = SymbolicLlt::try_new(mat.symbolic(), Side::Lower)
                    .map_err(|e| Error::Numerical(format!("symbolic Cholesky analysis failed: {e:?}")))?;
                self.llt = Some((a.row_offsets.clone(), a.col_indices.clone(), s.clone()));
                s
            }
        };
        let llt = Llt::try_new_with_symbolic(symbolic, mat.as_ref(), Side::Lower).map_err(|e| match e {
            LltError::Numeric(n) => Error::Numerical(format!("matrix is not positive definite ({n:?})")),
            LltError::Generic(g) => Error::Numerical(format!("Cholesky failed: {g:?}")),
        })?;
        let f = Factorization {
            n: a.n_rows,
            inner: Inner::Llt(llt),
        };
        f.probe()?;
        Ok(f)
    }
}

fn check_square(a: &ComplexSparseMatrix) -> Result<()> {
    if a.n_rows != a.n_cols {
        return Err(Error::DimensionMismatch {
            expected: a.n_rows,
            got: a.n_cols,
        });
    }
    Ok(())
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FactorKind {
        match self.inner {
            Inner::Lu(_) => FactorKind::Lu,
            Inner::Llt(_) => FactorKind::Cholesky,
        }
    }

    // A numerically singular pivot does not stop the factorization; it shows up as
    // non-finite entries in the solution instead.
    fn probe(&self) -> Result<()> {
        let ones = vec![Complex64::new(1.0, 0.0); self.n];
        let x = self.solve_unchecked(&[ones]);
        if let Some(row) = x[0].iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Singular { row });
        }
        Ok(())
    }

    /// Solves `A x = rhs` for one right-hand side.
    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = self.solve_block(std::slice::from_ref(&rhs.to_vec()))?;
        Ok(out.pop().unwrap())
    }

    /// Solves `A X = B` for a block of columns at once.
    pub fn solve_block(&self, columns: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        for c in columns {
            if c.len() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    got: c.len(),
                });
            }
        }
        let x = self.solve_unchecked(columns);
        if x.iter().flatten().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Numerical("solve produced non-finite values".into()));
        }
        Ok(x)
    }

    fn solve_unchecked(&self, columns: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        if columns.is_empty() {
            return Vec::new();
        }
        let mut b = Mat::<Complex64>::from_fn(self.n, columns.len(), |i, j| columns[j][i]);
        match &self.inner {
            Inner::Lu(lu) => lu.solve_in_place(b.as_mut()),
            Inner::Llt(llt) => llt.solve_in_place(b.as_mut()),
        }
        (0..columns.len())
            .map(|j| (0..self.n).map(|i| b[(i, j)]).collect())
            .collect()
    }
}

/// Scalars supported by [`spectral_norm`].
pub trait Scalar: Copy + Send + Sync + std::fmt::Debug + 'static {
    fn abs2(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn random(rng: &mut ChaCha8Rng) -> Self;
}

impl Scalar for f64 {
    fn abs2(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn random(rng: &mut ChaCha8Rng) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for Complex64 {
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    }
}

/// Power-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 500,
            seed: 0x5eed,
        }
    }
}

/// Result of [`spectral_norm`]; `converged == false` flags the best estimate after `max_iter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn norm<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs2()).sum::<f64>().sqrt()
}

/// Largest singular value of a linear map by power iteration on its normal map.
///
/// `adjoint` applies the adjoint map; pass `None` for self-adjoint maps, in which
/// case `apply` is used twice. The start vector is drawn from a seeded generator.
pub fn spectral_norm<T, F, G>(
    mut apply: F,
    mut adjoint: Option<G>,
    n: usize,
    opts: PowerOptions,
) -> Result<NormEstimate>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vec<T>>,
    G: FnMut(&[T]) -> Result<Vec<T>>,
{
    if n == 0 {
        return Err(Error::Geometry("spectral norm of a zero-dimensional map".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<T> = (0..n).map(|_| T::random(&mut rng)).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v = v.scale(1.0 / nx));

    let mut sigma = 0.0;
    for it in 1..=opts.max_iter {
        let y = apply(&x)?;
        let sigma_new = norm(&y);
        if sigma_new == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            });
        }
        if !sigma_new.is_finite() {
            return Err(Error::Numerical("power iteration produced a non-finite norm".into()));
        }
        let z = match adjoint.as_mut() {
            Some(adj) => adj(&y)?,
            None => apply(&y)?,
        };
        let nz = norm(&z);
        if nz == 0.0 {
            return Ok(NormEstimate {
                value: sigma_new,
                converged: true,
                iterations: it,
            });
        }
        x = z.into_iter().map(|v| v.scale(1.0 / nz)).collect();
        let done = (sigma_new - sigma).abs() <= opts.tol * sigma_new;
        sigma = sigma_new;
        if done {
            return Ok(NormEstimate {
                value: sigma,
                converged: true,
                iterations: it,
            });
        }
    }
    Ok(NormEstimate {
        value: sigma,
        converged: false,
        iterations: opts.max_iter,
    })
}

/// Convenience wrapper for self-adjoint maps.
pub fn spectral_norm_self_adjoint<T, F>(apply: F, n: usize, opts: PowerOptions) -> Result<NormEstimate>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vec<T>>,
{
    spectral_norm::<T, F, F>(apply, None, n, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_sparse(n: usize, seed: u64) -> ComplexSparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, c(8.0 + rng.gen::<f64>(), rng.gen::<f64>())));
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                t.push((i, j, c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)));
            }
        }
        ComplexSparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect()
    }

    fn rel_residual(a: &ComplexSparseMatrix, x: &[Complex64], b: &[Complex64]) -> f64 {
        let ax = a.mul_vec(x).unwrap();
        let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        r / b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn csr_validation() {
        assert!(ComplexSparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 0], vec![ZERO; 2]).is_ok());
        assert!(ComplexSparseMatrix::from_csr(2, 2, vec![0, 2, 2], vec![1, 0], vec![ZERO; 2]).is_err());
        assert!(ComplexSparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 2], vec![ZERO; 2]).is_err());
        assert!(ComplexSparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![ZERO; 2]).is_err());
        let m = ComplexSparseMatrix::from_triplets(2, 2, &[(0, 1, c(1.0, 0.0)), (0, 1, c(2.0, 0.0))]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), c(3.0, 0.0));
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let f = factorize(&ComplexSparseMatrix::identity(4)).unwrap();
        let b = random_vec(4, 1);
        assert_eq!(f.solve(&b).unwrap(), b);
    }

    #[test]
    fn diagonal_example() {
        let a = ComplexSparseMatrix::from_triplets(2, 2, &[(0, 0, c(2.0, 0.0)), (1, 1, c(0.0, 4.0))]).unwrap();
        let x = factorize(&a).unwrap().solve(&[c(2.0, 0.0), c(0.0, 4.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn random_sparse_residual() {
        let a = random_sparse(50, 7);
        let f = factorize(&a).unwrap();
        let b = random_vec(50, 8);
        let x = f.solve(&b).unwrap();
        assert!(rel_residual(&a, &x, &b) < 1e-10);
    }

    #[test]
    fn manufactured_solution_and_linearity() {
        let a = random_sparse(60, 3);
        let f = factorize(&a).unwrap();
        let x0 = random_vec(60, 4);
        let x = f.solve(&a.mul_vec(&x0).unwrap()).unwrap();
        let err: f64 = x.iter().zip(&x0).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm(&x0) < 1e-9);

        let (u, v) = (random_vec(60, 5), random_vec(60, 6));
        let (al, be) = (c(0.3, -1.2), c(-2.0, 0.5));
        let comb: Vec<_> = u.iter().zip(&v).map(|(p, q)| al * p + be * q).collect();
        let sols = f.solve_block(&[u, v, comb]).unwrap();
        let lin: Vec<_> = sols[0].iter().zip(&sols[1]).map(|(p, q)| al * p + be * q).collect();
        let d: f64 = lin
            .iter()
            .zip(&sols[2])
            .map(|(p, q)| (p - q).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(d / norm(&sols[2]) < 1e-12);
    }

    #[test]
    fn zero_and_repeated_rhs() {
        let a = random_sparse(20, 11);
        let f = factorize(&a).unwrap();
        assert!(f.solve(&vec![ZERO; 20]).unwrap().iter().all(|v| *v == ZERO));
        let b = random_vec(20, 12);
        let sols = f.solve_block(&[b.clone(), b.clone(), b]).unwrap();
        assert_eq!(sols[0], sols[1]);
        assert_eq!(sols[1], sols[2]);
        assert!(matches!(f.solve(&[ZERO; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn singular_matrices_are_reported() {
        // structurally singular: column 1 is empty
        let a = ComplexSparseMatrix::from_triplets(2, 2, &[(0, 0, c(1.0, 0.0)), (1, 0, c(1.0, 0.0))]).unwrap();
        assert!(matches!(factorize(&a), Err(Error::Singular { row: 1 })));
        // numerically singular
        let one = c(1.0, 0.0);
        let b = ComplexSparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, one), (0, 1, one), (1, 0, one), (1, 1, one), (2, 2, one)],
        )
        .unwrap();
        assert!(matches!(factorize(&b), Err(Error::Singular { .. })));
    }

    #[test]
    fn cholesky_of_normal_matrix() {
        let a = random_sparse(40, 21);
        let n = a.adjoint().matmul(&a).unwrap();
        let f = factorize_hermitian(&n).unwrap();
        assert_eq!(f.kind(), FactorKind::Cholesky);
        let b = random_vec(40, 22);
        let x = f.solve(&b).unwrap();
        assert!(rel_residual(&n, &x, &b) < 1e-10);
    }

    #[test]
    fn symbolic_reuse_gives_same_result() {
        let a = random_sparse(30, 31);
        let mut fz = Factorizer::new();
        let f1 = fz.lu(&a).unwrap();
        let mut a2 = a.clone();
        a2.values_mut().iter_mut().for_each(|v| *v *= 2.0);
        let f2 = fz.lu(&a2).unwrap();
        let b = random_vec(30, 32);
        let x1 = f1.solve(&b).unwrap();
        let x2 = f2.solve(&b).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - 2.0 * q).norm() < 1e-12 * p.norm().max(1.0));
        }
    }

    #[test]
    fn products_and_transposes() {
        let a = random_sparse(15, 41);
        let b = random_sparse(15, 42);
        let ab = a.matmul(&b).unwrap();
        let x = random_vec(15, 43);
        let lhs = ab.mul_vec(&x).unwrap();
        let rhs = a.mul_vec(&b.mul_vec(&x).unwrap()).unwrap();
        assert!(lhs.iter().zip(&rhs).all(|(p, q)| (p - q).norm() < 1e-12));
        let ah = a.adjoint();
        let y1 = ah.mul_vec(&x).unwrap();
        let y2 = a.adjoint_mul_vec(&x).unwrap();
        assert!(y1.iter().zip(&y2).all(|(p, q)| (p - q).norm() < 1e-13));
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn spectral_norm_identity_and_diagonal() {
        let id = spectral_norm_self_adjoint(|x: &[f64]| Ok(x.to_vec()), 5, PowerOptions::default()).unwrap();
        assert!((id.value - 1.0).abs() < 1e-12 && id.converged);
        let d = [3.0, 1.0, 1.0];
        let est = spectral_norm_self_adjoint(
            |x: &[f64]| Ok(x.iter().zip(&d).map(|(a, b)| a * b).collect()),
            3,
            PowerOptions::default(),
        )
        .unwrap();
        assert!((est.value - 3.0).abs() <= 1e-4 * 3.0);
    }

    #[test]
    fn unconverged_estimate_is_flagged() {
        let d = [1.0, 0.999_999, 0.5];
        let est = spectral_norm_self_adjoint(
            |x: &[f64]| Ok(x.iter().zip(&d).map(|(a, b)| a * b).collect()),
            3,
            PowerOptions {
                tol: 0.0,
                max_iter: 5,
                seed: 1,
            },
        )
        .unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 5);
        assert!(est.value > 0.9 && est.value <= 1.0 + 1e-12);
    }

    #[test]
    fn complex_spectral_norm_of_sparse_matrix() {
        let a = ComplexSparseMatrix::from_triplets(2, 2, &[(0, 0, c(0.0, 3.0)), (1, 1, c(1.0, 0.0))]).unwrap();
        let est = spectral_norm(
            |x: &[Complex64]| a.mul_vec(x),
            Some(|y: &[Complex64]| a.adjoint_mul_vec(y)),
            2,
            PowerOptions::default(),
        )
        .unwrap();
        assert!((est.value - 3.0).abs() < 1e-3);
    }
}
