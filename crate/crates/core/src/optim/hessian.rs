use faer::linalg::solvers::Solve;
use faer::Mat;

use super::lbfgs::Lbfgs;
use super::MisfitOracle;
use crate::error::{Error, Result};
use crate::linsys::{spectral_norm_self_adjoint, PowerOptions};

/// A symmetric linear map standing in for `H_k`.
pub trait HessianApply {
    fn dim(&self) -> usize;

    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>>;

    /// Diagonal entries when the map is exactly diagonal.
    fn diagonal(&mut self) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Row-major dense form, if the implementation has it cheaply.
    fn dense(&mut self) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Largest singular value.
    fn spectral_norm(&mut self) -> Result<f64> {
        if let Some(d) = self.diagonal() {
            return Ok(d?.iter().fold(0.0, |a, v| a.max(v.abs())));
        }
        let n = self.dim();
        let opts = PowerOptions {
            tol: 1e-6,
            max_iter: 200,
            ..PowerOptions::default()
        };
        Ok(spectral_norm_self_adjoint(|v: &[f64]| self.apply(v), n, opts)?.value)
    }
}

impl<H: HessianApply + ?Sized> HessianApply for &mut H {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(v)
    }
    fn diagonal(&mut self) -> Option<Result<Vec<f64>>> {
        (**self).diagonal()
    }
    fn dense(&mut self) -> Option<Result<Vec<f64>>> {
        (**self).dense()
    }
    fn spectral_norm(&mut self) -> Result<f64> {
        (**self).spectral_norm()
    }
}

/// The oracle's Hessian at a fixed model.
pub struct ExactHessian<'a, O: MisfitOracle + ?Sized> {
    pub oracle: &'a mut O,
    pub m: &'a [f64],
}

impl<O: MisfitOracle + ?Sized> HessianApply for ExactHessian<'_, O> {
    fn dim(&self) -> usize {
        self.m.len()
    }
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        let out = self.oracle.hvp(self.m, v)?;
        if out.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                got: out.len(),
            });
        }
        Ok(out)
    }
    fn diagonal(&mut self) -> Option<Result<Vec<f64>>> {
        self.oracle.hessian_diag(self.m)
    }
    fn dense(&mut self) -> Option<Result<Vec<f64>>> {
        self.oracle.dense_hessian(self.m)
    }
}

/// `H = scale * I`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity {
    pub n: usize,
    pub scale: f64,
}

impl HessianApply for ScaledIdentity {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.iter().map(|x| x * self.scale).collect())
    }
    fn diagonal(&mut self) -> Option<Result<Vec<f64>>> {
        Some(Ok(vec![self.scale; self.n]))
    }
}

/// Which map plays `H_k` in a step; resolved against the oracle only while it is needed.
#[derive(Debug, Clone, Copy)]
pub enum HessianSource<'a> {
    Exact,
    Quasi(&'a Lbfgs),
    Identity,
}

impl HessianSource<'_> {
    /// Runs `f` with the resolved map at model `m`.
    pub fn with<O, R, F>(self, oracle: &mut O, m: &[f64], f: F) -> Result<R>
    where
        O: MisfitOracle + ?Sized,
        F: FnOnce(&mut dyn HessianApply) -> Result<R>,
    {
        match self {
            HessianSource::Exact => f(&mut ExactHessian { oracle, m }),
            HessianSource::Quasi(l) => f(&mut LbfgsView(l)),
            HessianSource::Identity => f(&mut ScaledIdentity { n: m.len(), scale: 1.0 }),
        }
    }
}

struct LbfgsView<'a>(&'a Lbfgs);

impl HessianApply for LbfgsView<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.apply_direct(v))
    }
    fn diagonal(&mut self) -> Option<Result<Vec<f64>>> {
        self.0.diagonal_if_scalar().map(Ok)
    }
}

/// Row-major dense matrix of `h`, from its dense form or from `n` products with unit vectors.
pub fn materialize<H: HessianApply + ?Sized>(h: &mut H) -> Result<Vec<f64>> {
    if let Some(d) = h.dense() {
        return d;
    }
    let n = h.dim();
    let mut out = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = h.apply(&e)?;
        e[j] = 0.0;
        for i in 0..n {
            out[i * n + j] = col[i];
        }
    }
    Ok(out)
}

/// Solves the dense `n x n` row-major system `a x = b` by LU with partial pivoting.
pub fn solve_dense(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: a.len(),
        });
    }
    let mat = Mat::<f64>::from_fn(n, n, |i, j| a[i * n + j]);
    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let x = mat.partial_piv_lu().solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if !super::all_finite(&out) {
        return Err(Error::Numerical("dense solve produced non-finite values".into()));
    }
    Ok(out)
}
