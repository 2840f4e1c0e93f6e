//! Proximal Newton solvers for `min_m M(m) + lambda*R(m)` with a black-box regularizer.
//!
//! The outer loop is `m_{k+1} = m_k + alpha_k * dm_k`; the direction `dm_k` comes either from an
//! accelerated proximal-gradient inner loop on the local quadratic model ([`nista_direction`])
//! or from one ADMM sweep that splits the quadratic model from the regularizer ([`nadmm_step`]).

mod driver;
mod hessian;
mod ista;
mod lbfgs;
mod line_search;
mod nadmm;
mod nista;

pub use driver::{
    proximal_newton_solve, AdmmInit, CRule, History, HistoryRow, Method, OptConfig, SolveResult, StopReason, Stopping,
};
pub use hessian::{materialize, solve_dense, ExactHessian, HessianApply, HessianSource, ScaledIdentity};
pub use ista::proximal_gradient;
pub use lbfgs::{minimize_quadratic, Lbfgs, QuadraticSolve};
pub use line_search::{line_search, LineSearchParams, LineSearchResult};
pub use nadmm::{nadmm_step, solve_damped, InnerSolver, InversionState, NadmmStep};
pub use nista::nista_direction;

use crate::error::Result;

/// Access to a smooth misfit `M(m)` and its derivatives.
///
/// Methods take `&mut self` so implementations can cache factorizations or wavefields.
pub trait MisfitOracle {
    fn dim(&self) -> usize;

    /// Hook run once at the start of every outer iteration, before any other call at `m`.
    ///
    /// Oracles whose misfit depends on auxiliary state refreshed per outer iterate (the
    /// data-assimilated wavefields of IR-WRI) update that state here.
    fn prepare(&mut self, _m: &[f64]) -> Result<()> {
        Ok(())
    }

    fn value(&mut self, m: &[f64]) -> Result<f64>;

    fn value_grad(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Hessian (or Gauss-Newton Hessian) times `v`; linear in `v`.
    fn hvp(&mut self, m: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// The Hessian diagonal, returned only when the Hessian is exactly diagonal.
    fn hessian_diag(&mut self, _m: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Row-major dense Hessian for small problems.
    fn dense_hessian(&mut self, _m: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Norm of the data residual `||P u - d||` for the current iterate, when meaningful.
    fn data_residual(&mut self, _m: &[f64]) -> Option<Result<f64>> {
        None
    }
}

impl<O: MisfitOracle + ?Sized> MisfitOracle for &mut O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn prepare(&mut self, m: &[f64]) -> Result<()> {
        (**self).prepare(m)
    }
    fn value(&mut self, m: &[f64]) -> Result<f64> {
        (**self).value(m)
    }
    fn value_grad(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).value_grad(m)
    }
    fn hvp(&mut self, m: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        (**self).hvp(m, v)
    }
    fn hessian_diag(&mut self, m: &[f64]) -> Option<Result<Vec<f64>>> {
        (**self).hessian_diag(m)
    }
    fn dense_hessian(&mut self, m: &[f64]) -> Option<Result<Vec<f64>>> {
        (**self).dense_hessian(m)
    }
    fn data_residual(&mut self, m: &[f64]) -> Option<Result<f64>> {
        (**self).data_residual(m)
    }
}

/// Which local Hessian model the outer loop builds each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianModel {
    /// The oracle's `hvp` (and its diagonal or dense form when offered).
    Exact,
    /// Limited-memory BFGS built from outer-iterate gradient differences.
    Lbfgs,
    /// `H = I`: the direction reduces to a proximal gradient step.
    Identity,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}
