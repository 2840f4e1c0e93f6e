use std::collections::VecDeque;

use super::hessian::HessianApply;
use super::{dot, norm2};
use crate::error::{Error, Result};

/// Limited-memory BFGS curvature pairs.
///
/// The same history serves two purposes: [`Lbfgs::apply_inverse`] (two-loop recursion,
/// `~H^{-1} g`) and [`Lbfgs::apply`] (the BFGS matrix itself, `~H v`), so it can be plugged
/// wherever a [`HessianApply`] is expected.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    n: usize,
    memory: usize,
    pairs: VecDeque<Pair>,
    /// `B_i s_i` for the stored pairs, oldest first.
    bs: Vec<Vec<f64>>,
    initial: f64,
    scaling: bool,
    skipped: usize,
}

#[derive(Debug, Clone)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    sy: f64,
}

impl Lbfgs {
    /// Empty history; `B_0 = I` until pairs arrive, then `B_0 = (y'y / s'y) I` when `scaling`.
    pub fn new(n: usize, memory: usize, scaling: bool) -> Self {
        Self {
            n,
            memory,
            pairs: VecDeque::new(),
            bs: Vec::new(),
            initial: 1.0,
            scaling,
            skipped: 0,
        }
    }

    /// Sets the `B_0` scale used while the history is empty (or always, without scaling).
    pub fn with_initial_scale(mut self, b0: f64) -> Self {
        self.set_initial_scale(b0);
        self
    }

    pub fn set_initial_scale(&mut self, b0: f64) {
        self.initial = b0;
        self.rebuild();
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs rejected for failing the curvature condition.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Adds a pair; returns `false` (and counts it) when `s'y <= 1e-12 * ||s|| ||y||`.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * norm2(&s) * norm2(&y)) || !sy.is_finite() {
            self.skipped += 1;
            return false;
        }
        if self.memory == 0 {
            return true;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair { s, y, sy });
        self.rebuild();
        true
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
        self.bs.clear();
    }

    fn b0(&self) -> f64 {
        match (self.scaling, self.pairs.back()) {
            (true, Some(p)) => dot(&p.y, &p.y) / p.sy,
            _ => self.initial,
        }
    }

    fn rebuild(&mut self) {
        let b0 = self.b0();
        let mut bs: Vec<Vec<f64>> = Vec::with_capacity(self.pairs.len());
        for (i, p) in self.pairs.iter().enumerate() {
            let v = Self::recursive_apply(b0, &self.pairs, &bs, i, &p.s);
            bs.push(v);
        }
        self.bs = bs;
    }

    /// `B_k v` using the first `k` pairs.
    fn recursive_apply(b0: f64, pairs: &VecDeque<Pair>, bs: &[Vec<f64>], k: usize, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| b0 * x).collect();
        for i in 0..k {
            let p = &pairs[i];
            let a = &bs[i];
            let sa = dot(&p.s, a);
            let ca = dot(a, v) / sa;
            let cy = dot(&p.y, v) / p.sy;
            for ((o, ai), yi) in out.iter_mut().zip(a).zip(&p.y) {
                *o += cy * yi - ca * ai;
            }
        }
        out
    }

    /// Two-loop recursion: approximately `H^{-1} g`.
    pub fn apply_inverse(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for p in self.pairs.iter().rev() {
            let a = dot(&p.s, &q) / p.sy;
            for (qi, yi) in q.iter_mut().zip(&p.y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let h0 = 1.0 / self.b0();
        q.iter_mut().for_each(|v| *v *= h0);
        for (p, a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = dot(&p.y, &q) / p.sy;
            for (qi, si) in q.iter_mut().zip(&p.s) {
                *qi += (a - b) * si;
            }
        }
        q
    }

    /// `B_0` as a diagonal while no pairs are stored.
    pub(crate) fn diagonal_if_scalar(&self) -> Option<Vec<f64>> {
        self.pairs.is_empty().then(|| vec![self.b0(); self.n])
    }

    /// The BFGS matrix applied to `v`.
    pub fn apply_direct(&self, v: &[f64]) -> Vec<f64> {
        Self::recursive_apply(self.b0(), &self.pairs, &self.bs, self.pairs.len(), v)
    }
}

impl HessianApply for Lbfgs {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_direct(v))
    }
    fn diagonal(&mut self) -> Option<Result<Vec<f64>>> {
        self.diagonal_if_scalar().map(Ok)
    }
}

/// Outcome of [`minimize_quadratic`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Minimizes `0.5 x'Qx - r'x` (Q symmetric positive definite, given by products) with an
/// L-BFGS loop and exact line search, starting from zero.
///
/// Stops when `||Qx - r|| <= tol * ||r||`.
pub fn minimize_quadratic<F>(
    mut apply_q: F,
    r: &[f64],
    memory: usize,
    max_iter: usize,
    tol: f64,
) -> Result<QuadraticSolve>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = r.len();
    let mut x = vec![0.0; n];
    let mut g: Vec<f64> = r.iter().map(|v| -v).collect();
    let rnorm = norm2(r);
    if rnorm == 0.0 {
        return Ok(QuadraticSolve {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut hist = Lbfgs::new(n, memory, true);
    for it in 1..=max_iter {
        let d: Vec<f64> = hist.apply_inverse(&g).into_iter().map(|v| -v).collect();
        let qd = apply_q(&d)?;
        let curv = dot(&d, &qd);
        if !(curv > 0.0) {
            return Err(Error::Numerical(format!(
                "quadratic model is not positive definite along the search direction ({curv:e})"
            )));
        }
        let alpha = -dot(&g, &d) / curv;
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = qd.iter().map(|v| alpha * v).collect();
        for i in 0..n {
            x[i] += s[i];
            g[i] += y[i];
        }
        let res = norm2(&g);
        if !res.is_finite() {
            return Err(Error::Numerical("non-finite iterate in quadratic solve".into()));
        }
        if res <= tol * rnorm {
            return Ok(QuadraticSolve {
                x,
                iterations: it,
                residual: res / rnorm,
                converged: true,
            });
        }
        hist.push(s, y);
    }
    let residual = norm2(&g) / rnorm;
    Ok(QuadraticSolve {
        x,
        iterations: max_iter,
        residual,
        converged: false,
    })
}
