//! Two-parameter test problem: `75(m2 - m1^2)^2 + (1 - m1)^2 + lambda(|m1| + |m2|)`.

use crate::error::{Error, Result};
use crate::optim::{CRule, Method, MisfitOracle, OptConfig};

/// Starting point of the toy runs.
pub const ROSENBROCK_START: [f64; 2] = [-1.2, 1.0];

/// Solver settings that take both methods to the minimizer from [`ROSENBROCK_START`]
/// for every `lambda` in `[0, 3]`.
///
/// NISTA uses the spectral step rule. NADMM uses `c = 1`: the spectral rule gives
/// `c ~ 1e-3` at this Hessian scale, which damps NADMM so heavily that the unregularized
/// run needs far more than the iteration cap.
pub fn rosenbrock_config(lambda: f64, method: Method) -> OptConfig {
    OptConfig {
        lambda,
        c_rule: match method {
            Method::Nista => CRule::default(),
            Method::Nadmm => CRule::Fixed(1.0),
        },
        max_outer: 5000,
        max_inner: 100,
        step_tolerance: Some(1e-12),
        ..OptConfig::default()
    }
}

/// Value, gradient and Hessian of `75(m2 - m1^2)^2 + (1 - m1)^2`.
pub fn rosenbrock_value_grad_hess(m: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let [x, y] = m;
    let r = y - x * x;
    let value = 75.0 * r * r + (1.0 - x) * (1.0 - x);
    let grad = [-300.0 * x * r - 2.0 * (1.0 - x), 150.0 * r];
    let hess = [[-300.0 * y + 900.0 * x * x + 2.0, -300.0 * x], [-300.0 * x, 150.0]];
    (value, grad, hess)
}

/// The smooth part as a [`MisfitOracle`] with an exact dense Hessian.
#[derive(Debug, Clone, Copy, Default)]
pub struct RosenbrockOracle {
    /// Multiplies the whole function (1 for the plain problem).
    pub scale: f64,
}

impl RosenbrockOracle {
    pub fn new() -> Self {
        Self { scale: 1.0 }
    }

    pub fn scaled(scale: f64) -> Self {
        Self { scale }
    }

    fn eval(&self, m: &[f64]) -> Result<(f64, [f64; 2], [[f64; 2]; 2])> {
        if m.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: m.len(),
            });
        }
        let (v, g, h) = rosenbrock_value_grad_hess([m[0], m[1]]);
        let s = self.scale;
        Ok((
            s * v,
            [s * g[0], s * g[1]],
            [[s * h[0][0], s * h[0][1]], [s * h[1][0], s * h[1][1]]],
        ))
    }
}

impl MisfitOracle for RosenbrockOracle {
    fn dim(&self) -> usize {
        2
    }

    fn value(&mut self, m: &[f64]) -> Result<f64> {
        Ok(self.eval(m)?.0)
    }

    fn value_grad(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g, _) = self.eval(m)?;
        Ok((v, g.to_vec()))
    }

    fn hvp(&mut self, m: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let (_, _, h) = self.eval(m)?;
        Ok(vec![h[0][0] * v[0] + h[0][1] * v[1], h[1][0] * v[0] + h[1][1] * v[1]])
    }

    fn dense_hessian(&mut self, m: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.eval(m).map(|(_, _, h)| vec![h[0][0], h[0][1], h[1][0], h[1][1]]))
    }
}

/// Root of `300x^3 + 2x + lambda - 2` in `[0, 1]` for `3/2 <= lambda <= 2`, by bisection.
fn cubic_root(lambda: f64) -> f64 {
    let f = |x: f64| 300.0 * x * x * x + 2.0 * x + lambda - 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Global minimizer of the l1-regularized problem as a function of `lambda`.
pub fn rosenbrock_l1_argmin(lambda: f64) -> Result<[f64; 2]> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(if lambda <= 1.5 {
        let x = (2.0 - lambda) / (2.0 + 2.0 * lambda);
        [x, x * x - lambda / 150.0]
    } else if lambda <= 2.0 {
        [cubic_root(lambda), 0.0]
    } else {
        [0.0, 0.0]
    })
}
