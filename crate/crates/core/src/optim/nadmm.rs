use super::hessian::{materialize, solve_dense, HessianApply, HessianSource};
use super::lbfgs::minimize_quadratic;
use super::line_search::{line_search, LineSearchParams};
use super::{all_finite, dot, MisfitOracle};
use crate::denoise::Denoise;
use crate::error::{Error, Result};
use crate::model::GridShape;

/// How the damped Newton system `(cH + I) dm = rhs` is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSolver {
    /// Dense for `n <= 64`, closed form when `H` is diagonal, L-BFGS otherwise.
    Auto,
    ExactDense,
    Diagonal,
    /// L-BFGS minimization of the damped quadratic, using products with `H`.
    Lbfgs {
        memory: usize,
        max_iter: usize,
        tol: f64,
    },
}

impl InnerSolver {
    pub const DENSE_LIMIT: usize = 64;

    pub fn lbfgs_default() -> Self {
        InnerSolver::Lbfgs {
            memory: 10,
            max_iter: 50,
            tol: 1e-8,
        }
    }
}

/// Iterate and ADMM auxiliaries carried across outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionState {
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Step size used by the last step, if any.
    pub c: Option<f64>,
    pub iteration: usize,
}

impl InversionState {
    /// `p = q = 0`.
    pub fn new(m0: Vec<f64>) -> Self {
        let n = m0.len();
        Self {
            m: m0,
            p: vec![0.0; n],
            q: vec![0.0; n],
            c: None,
            iteration: 0,
        }
    }

    /// `p = m0`, `q = 0`: the damping term starts centred on the starting model.
    pub fn centred(m0: Vec<f64>) -> Self {
        let mut s = Self::new(m0);
        s.p = s.m.clone();
        s
    }
}

/// Diagnostics of one [`nadmm_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct NadmmStep {
    pub direction: Vec<f64>,
    pub alpha: f64,
    /// Line search met the decrease test.
    pub accepted: bool,
    /// Damped objective `M(m) + ||m - (p+q)||^2/(2c)` before and after the step.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// `M(m_{k+1})`.
    pub misfit: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

/// Solves `(cH + I) x = rhs`; returns the solution, inner iterations and a convergence flag.
pub fn solve_damped<H: HessianApply + ?Sized>(
    h: &mut H,
    c: f64,
    rhs: &[f64],
    solver: InnerSolver,
) -> Result<(Vec<f64>, usize, bool)> {
    let n = rhs.len();
    let solver = match solver {
        InnerSolver::Auto if n <= InnerSolver::DENSE_LIMIT => InnerSolver::ExactDense,
        InnerSolver::Auto => match h.diagonal() {
            Some(d) => return diagonal_solve(&d?, c, rhs),
            None => InnerSolver::lbfgs_default(),
        },
        s => s,
    };
    match solver {
        InnerSolver::ExactDense => {
            let mut a = materialize(h)?;
            for (i, v) in a.iter_mut().enumerate() {
                *v *= c;
                if i % (n + 1) == 0 {
                    *v += 1.0;
                }
            }
            Ok((solve_dense(&a, rhs)?, 1, true))
        }
        InnerSolver::Diagonal => match h.diagonal() {
            Some(d) => diagonal_solve(&d?, c, rhs),
            None => Err(Error::Config("diagonal inner solver needs a diagonal Hessian".into())),
        },
        InnerSolver::Lbfgs { memory, max_iter, tol } => {
            let sol = minimize_quadratic(
                |v| {
                    let hv = h.apply(v)?;
                    Ok(hv.iter().zip(v).map(|(a, b)| c * a + b).collect())
                },
                rhs,
                memory,
                max_iter,
                tol,
            )?;
            Ok((sol.x, sol.iterations, sol.converged))
        }
        InnerSolver::Auto => unreachable!("resolved above"),
    }
}

fn diagonal_solve(d: &[f64], c: f64, rhs: &[f64]) -> Result<(Vec<f64>, usize, bool)> {
    if d.len() != rhs.len() {
        return Err(Error::DimensionMismatch {
            expected: rhs.len(),
            got: d.len(),
        });
    }
    let x: Vec<f64> = d.iter().zip(rhs).map(|(di, r)| r / (c * di + 1.0)).collect();
    if !all_finite(&x) {
        return Err(Error::Numerical("damped diagonal system is singular".into()));
    }
    Ok((x, 1, true))
}

/// Damped objective `M(m) + ||m - z||^2 / (2c)`.
fn surrogate(misfit: f64, m: &[f64], z: &[f64], c: f64) -> f64 {
    let d2: f64 = m.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    misfit + d2 / (2.0 * c)
}

/// One outer iteration of the ADMM-split proximal Newton method.
///
/// With `z = p + q`: solve `(cH + I) dm = -c*g + (z - m)`, backtrack on the damped
/// objective, move `m`, then `p <- prox_{c*lambda*R}(m - q)` and `q <- q + p - m`.
/// `value` and `grad` are `M` and its gradient at `state.m`. The step is not taken
/// (`alpha = 0`) when no trial lowers the damped objective; `p` and `q` are still updated.
#[allow(clippy::too_many_arguments)]
pub fn nadmm_step<O, D>(
    oracle: &mut O,
    hessian: HessianSource<'_>,
    state: &mut InversionState,
    value: f64,
    grad: &[f64],
    denoiser: &D,
    shape: GridShape,
    lambda: f64,
    c: f64,
    solver: InnerSolver,
    ls: &LineSearchParams,
) -> Result<NadmmStep>
where
    O: MisfitOracle + ?Sized,
    D: Denoise + ?Sized,
{
    let n = state.m.len();
    if grad.len() != n || state.p.len() != n || state.q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grad.len().min(state.p.len()).min(state.q.len()),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("step size c must be positive, got {c}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let z: Vec<f64> = state.p.iter().zip(&state.q).map(|(a, b)| a + b).collect();
    let rhs: Vec<f64> = (0..n).map(|i| -c * grad[i] + z[i] - state.m[i]).collect();
    let (direction, inner_iterations, inner_converged) =
        hessian.with(oracle, &state.m, |h| solve_damped(h, c, &rhs, solver))?;
    if !all_finite(&direction) {
        return Err(Error::Numerical("non-finite NADMM direction".into()));
    }
    let before = surrogate(value, &state.m, &z, c);

    let (alpha, accepted, after, misfit) = if dot(&direction, &direction) == 0.0 {
        (0.0, true, before, value)
    } else {
        let mut misfits = Vec::new();
        let r = line_search(
            |x| {
                let v = oracle.value(x);
                misfits.push(*v.as_ref().unwrap_or(&f64::NAN));
                Ok(surrogate(v?, x, &z, c))
            },
            &state.m,
            before,
            &direction,
            c,
            ls,
        )?;
        if r.accepted || r.value < before {
            (r.alpha, r.accepted, r.value, misfits[r.trial])
        } else {
            (0.0, false, before, value)
        }
    };
    for (mi, di) in state.m.iter_mut().zip(&direction) {
        *mi += alpha * di;
    }
    let shifted: Vec<f64> = state.m.iter().zip(&state.q).map(|(a, b)| a - b).collect();
    let p = denoiser.denoise(&shifted, shape, c * lambda)?;
    if p.len() != n || !all_finite(&p) {
        return Err(Error::Denoiser(
            "denoiser output has the wrong size or non-finite values".into(),
        ));
    }
    for ((qi, pi), mi) in state.q.iter_mut().zip(&p).zip(&state.m) {
        *qi += pi - mi;
    }
    state.p = p;
    state.c = Some(c);
    state.iteration += 1;
    Ok(NadmmStep {
        direction,
        alpha,
        accepted,
        surrogate_before: before,
        surrogate_after: after,
        misfit,
        inner_iterations,
        inner_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::Denoiser;
    use crate::optim::hessian::ScaledIdentity;

    struct Quad {
        a: Vec<f64>,
        b: Vec<f64>,
    }

    impl MisfitOracle for Quad {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn value(&mut self, m: &[f64]) -> Result<f64> {
            let am = self.hvp(m, m)?;
            Ok(0.5 * dot(m, &am) - dot(&self.b, m))
        }
        fn value_grad(&mut self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
            let am = self.hvp(m, m)?;
            let g = am.iter().zip(&self.b).map(|(a, b)| a - b).collect();
            Ok((self.value(m)?, g))
        }
        fn hvp(&mut self, _m: &[f64], v: &[f64]) -> Result<Vec<f64>> {
            let n = v.len();
            Ok((0..n).map(|i| (0..n).map(|j| self.a[i * n + j] * v[j]).sum()).collect())
        }
    }

    #[test]
    fn scalar_damped_step() {
        let mut h = ScaledIdentity { n: 1, scale: 2.0 };
        for solver in [
            InnerSolver::ExactDense,
            InnerSolver::Diagonal,
            InnerSolver::lbfgs_default(),
        ] {
            let (x, _, ok) = solve_damped(&mut h, 0.5, &[-0.5 * 4.0], solver).unwrap();
            assert!(ok);
            assert!((x[0] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_solvers_agree() {
        let n = 4;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = if i == j {
                    3.0 + i as f64
                } else {
                    0.5 / (1.0 + (i + j) as f64)
                };
            }
        }
        let mut q = Quad { a, b: vec![0.0; n] };
        let mut h = super::super::ExactHessian {
            oracle: &mut q,
            m: &[0.0; 4],
        };
        let rhs = [1.0, -2.0, 0.5, 0.25];
        let (d1, _, _) = solve_damped(&mut h, 0.3, &rhs, InnerSolver::ExactDense).unwrap();
        let (d2, _, ok) = solve_damped(&mut h, 0.3, &rhs, InnerSolver::lbfgs_default()).unwrap();
        assert!(ok);
        for (x, y) in d1.iter().zip(&d2) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(matches!(
            solve_damped(&mut h, 0.3, &rhs, InnerSolver::Diagonal),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_prox_zeroes_the_dual() {
        let a = vec![2.0, 0.5, 0.5, 1.0];
        let mut q = Quad {
            a: a.clone(),
            b: vec![1.0, -1.0],
        };
        let mut state = InversionState::new(vec![3.0, -2.0]);
        let c = 0.4;
        for k in 0..5 {
            let (v, g) = q.value_grad(&state.m).unwrap();
            let step = nadmm_step(
                &mut q,
                HessianSource::Exact,
                &mut state,
                v,
                &g,
                &Denoiser::Identity,
                GridShape::vector(2),
                0.0,
                c,
                InnerSolver::ExactDense,
                &LineSearchParams::default(),
            )
            .unwrap();
            assert!(state.q.iter().all(|x| *x == 0.0));
            assert_eq!(state.p, state.m);
            if k >= 1 {
                // (cH + I) dm = -c g
                let hd = [
                    a[0] * step.direction[0] + a[1] * step.direction[1],
                    a[2] * step.direction[0] + a[3] * step.direction[1],
                ];
                for i in 0..2 {
                    assert!((c * hd[i] + step.direction[i] + c * g[i]).abs() < 1e-12);
                }
            }
            assert!(step.surrogate_after <= step.surrogate_before);
        }
    }
}
