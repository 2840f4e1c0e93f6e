use super::hessian::{ExactHessian, HessianApply};
use super::{all_finite, MisfitOracle};
use crate::denoise::Denoise;
use crate::error::{Error, Result};
use crate::model::GridShape;

/// Proximal gradient iterations `m_k = prox_{c*lambda*R}(y - c*grad M(y))` for a quadratic
/// misfit, with Nesterov extrapolation `y <- m_k + (k-1)/(k+2) (m_k - m_{k-1})` when
/// `accelerate` is set (plain ISTA otherwise).
///
/// `c = None` picks `0.9 / ||H||`, which for `M = 0.5||d - Am||^2` is `0.9 / ||A||^2`.
#[allow(clippy::too_many_arguments)]
pub fn proximal_gradient<O, D>(
    oracle: &mut O,
    denoiser: &D,
    shape: GridShape,
    lambda: f64,
    m0: &[f64],
    c: Option<f64>,
    iters: usize,
    accelerate: bool,
) -> Result<Vec<f64>>
where
    O: MisfitOracle + ?Sized,
    D: Denoise + ?Sized,
{
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let c = match c {
        Some(c) => c,
        None => {
            let norm = ExactHessian {
                oracle: &mut *oracle,
                m: m0,
            }
            .spectral_norm()?;
            if !(norm > 0.0) {
                return Err(Error::Numerical("misfit Hessian has zero norm".into()));
            }
            0.9 / norm
        }
    };
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("step size c must be positive, got {c}")));
    }
    let n = m0.len();
    let mut m = m0.to_vec();
    let mut y = m0.to_vec();
    let mut z = vec![0.0; n];
    for k in 1..=iters {
        let (_, g) = oracle.value_grad(&y)?;
        for i in 0..n {
            z[i] = y[i] - c * g[i];
        }
        let next = denoiser.denoise(&z, shape, c * lambda)?;
        if !all_finite(&next) {
            return Err(Error::Numerical(format!(
                "proximal gradient diverged at iteration {k}; step size c = {c:e} is too large"
            )));
        }
        let w = if accelerate {
            (k as f64 - 1.0) / (k as f64 + 2.0)
        } else {
            0.0
        };
        for i in 0..n {
            y[i] = next[i] + w * (next[i] - m[i]);
        }
        m = next;
    }
    let v = oracle.value(&m)?;
    if !v.is_finite() {
        return Err(Error::Numerical(
            "proximal gradient reached a non-finite objective".into(),
        ));
    }
    Ok(m)
}
