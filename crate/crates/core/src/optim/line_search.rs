use super::{dot, norm2};
use crate::error::{Error, Result};

/// Backtracking settings: trials `1, shrink, shrink^2, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_trials: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_trials: 20,
        }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config(format!(
                "line-search shrink must be in (0,1), got {}",
                self.shrink
            )));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Config(format!(
                "sufficient-decrease constant must be in (0,1), got {}",
                self.sufficient_decrease
            )));
        }
        if self.max_trials == 0 {
            return Err(Error::Config("line search needs at least one trial".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    /// Objective at `m + alpha*dm`.
    pub value: f64,
    /// Zero-based index of the returned trial.
    pub trial: usize,
    pub trials: usize,
    /// `false` when no trial met the decrease test; the best trial is returned instead.
    pub accepted: bool,
}

/// Backtracking line search with the test `f(m + a*dm) <= f(m) - sigma*a*||dm||^2/c`.
///
/// `f0` is `f(m)`. Trial evaluations that fail with a numerical or singularity error count
/// as `+inf` so an overshooting trial can be recovered from.
pub fn line_search<F>(
    mut f: F,
    m: &[f64],
    f0: f64,
    dm: &[f64],
    c: f64,
    params: &LineSearchParams,
) -> Result<LineSearchResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    params.validate()?;
    if dm.len() != m.len() {
        return Err(Error::DimensionMismatch {
            expected: m.len(),
            got: dm.len(),
        });
    }
    if !(c > 0.0) {
        return Err(Error::Domain(format!("step size c must be positive, got {c}")));
    }
    let dn2 = dot(dm, dm);
    if dn2 == 0.0 || !norm2(dm).is_finite() {
        return Err(Error::Numerical(
            "line search called with a zero or non-finite direction".into(),
        ));
    }
    let mut trial = vec![0.0; m.len()];
    let mut alpha = 1.0;
    let mut best: Option<(f64, f64, usize)> = None;
    for k in 0..params.max_trials {
        for ((t, a), d) in trial.iter_mut().zip(m).zip(dm) {
            *t = a + alpha * d;
        }
        let value = match f(&trial) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Numerical(_)) | Err(Error::Singular { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if value <= f0 - params.sufficient_decrease * alpha * dn2 / c {
            return Ok(LineSearchResult {
                alpha,
                value,
                trial: k,
                trials: k + 1,
                accepted: true,
            });
        }
        // strict comparison keeps the larger alpha on ties
        if best.is_none_or(|(_, v, _)| value < v) {
            best = Some((alpha, value, k));
        }
        alpha *= params.shrink;
    }
    let (alpha, value, k) = best.expect("at least one trial");
    Ok(LineSearchResult {
        alpha,
        value,
        trial: k,
        trials: params.max_trials,
        accepted: false,
    })
}
