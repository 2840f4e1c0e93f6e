use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};

use super::hessian::{HessianApply, HessianSource};
use super::lbfgs::Lbfgs;
use super::line_search::{line_search, LineSearchParams};
use super::nadmm::{nadmm_step, InnerSolver, InversionState};
use super::nista::nista_direction;
use super::{dot, norm2, HessianModel, MisfitOracle};
use crate::denoise::Denoise;
use crate::error::{Error, Result};
use crate::model::GridShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nista,
    Nadmm,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nista" => Ok(Method::Nista),
            "nadmm" => Ok(Method::Nadmm),
            _ => Err(Error::Config(format!("unknown method '{s}' (nista|nadmm)"))),
        }
    }
}

/// Step-size rule for `c_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CRule {
    /// `factor / ||H_k||`.
    AutoSpectral {
        factor: f64,
    },
    /// `factor / ||H_k||^2`.
    AutoSpectralSquared {
        factor: f64,
    },
    Fixed(f64),
}

impl Default for CRule {
    fn default() -> Self {
        CRule::AutoSpectral { factor: 0.9 }
    }
}

/// When to stop besides the iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub enum Stopping {
    MaxIter,
    /// `||m - reference|| <= target`.
    ModelError {
        reference: Vec<f64>,
        target: f64,
    },
    /// Oracle data residual `<= target`.
    DataResidual {
        target: f64,
    },
}

/// Starting values of the ADMM auxiliaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmInit {
    /// `p_0 = q_0 = 0`.
    Zero,
    /// `p_0 = m_0`, `q_0 = 0`.
    Start,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub lambda: f64,
    pub c_rule: CRule,
    pub max_outer: usize,
    /// Inner iterations of the NISTA direction.
    pub max_inner: usize,
    pub line_search: LineSearchParams,
    pub lbfgs_memory: usize,
    /// Seed each NISTA inner loop with the previous direction.
    pub warm_start: bool,
    pub stopping: Stopping,
    pub hessian: HessianModel,
    pub inner_solver: InnerSolver,
    /// NADMM recomputes `c_k` only for outer iterations before this one.
    pub freeze_c_after: Option<usize>,
    /// Stop once an accepted step is shorter than this (and, for NADMM, `||m - p||` too).
    pub step_tolerance: Option<f64>,
    pub admm_init: AdmmInit,
    /// Consecutive flagged line searches that end the run.
    pub stagnation_limit: usize,
    /// Outer iterations always performed before the stopping rule is consulted.
    pub min_outer: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            c_rule: CRule::default(),
            max_outer: 70,
            max_inner: 50,
            line_search: LineSearchParams::default(),
            lbfgs_memory: 10,
            warm_start: false,
            stopping: Stopping::MaxIter,
            hessian: HessianModel::Exact,
            inner_solver: InnerSolver::Auto,
            freeze_c_after: Some(3),
            step_tolerance: None,
            admm_init: AdmmInit::Zero,
            stagnation_limit: 3,
            min_outer: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        match self.c_rule {
            CRule::AutoSpectral { factor } | CRule::AutoSpectralSquared { factor }
                if !(factor > 0.0 && factor.is_finite()) =>
            {
                return Err(Error::Config(format!("c-rule factor must be positive, got {factor}")))
            }
            CRule::Fixed(c) if !(c > 0.0 && c.is_finite()) => {
                return Err(Error::Config(format!("fixed c must be positive, got {c}")))
            }
            _ => {}
        }
        if self.max_inner == 0 {
            return Err(Error::Config("max_inner must be >= 1".into()));
        }
        if self.stagnation_limit == 0 {
            return Err(Error::Config("stagnation limit must be >= 1".into()));
        }
        self.line_search.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    ModelError,
    DataResidual,
    StepTolerance,
    /// The direction vanished.
    Stationary,
    /// Line search failed repeatedly; the best iterate is returned.
    Stagnation,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::MaxIter => "max-iter",
            StopReason::ModelError => "model-error",
            StopReason::DataResidual => "data-residual",
            StopReason::StepTolerance => "step-tolerance",
            StopReason::Stationary => "stationary",
            StopReason::Stagnation => "stagnation",
        };
        f.write_str(s)
    }
}

/// One row per outer iterate; row 0 is the starting model.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    /// `M + lambda*R` when the regularizer reports its value, `M` otherwise.
    pub objective: f64,
    pub misfit: f64,
    pub reg_value: Option<f64>,
    pub alpha: f64,
    pub step_norm: f64,
    pub ck: Option<f64>,
    pub accepted: bool,
    pub data_residual: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub const CSV_HEADER: &'static str = "iter,objective,misfit,reg_value,alpha,step_norm,ck";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{},{:e},{:e},{}",
                r.iter,
                r.objective,
                r.misfit,
                opt(r.reg_value),
                r.alpha,
                r.step_norm,
                opt(r.ck)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub m: Vec<f64>,
    pub history: History,
    pub reason: StopReason,
    /// Outer iterations performed.
    pub iterations: usize,
    pub state: InversionState,
}

fn reg_term<D: Denoise + ?Sized>(d: &D, m: &[f64], shape: GridShape, lambda: f64) -> Option<f64> {
    if lambda == 0.0 {
        return Some(0.0);
    }
    d.reg_value(m, shape)
}

fn step_size(rule: CRule, h: &mut dyn HessianApply) -> Result<f64> {
    let bound = |norm: f64, squared: bool, factor: f64| {
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical(format!(
                "cannot derive a step size from Hessian norm {norm:e}"
            )));
        }
        Ok(if squared { factor / (norm * norm) } else { factor / norm })
    };
    match rule {
        CRule::Fixed(c) => Ok(c),
        CRule::AutoSpectral { factor } => bound(h.spectral_norm()?, false, factor),
        CRule::AutoSpectralSquared { factor } => bound(h.spectral_norm()?, true, factor),
    }
}

/// Proximal Newton outer loop `m_{k+1} = m_k + alpha_k dm_k`.
///
/// `shape` is the grid layout handed to the denoiser (use [`GridShape::vector`] for plain
/// vectors). Every iteration calls `oracle.prepare` at the new iterate before evaluating it.
pub fn proximal_newton_solve<O, D>(
    oracle: &mut O,
    denoiser: &D,
    shape: GridShape,
    config: &OptConfig,
    m0: &[f64],
    method: Method,
) -> Result<SolveResult>
where
    O: MisfitOracle + ?Sized,
    D: Denoise + ?Sized,
{
    config.validate()?;
    let n = m0.len();
    if shape.len() != n || oracle.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if shape.len() != n { shape.len() } else { oracle.dim() },
        });
    }
    let lambda = config.lambda;
    let mut state = match config.admm_init {
        AdmmInit::Zero => InversionState::new(m0.to_vec()),
        AdmmInit::Start => InversionState::centred(m0.to_vec()),
    };
    let mut lbfgs = Lbfgs::new(n, config.lbfgs_memory, true);
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut warm: Option<Vec<f64>> = None;
    let mut frozen_c: Option<f64> = None;
    let mut flagged_run = 0;
    let mut history = History::default();

    oracle.prepare(&state.m)?;
    let (mut value, mut grad) = oracle.value_grad(&state.m)?;
    let mut reg = reg_term(denoiser, &state.m, shape, lambda);
    history.rows.push(HistoryRow {
        iter: 0,
        objective: value + lambda * reg.unwrap_or(0.0),
        misfit: value,
        reg_value: reg,
        alpha: 0.0,
        step_norm: 0.0,
        ck: None,
        accepted: true,
        data_residual: None,
    });
    let mut best = (history.rows[0].objective, state.m.clone());
    let mut reason = StopReason::MaxIter;
    let mut iterations = 0;

    for k in 0..config.max_outer {
        if k >= config.min_outer {
            let done = match &config.stopping {
                Stopping::MaxIter => false,
                Stopping::ModelError { reference, target } => {
                    let err: f64 = state
                        .m
                        .iter()
                        .zip(reference)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    err <= *target
                }
                Stopping::DataResidual { target } => {
                    let r = oracle
                        .data_residual(&state.m)
                        .ok_or_else(|| Error::Config("data-residual stopping needs an oracle with data".into()))??;
                    if let Some(row) = history.rows.last_mut() {
                        row.data_residual = Some(r);
                    }
                    r <= *target
                }
            };
            if done {
                reason = match config.stopping {
                    Stopping::ModelError { .. } => StopReason::ModelError,
                    _ => StopReason::DataResidual,
                };
                break;
            }
        }

        if config.hessian == HessianModel::Lbfgs {
            if let Some((pm, pg)) = &previous {
                let s: Vec<f64> = state.m.iter().zip(pm).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = grad.iter().zip(pg).map(|(a, b)| a - b).collect();
                lbfgs.push(s, y);
            } else {
                // scale B_0 by the curvature along the gradient
                let hg = oracle.hvp(&state.m, &grad)?;
                let gg = dot(&grad, &grad);
                let rq = if gg > 0.0 { dot(&grad, &hg) / gg } else { 0.0 };
                lbfgs.set_initial_scale(if rq > 0.0 && rq.is_finite() { rq } else { 1.0 });
            }
        }
        let source = match config.hessian {
            HessianModel::Exact => HessianSource::Exact,
            HessianModel::Lbfgs => HessianSource::Quasi(&lbfgs),
            HessianModel::Identity => HessianSource::Identity,
        };

        let c = match (method, frozen_c, config.freeze_c_after) {
            (Method::Nadmm, Some(c), Some(after)) if k >= after => c,
            _ => source.with(oracle, &state.m, |h| step_size(config.c_rule, h))?,
        };
        frozen_c = Some(c);

        let m_old = state.m.clone();
        let (alpha, step_norm, accepted) = match method {
            Method::Nista => {
                let dm = source.with(oracle, &state.m, |h| {
                    nista_direction(
                        h,
                        &state.m,
                        &grad,
                        denoiser,
                        shape,
                        lambda,
                        c,
                        config.max_inner,
                        warm.as_deref().filter(|_| config.warm_start),
                    )
                })?;
                let dn = norm2(&dm);
                if dn == 0.0 {
                    reason = StopReason::Stationary;
                    break;
                }
                let f0 = value + lambda * reg.unwrap_or(0.0);
                let has_reg = reg.is_some();
                let r = line_search(
                    |x| {
                        let mut v = oracle.value(x)?;
                        if has_reg && lambda > 0.0 {
                            v += lambda * denoiser.reg_value(x, shape).unwrap_or(0.0);
                        }
                        Ok(v)
                    },
                    &state.m,
                    f0,
                    &dm,
                    c,
                    &config.line_search,
                )?;
                let alpha = if r.accepted || r.value < f0 { r.alpha } else { 0.0 };
                for (mi, di) in state.m.iter_mut().zip(&dm) {
                    *mi += alpha * di;
                }
                state.iteration += 1;
                state.c = Some(c);
                warm = Some(dm);
                (alpha, alpha * dn, r.accepted)
            }
            Method::Nadmm => {
                let step = nadmm_step(
                    oracle,
                    source,
                    &mut state,
                    value,
                    &grad,
                    denoiser,
                    shape,
                    lambda,
                    c,
                    config.inner_solver,
                    &config.line_search,
                )?;
                if !step.inner_converged {
                    debug!(
                        "outer {k}: inner solve stopped after {} iterations",
                        step.inner_iterations
                    );
                }
                let dn = norm2(&step.direction);
                (step.alpha, step.alpha * dn, step.accepted)
            }
        };
        iterations = k + 1;
        flagged_run = if accepted { 0 } else { flagged_run + 1 };
        previous = Some((m_old, std::mem::take(&mut grad)));

        oracle.prepare(&state.m)?;
        let (v, g) = oracle.value_grad(&state.m)?;
        value = v;
        grad = g;
        let reg_now = reg_term(denoiser, &state.m, shape, lambda);
        let objective = value + lambda * reg_now.unwrap_or(0.0);
        reg = reg_now;
        history.rows.push(HistoryRow {
            iter: iterations,
            objective,
            misfit: value,
            reg_value: reg,
            alpha,
            step_norm,
            ck: Some(c),
            accepted,
            data_residual: None,
        });
        debug!("outer {iterations}: objective {objective:e} alpha {alpha} c {c:e}");
        if objective < best.0 {
            best = (objective, state.m.clone());
        }
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "misfit became non-finite at iteration {iterations}"
            )));
        }

        if let Some(tol) = config.step_tolerance {
            let primal_ok = match method {
                Method::Nista => true,
                Method::Nadmm => {
                    let r: f64 = state.m.iter().zip(&state.p).map(|(a, b)| (a - b) * (a - b)).sum();
                    r.sqrt() <= tol
                }
            };
            if accepted && step_norm <= tol && primal_ok {
                reason = StopReason::StepTolerance;
                break;
            }
        }
        if flagged_run >= config.stagnation_limit {
            reason = StopReason::Stagnation;
            state.m = best.1.clone();
            break;
        }
    }
    info!("{method:?} stopped after {iterations} iterations ({reason})");
    Ok(SolveResult {
        m: state.m.clone(),
        history,
        reason,
        iterations,
        state,
    })
}
