use log::info;

use super::{FwiOracle, Survey, WriOracle};
use crate::denoise::Denoise;
use crate::error::{Error, Result};
use crate::model::{AcquisitionGeometry, FreqData, GridKind, ModelGrid};
use crate::optim::{proximal_newton_solve, Method, MisfitOracle, OptConfig, SolveResult, Stopping};
use crate::wave::WaveOptions;

/// Discrepancy factor of the noisy-data stopping rule `||P u - d|| <= 1.01 eps`.
pub const DISCREPANCY_FACTOR: f64 = 1.01;

/// Frequency batches inverted in order, the whole sequence repeated `paths` times.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationPlan {
    pub batches: Vec<Vec<f64>>,
    pub paths: usize,
}

impl ContinuationPlan {
    /// All frequencies inverted at once, one pass.
    pub fn simultaneous(frequencies: &[f64]) -> Self {
        Self {
            batches: vec![frequencies.to_vec()],
            paths: 1,
        }
    }

    /// Consecutive groups of `size` frequencies.
    pub fn batched(frequencies: &[f64], size: usize, paths: usize) -> Self {
        Self {
            batches: frequencies.chunks(size.max(1)).map(<[f64]>::to_vec).collect(),
            paths,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches.is_empty() || self.paths == 0 || self.batches.iter().any(Vec::is_empty) {
            return Err(Error::Config(
                "continuation plan needs non-empty batches and at least one path".into(),
            ));
        }
        Ok(())
    }
}

/// The IR-WRI penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Absolute(f64),
    /// `ratio * ||A(m0)||` at the first frequency of the plan.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Formulation {
    Fwi,
    Wri(Penalty),
}

/// Observed data and everything needed to model it.
#[derive(Debug, Clone)]
pub struct InversionProblem<'a> {
    pub acq: &'a AcquisitionGeometry,
    pub observed: &'a FreqData,
    /// Noise actually present in `observed`; switches every batch to the discrepancy rule.
    pub noise: Option<&'a FreqData>,
    pub wave: WaveOptions,
    pub formulation: Formulation,
}

#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub path: usize,
    pub frequencies: Vec<f64>,
    /// Starting parameters of the batch (`m / unit`).
    pub start: Vec<f64>,
    /// Discrepancy target, when the batch used the noisy-data rule.
    pub target: Option<f64>,
    pub result: SolveResult,
}

#[derive(Debug, Clone)]
pub struct MultiscaleResult {
    /// Final model in squared slowness.
    pub model: ModelGrid,
    /// Squared slowness represented by a parameter value of one.
    pub unit: f64,
    /// The IR-WRI penalty used, if any.
    pub mu: Option<f64>,
    pub batches: Vec<BatchRecord>,
}

impl MultiscaleResult {
    /// Model after each batch, in squared slowness.
    pub fn batch_model(&self, i: usize) -> Result<ModelGrid> {
        let x = &self.batches[i].result.m;
        self.model.with_values(x.iter().map(|v| v * self.unit).collect())
    }
}

/// Runs [`proximal_newton_solve`] over the batches of `plan`, each starting where the
/// previous one ended. The PML collar stays at the starting model throughout.
///
/// The optimizer works on `m / unit` with `unit` the mean of `m0`, so denoiser parameters
/// are relative to the background level.
pub fn multiscale_drive<D: Denoise + ?Sized>(
    problem: &InversionProblem<'_>,
    plan: &ContinuationPlan,
    method: Method,
    denoiser: &D,
    config: &OptConfig,
    m0: &ModelGrid,
) -> Result<MultiscaleResult> {
    plan.validate()?;
    let m0 = m0.to_kind(GridKind::SquaredSlowness)?;
    let unit = m0.values().iter().sum::<f64>() / m0.values().len() as f64;
    let shape = m0.shape();
    let mut x: Vec<f64> = m0.values().iter().map(|v| v / unit).collect();

    let mu = match problem.formulation {
        Formulation::Fwi => None,
        Formulation::Wri(Penalty::Absolute(mu)) => Some(mu),
        Formulation::Wri(Penalty::Relative(ratio)) => {
            let acq = problem.acq.with_frequencies(vec![plan.batches[0][0]])?;
            let survey = Survey::new(&m0, &acq, problem.observed, &problem.wave)?;
            Some(ratio * survey.operator_norm()?)
        }
    };

    let mut batches = Vec::new();
    for path in 0..plan.paths {
        for freqs in &plan.batches {
            let acq = problem.acq.with_frequencies(freqs.clone())?;
            let survey = Survey::new(&m0, &acq, problem.observed, &problem.wave)?;
            let target = match problem.noise {
                Some(noise) => Some(DISCREPANCY_FACTOR * noise.subset(freqs)?.norm()),
                None => None,
            };
            let mut cfg = config.clone();
            if let Some(t) = target {
                cfg.stopping = Stopping::DataResidual { target: t };
            }
            let mut oracle: Box<dyn MisfitOracle> = match mu {
                None => Box::new(FwiOracle::with_unit(survey, unit)),
                Some(mu) => Box::new(WriOracle::with_unit(survey, mu, unit)?),
            };
            let result = proximal_newton_solve(&mut *oracle, denoiser, shape, &cfg, &x, method)?;
            info!(
                "path {path}, batch {freqs:?} Hz: {} iterations ({})",
                result.iterations, result.reason
            );
            let start = std::mem::replace(&mut x, result.m.clone());
            batches.push(BatchRecord {
                path,
                frequencies: freqs.clone(),
                start,
                target,
                result,
            });
        }
    }
    let values: Vec<f64> = x.iter().map(|v| v * unit).collect();
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical(
            "inversion produced a nonpositive squared slowness".into(),
        ));
    }
    Ok(MultiscaleResult {
        model: m0.with_values(values)?,
        unit,
        mu,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::Denoiser;
    use crate::inversion::tests_support::{small_problem, small_survey};
    use crate::optim::{AdmmInit, CRule};

    #[test]
    fn plan_validation() {
        assert!(ContinuationPlan::simultaneous(&[]).validate().is_err());
        let p = ContinuationPlan::batched(&[5.0, 7.0, 10.0], 2, 3);
        assert_eq!(p.batches, vec![vec![5.0, 7.0], vec![10.0]]);
        assert!(p.validate().is_ok());
        assert!(ContinuationPlan { paths: 0, ..p }.validate().is_err());
    }

    #[test]
    fn single_batch_equals_one_solve() {
        let (truth, start, acq, data, wave) = small_problem();
        let problem = InversionProblem {
            acq: &acq,
            observed: &data,
            noise: None,
            wave,
            formulation: Formulation::Wri(Penalty::Absolute(1e-4)),
        };
        let cfg = OptConfig {
            max_outer: 3,
            admm_init: AdmmInit::Start,
            ..OptConfig::default()
        };
        let plan = ContinuationPlan::simultaneous(&acq.frequencies);
        let r = multiscale_drive(&problem, &plan, Method::Nadmm, &Denoiser::Identity, &cfg, &start).unwrap();

        let (survey, _) = small_survey(&acq.frequencies, acq.sources.len());
        let unit = r.unit;
        let mut o = WriOracle::with_unit(survey, 1e-4, unit).unwrap();
        let x0: Vec<f64> = start.values().iter().map(|v| v / unit).collect();
        let direct =
            proximal_newton_solve(&mut o, &Denoiser::Identity, start.shape(), &cfg, &x0, Method::Nadmm).unwrap();
        assert_eq!(r.batches.len(), 1);
        assert_eq!(r.batches[0].result.m, direct.m);
        assert_eq!(r.batches[0].result.history, direct.history);
        assert!(truth.values().len() == r.model.values().len());
    }

    #[test]
    fn batches_chain_and_noise_sets_the_target() {
        let (_, start, acq, data, wave) = small_problem();
        let (_, noise) = crate::wave::add_noise(&data, crate::wave::NoiseLevel::Db(30.0), 1).unwrap();
        let problem = InversionProblem {
            acq: &acq,
            observed: &data,
            noise: Some(&noise),
            wave,
            formulation: Formulation::Fwi,
        };
        let cfg = OptConfig {
            max_outer: 2,
            c_rule: CRule::default(),
            hessian: crate::optim::HessianModel::Lbfgs,
            ..OptConfig::default()
        };
        let plan = ContinuationPlan::batched(&acq.frequencies, 1, 2);
        let r = multiscale_drive(&problem, &plan, Method::Nista, &Denoiser::Identity, &cfg, &start).unwrap();
        assert_eq!(r.batches.len(), 4);
        for w in r.batches.windows(2) {
            assert_eq!(w[1].start, w[0].result.m);
        }
        assert_eq!(r.batches[3].path, 1);
        let f0 = r.batches[0].frequencies.clone();
        let eps = noise.subset(&f0).unwrap().norm();
        assert_eq!(r.batches[0].target, Some(1.01 * eps));
        let last = r.batch_model(3).unwrap();
        assert_eq!(last, r.model);
    }
}
