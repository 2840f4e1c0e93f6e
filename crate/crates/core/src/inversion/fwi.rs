use num_complex::Complex64;

use super::Survey;
use crate::error::{Error, Result};
use crate::linsys::{Factorization, Factorizer};
use crate::model::{FreqBlock, FreqData};
use crate::optim::MisfitOracle;

struct State {
    x: Vec<f64>,
    lus: Vec<Factorization>,
    /// Forward fields per frequency and source.
    fields: Vec<Vec<Vec<Complex64>>>,
}

/// Reduced FWI misfit `0.5 sum ||P A(m)^{-1} b - d||^2` with adjoint-state gradients and
/// Gauss-Newton Hessian products.
///
/// Factorizations and forward fields are cached for the most recent model.
pub struct FwiOracle {
    survey: Survey,
    unit: f64,
    factorizer: Factorizer,
    state: Option<State>,
}

fn conj_all(v: &[Complex64]) -> Vec<Complex64> {
    v.iter().map(|z| z.conj()).collect()
}

impl FwiOracle {
    pub fn new(survey: Survey) -> Self {
        Self::with_unit(survey, 1.0)
    }

    /// Parameters are `m / unit`.
    pub fn with_unit(survey: Survey, unit: f64) -> Self {
        Self {
            survey,
            unit,
            factorizer: Factorizer::new(),
            state: None,
        }
    }

    pub fn survey(&self) -> &Survey {
        &self.survey
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    fn ensure(&mut self, x: &[f64]) -> Result<&State> {
        self.survey.check_len(x)?;
        if self.state.as_ref().is_some_and(|s| s.x == x) {
            return Ok(self.state.as_ref().unwrap());
        }
        let m: Vec<f64> = x.iter().map(|v| v * self.unit).collect();
        let mut lus = Vec::with_capacity(self.survey.systems.len());
        let mut fields = Vec::with_capacity(self.survey.systems.len());
        for (sys, b) in self.survey.systems.iter_mut().zip(&self.survey.sources) {
            sys.set_model(&m)?;
            let lu = sys.factorize(&mut self.factorizer)?;
            fields.push(lu.solve_block(b)?);
            lus.push(lu);
        }
        self.state = Some(State {
            x: x.to_vec(),
            lus,
            fields,
        });
        Ok(self.state.as_ref().unwrap())
    }

    /// Synthetic data `P A(m)^{-1} b` at parameters `x`.
    pub fn simulate(&mut self, x: &[f64]) -> Result<FreqData> {
        let rows = self.survey.rows.clone();
        let freqs = self.survey.acq.frequencies.clone();
        let state = self.ensure(x)?;
        let blocks = freqs
            .iter()
            .zip(&state.fields)
            .map(|(&f, us)| {
                let mut b = FreqBlock::zeros(f, rows.len(), us.len());
                for (s, u) in us.iter().enumerate() {
                    for (r, &row) in rows.iter().enumerate() {
                        b.set(r, s, u[row]);
                    }
                }
                b
            })
            .collect();
        Ok(FreqData::new(blocks))
    }

    /// Residuals `P u - d` per frequency and source.
    fn residuals(&mut self, x: &[f64]) -> Result<Vec<Vec<Vec<Complex64>>>> {
        let sim = self.simulate(x)?;
        Ok(sim
            .blocks
            .iter()
            .zip(&self.survey.observed.blocks)
            .map(|(s, d)| {
                (0..s.n_src)
                    .map(|j| (0..s.n_rx).map(|r| s.get(r, j) - d.get(r, j)).collect())
                    .collect()
            })
            .collect())
    }

    /// `A^{-H} P^T w_s` for each source, using `A^H = conj(A)` for complex-symmetric `A`.
    fn back_propagate(&self, fi: usize, ws: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::State("no forward state".into()))?;
        let n = self.survey.layout.len();
        let rhs: Vec<Vec<Complex64>> = ws
            .iter()
            .map(|w| {
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for (r, &row) in self.survey.rows.iter().enumerate() {
                    v[row] = w[r].conj();
                }
                v
            })
            .collect();
        Ok(state.lus[fi].solve_block(&rhs)?.iter().map(|v| conj_all(v)).collect())
    }

    /// Accumulates `-w^2 unit Re(conj(u_j) lambda_j)` over interior cells.
    fn correlate(&self, fi: usize, adjoint: &[Vec<Complex64>], out: &mut [f64]) {
        let state = self.state.as_ref().unwrap();
        let w2 = self.survey.systems[fi].omega().powi(2) * self.unit;
        let interior = self.survey.systems[fi].interior();
        for (u, lam) in state.fields[fi].iter().zip(adjoint) {
            for (j, &k) in interior.iter().enumerate() {
                out[j] -= w2 * (u[k].conj() * lam[k]).re;
            }
        }
    }
}

impl MisfitOracle for FwiOracle {
    fn dim(&self) -> usize {
        self.survey.n_params()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        let res = self.residuals(x)?;
        Ok(0.5 * res.iter().flatten().flatten().map(|z| z.norm_sqr()).sum::<f64>())
    }

    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let res = self.residuals(x)?;
        let value = 0.5 * res.iter().flatten().flatten().map(|z| z.norm_sqr()).sum::<f64>();
        let mut grad = vec![0.0; x.len()];
        for (fi, r) in res.iter().enumerate() {
            let lam = self.back_propagate(fi, r)?;
            self.correlate(fi, &lam, &mut grad);
        }
        Ok((value, grad))
    }

    /// Gauss-Newton product `J^T J v`.
    fn hvp(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.survey.check_len(v)?;
        self.ensure(x)?;
        let mut out = vec![0.0; x.len()];
        let n = self.survey.layout.len();
        for fi in 0..self.survey.systems.len() {
            let sys = &self.survey.systems[fi];
            let w2 = sys.omega().powi(2) * self.unit;
            let interior = sys.interior();
            let state = self.state.as_ref().unwrap();
            // linearized fields from virtual sources -w^2 diag(v) u
            let virtual_sources: Vec<Vec<Complex64>> = state.fields[fi]
                .iter()
                .map(|u| {
                    let mut s = vec![Complex64::new(0.0, 0.0); n];
                    for (j, &k) in interior.iter().enumerate() {
                        s[k] = -w2 * v[j] * u[k];
                    }
                    s
                })
                .collect();
            let du = state.lus[fi].solve_block(&virtual_sources)?;
            let jv: Vec<Vec<Complex64>> = du
                .iter()
                .map(|d| self.survey.rows.iter().map(|&row| d[row]).collect())
                .collect();
            let lam = self.back_propagate(fi, &jv)?;
            self.correlate(fi, &lam, &mut out);
        }
        Ok(out)
    }

    fn data_residual(&mut self, x: &[f64]) -> Option<Result<f64>> {
        Some(
            self.residuals(x)
                .map(|res| res.iter().flatten().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()),
        )
    }
}
