use num_complex::Complex64;

use super::Survey;
use crate::error::{Error, Result};
use crate::linsys::Factorizer;
use crate::optim::MisfitOracle;
use crate::wave::solve_augmented_system;

/// IR-WRI misfit `0.5 sum ||b - A(m) u||^2` at frozen data-assimilated wavefields `u`.
///
/// [`MisfitOracle::prepare`] recomputes the wavefields from the penalized system
/// `[A(m); mu P] u = [b; mu d]` whenever the outer iterate changes. Since `A` is affine in
/// squared slowness, the Hessian `sum w^4 |u|^2` is diagonal.
/// Wavefields per frequency, then per source.
type Fields = Vec<Vec<Vec<Complex64>>>;

pub struct WriOracle {
    survey: Survey,
    unit: f64,
    mu: f64,
    factorizer: Factorizer,
    /// Parameters the wavefields were computed at, and the fields per frequency and source.
    fields: Option<(Vec<f64>, Fields)>,
}

impl WriOracle {
    pub fn new(survey: Survey, mu: f64) -> Result<Self> {
        Self::with_unit(survey, mu, 1.0)
    }

    /// Parameters are `m / unit`.
    pub fn with_unit(survey: Survey, mu: f64, unit: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("penalty mu must be positive, got {mu}")));
        }
        Ok(Self {
            survey,
            unit,
            mu,
            factorizer: Factorizer::new(),
            fields: None,
        })
    }

    pub fn survey(&self) -> &Survey {
        &self.survey
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// The cached wavefields, if any.
    pub fn wavefields(&self) -> Option<&[Vec<Vec<Complex64>>]> {
        self.fields.as_ref().map(|(_, f)| f.as_slice())
    }

    /// Replaces the cached wavefields (shapes are checked).
    pub fn set_wavefields(&mut self, x: &[f64], fields: Vec<Vec<Vec<Complex64>>>) -> Result<()> {
        self.survey.check_len(x)?;
        let n = self.survey.layout.len();
        let ok = fields.len() == self.survey.systems.len()
            && fields
                .iter()
                .all(|f| f.len() == self.survey.acq.sources.len() && f.iter().all(|u| u.len() == n));
        if !ok {
            return Err(Error::Geometry("wavefield shapes do not match the survey".into()));
        }
        self.fields = Some((x.to_vec(), fields));
        Ok(())
    }

    /// Solves the penalized wavefield system at parameters `x` and caches the result.
    pub fn update_wavefields(&mut self, x: &[f64]) -> Result<()> {
        self.survey.check_len(x)?;
        if self.fields.as_ref().is_some_and(|(at, _)| at == x) {
            return Ok(());
        }
        let m: Vec<f64> = x.iter().map(|v| v * self.unit).collect();
        let mut out = Vec::with_capacity(self.survey.systems.len());
        for fi in 0..self.survey.systems.len() {
            self.survey.systems[fi].set_model(&m)?;
            out.push(solve_augmented_system(
                &self.survey.systems[fi],
                &self.survey.rows,
                &self.survey.sources[fi],
                &self.survey.observed.blocks[fi],
                self.mu,
                &mut self.factorizer,
            )?);
        }
        self.fields = Some((x.to_vec(), out));
        Ok(())
    }

    fn cached(&self) -> Result<&[Vec<Vec<Complex64>>]> {
        self.wavefields()
            .ok_or_else(|| Error::State("wavefields have not been computed; call prepare first".into()))
    }

    /// Source residuals `b - A(m) u` per frequency and source.
    fn source_residuals(&mut self, x: &[f64]) -> Result<Vec<Vec<Vec<Complex64>>>> {
        self.survey.check_len(x)?;
        self.cached()?;
        let m: Vec<f64> = x.iter().map(|v| v * self.unit).collect();
        let mut out = Vec::with_capacity(self.survey.systems.len());
        for fi in 0..self.survey.systems.len() {
            self.survey.systems[fi].set_model(&m)?;
            let a = self.survey.systems[fi].matrix();
            let fields = &self.fields.as_ref().unwrap().1[fi];
            let per_src = fields
                .iter()
                .zip(&self.survey.sources[fi])
                .map(|(u, b)| Ok(a.mul_vec(u)?.iter().zip(b).map(|(au, bi)| bi - au).collect()))
                .collect::<Result<Vec<Vec<Complex64>>>>()?;
            out.push(per_src);
        }
        Ok(out)
    }

    /// `sum w^4 unit^2 |u_j|^2` over frequencies and sources.
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        let fields = self.cached()?;
        let mut d = vec![0.0; self.survey.n_params()];
        for (sys, us) in self.survey.systems.iter().zip(fields) {
            let w4 = sys.omega().powi(4) * self.unit * self.unit;
            for u in us {
                for (j, &k) in sys.interior().iter().enumerate() {
                    d[j] += w4 * u[k].norm_sqr();
                }
            }
        }
        Ok(d)
    }

    /// `0.5 ||b - A u||^2 + 0.5 mu^2 ||P u - d||^2` with the cached wavefields.
    pub fn penalty_objective(&mut self, x: &[f64]) -> Result<f64> {
        let src = self.value(x)?;
        let data = self.data_misfit()?;
        Ok(src + 0.5 * self.mu * self.mu * data * data)
    }

    /// `||P u - d||` over every frequency and source of the cached wavefields.
    pub fn data_misfit(&self) -> Result<f64> {
        let fields = self.cached()?;
        let mut acc = 0.0;
        for (us, block) in fields.iter().zip(&self.survey.observed.blocks) {
            for (s, u) in us.iter().enumerate() {
                for (r, &row) in self.survey.rows.iter().enumerate() {
                    acc += (u[row] - block.get(r, s)).norm_sqr();
                }
            }
        }
        Ok(acc.sqrt())
    }
}

impl MisfitOracle for WriOracle {
    fn dim(&self) -> usize {
        self.survey.n_params()
    }

    fn prepare(&mut self, x: &[f64]) -> Result<()> {
        self.update_wavefields(x)
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        let r = self.source_residuals(x)?;
        Ok(0.5 * r.iter().flatten().flatten().map(|z| z.norm_sqr()).sum::<f64>())
    }

    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.source_residuals(x)?;
        let value = 0.5 * r.iter().flatten().flatten().map(|z| z.norm_sqr()).sum::<f64>();
        let fields = &self.fields.as_ref().unwrap().1;
        let mut g = vec![0.0; x.len()];
        for ((sys, us), rs) in self.survey.systems.iter().zip(fields).zip(&r) {
            let w2 = sys.omega().powi(2) * self.unit;
            for (u, res) in us.iter().zip(rs) {
                for (j, &k) in sys.interior().iter().enumerate() {
                    g[j] -= w2 * (u[k].conj() * res[k]).re;
                }
            }
        }
        Ok((value, g))
    }

    fn hvp(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.survey.check_len(v)?;
        Ok(self.diagonal()?.iter().zip(v).map(|(d, vi)| d * vi).collect())
    }

    fn hessian_diag(&mut self, _x: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.diagonal())
    }

    fn data_residual(&mut self, _x: &[f64]) -> Option<Result<f64>> {
        Some(self.data_misfit())
    }
}
