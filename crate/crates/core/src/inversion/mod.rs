//! Misfit oracles for frequency-domain waveform inversion and the multiscale driver.
//!
//! Both oracles work on squared slowness over the interior grid, optionally divided by a
//! constant `unit` so the optimizer sees values near one. The PML collar keeps the values
//! of the background model the oracle was built from.

mod fwi;
mod multiscale;
mod wri;

pub use fwi::FwiOracle;
pub use multiscale::{
    multiscale_drive, BatchRecord, ContinuationPlan, Formulation, InversionProblem, MultiscaleResult, Penalty,
};
pub use wri::WriOracle;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linsys::{spectral_norm, PowerOptions};
use crate::model::{AcquisitionGeometry, FreqData, GridKind, ModelGrid};
use crate::wave::{ricker_amplitude, HelmholtzSystem, Layout, WaveOptions};

/// Per-frequency operators, sources, receivers and observed data shared by the oracles.
#[derive(Debug, Clone)]
pub struct Survey {
    acq: AcquisitionGeometry,
    observed: FreqData,
    layout: Layout,
    background: Vec<f64>,
    systems: Vec<HelmholtzSystem>,
    sources: Vec<Vec<Vec<Complex64>>>,
    rows: Vec<usize>,
}

impl Survey {
    /// `background` (squared slowness) fixes the PML collar and the PML damping.
    pub fn new(
        background: &ModelGrid,
        acq: &AcquisitionGeometry,
        observed: &FreqData,
        opts: &WaveOptions,
    ) -> Result<Self> {
        if background.kind() != GridKind::SquaredSlowness {
            return Err(Error::Domain("inversion works on squared slowness".into()));
        }
        acq.validate(background.nz(), background.nx())?;
        let observed = observed.subset(&acq.frequencies)?;
        observed.check_geometry(acq)?;
        let layout = Layout::new(background.nz(), background.nx(), background.dz(), background.dx(), opts);
        let padded = layout.pad(background.values())?;
        let mut systems = Vec::with_capacity(acq.frequencies.len());
        let mut sources = Vec::with_capacity(acq.frequencies.len());
        for &f in &acq.frequencies {
            let mut sys = HelmholtzSystem::with_background(layout, &padded, 2.0 * std::f64::consts::PI * f, opts)?;
            sys.set_model(background.values())?;
            sources.push(sys.source_vectors(&acq.sources, ricker_amplitude(f, opts.f_peak)?)?);
            systems.push(sys);
        }
        let rows = systems[0].receiver_rows(&acq.receivers)?;
        Ok(Self {
            acq: acq.clone(),
            observed,
            layout,
            background: background.values().to_vec(),
            systems,
            sources,
            rows,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.nz * self.layout.nx
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.acq
    }

    pub fn observed(&self) -> &FreqData {
        &self.observed
    }

    /// Interior squared slowness of the background model.
    pub fn background(&self) -> &[f64] {
        &self.background
    }

    /// Spectral norm of `A(background)` at the first frequency.
    pub fn operator_norm(&self) -> Result<f64> {
        let a = self.systems[0].matrix();
        let opts = PowerOptions::default();
        Ok(spectral_norm(
            |v: &[Complex64]| a.mul_vec(v),
            Some(|v: &[Complex64]| a.adjoint_mul_vec(v)),
            a.n_rows(),
            opts,
        )?
        .value)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// `100 ||m - m_true|| / ||m_true||`.
pub fn rmse(m: &[f64], m_true: &[f64]) -> Result<f64> {
    if m.len() != m_true.len() {
        return Err(Error::DimensionMismatch {
            expected: m_true.len(),
            got: m.len(),
        });
    }
    let den = m_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Domain("reference model is zero".into()));
    }
    let num = m.iter().zip(m_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(100.0 * num / den)
}

/// RMSE of two grids compared in velocity, whatever kind they are stored in.
pub fn rmse_velocity(m: &ModelGrid, m_true: &ModelGrid) -> Result<f64> {
    if (m.nz(), m.nx()) != (m_true.nz(), m_true.nx()) {
        return Err(Error::DimensionMismatch {
            expected: m_true.nz() * m_true.nx(),
            got: m.nz() * m.nx(),
        });
    }
    let a = m.to_kind(GridKind::Velocity)?;
    let b = m_true.to_kind(GridKind::Velocity)?;
    rmse(a.values(), b.values())
}

/// `20 log10(rms(signal) / rms(noise))`.
pub fn snr_db(signal: &[Complex64], noise: &[Complex64]) -> Result<f64> {
    if signal.is_empty() || noise.is_empty() {
        return Err(Error::Domain("SNR of empty data".into()));
    }
    let rms = |v: &[Complex64]| (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt();
    let (s, n) = (rms(signal), rms(noise));
    if n == 0.0 || s == 0.0 {
        return Err(Error::Domain("SNR needs nonzero signal and noise".into()));
    }
    Ok(20.0 * (s / n).log10())
}

/// [`snr_db`] over every entry of two datasets.
pub fn snr_db_data(signal: &FreqData, noise: &FreqData) -> Result<f64> {
    let flat = |d: &FreqData| {
        d.blocks
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect::<Vec<_>>()
    };
    snr_db(&flat(signal), &flat(noise))
}
