//! Frequency-domain acoustic modeling on a 5-point stencil with PML absorbing layers.
//!
//! Conventions: time dependence `exp(-i w t)`, equation `(Laplacian + w^2 m) u = b` with `m`
//! the squared slowness, so a unit point source in a homogeneous medium radiates
//! `-(i/4) H0(k r)`. The PML stretches each coordinate by `s = 1 + i sigma / w`; rows are
//! scaled by `s_x s_z` which keeps the matrix complex-symmetric.
//!
//! The computational grid is the interior model plus a collar of `pml_cells` on every side
//! (none on top with a free surface). Collar parameters are fixed when a
//! [`HelmholtzSystem`] is built and never change afterwards, so `A(m)` is affine in the
//! interior values: `A(m) = A_0 + w^2 diag(m)`.

use log::warn;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linsys::{ComplexSparseMatrix, Factorization, Factorizer};
use crate::model::{AcquisitionGeometry, FreqBlock, FreqData, GridKind, ModelGrid};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Minimum points per wavelength below which assembly warns.
pub const MIN_POINTS_PER_WAVELENGTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveOptions {
    pub pml_cells: usize,
    /// Homogeneous Dirichlet condition on the top edge instead of a PML.
    pub free_surface: bool,
    /// Target normal-incidence reflection coefficient of the PML.
    pub pml_reflection: f64,
    /// Ricker peak frequency in Hz.
    pub f_peak: f64,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            pml_cells: 10,
            free_surface: false,
            pml_reflection: 1e-3,
            f_peak: 10.0,
        }
    }
}

impl WaveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.pml_cells < 5 {
            return Err(Error::Domain(format!(
                "need at least 5 PML cells, got {}",
                self.pml_cells
            )));
        }
        if !(self.pml_reflection > 0.0 && self.pml_reflection < 1.0) {
            return Err(Error::Domain(format!(
                "PML reflection must lie in (0, 1), got {}",
                self.pml_reflection
            )));
        }
        if !(self.f_peak > 0.0 && self.f_peak.is_finite()) {
            return Err(Error::Domain(format!(
                "peak frequency must be positive, got {}",
                self.f_peak
            )));
        }
        Ok(())
    }
}

/// Zero-phase Ricker spectrum `(2/sqrt(pi)) f^2/f_p^3 exp(-f^2/f_p^2)`.
pub fn ricker_amplitude(f: f64, f_peak: f64) -> Result<Complex64> {
    if !(f > 0.0 && f.is_finite() && f_peak > 0.0 && f_peak.is_finite()) {
        return Err(Error::Domain(format!(
            "Ricker spectrum needs positive frequencies, got f = {f}, f_peak = {f_peak}"
        )));
    }
    let r = f / f_peak;
    let a = 2.0 / std::f64::consts::PI.sqrt() * r * r / f_peak * (-r * r).exp();
    Ok(Complex64::new(a, 0.0))
}

/// Index bookkeeping between the interior model and the padded computational grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub nz: usize,
    pub nx: usize,
    pub dz: f64,
    pub dx: f64,
    pub npml: usize,
    /// Collar rows above the interior (0 with a free surface).
    pub top: usize,
}

impl Layout {
    pub fn new(nz: usize, nx: usize, dz: f64, dx: f64, opts: &WaveOptions) -> Self {
        Self {
            nz,
            nx,
            dz,
            dx,
            npml: opts.pml_cells,
            top: if opts.free_surface { 0 } else { opts.pml_cells },
        }
    }

    pub fn nzp(&self) -> usize {
        self.top + self.nz + self.npml
    }

    pub fn nxp(&self) -> usize {
        self.nx + 2 * self.npml
    }

    pub fn len(&self) -> usize {
        self.nzp() * self.nxp()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Padded index of interior cell `(iz, ix)`.
    pub fn padded(&self, iz: usize, ix: usize) -> usize {
        (iz + self.top) * self.nxp() + ix + self.npml
    }

    /// Padded indices of all interior cells, in interior row-major order.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.nz)
            .flat_map(|iz| (0..self.nx).map(move |ix| (iz, ix)))
            .map(|(iz, ix)| self.padded(iz, ix))
            .collect()
    }

    /// Extends interior values to the padded grid by repeating the nearest edge value.
    pub fn pad(&self, interior: &[f64]) -> Result<Vec<f64>> {
        if interior.len() != self.nz * self.nx {
            return Err(Error::DimensionMismatch {
                expected: self.nz * self.nx,
                got: interior.len(),
            });
        }
        let (nzp, nxp) = (self.nzp(), self.nxp());
        let mut out = Vec::with_capacity(nzp * nxp);
        for pz in 0..nzp {
            let iz = pz.saturating_sub(self.top).min(self.nz - 1);
            for px in 0..nxp {
                let ix = px.saturating_sub(self.npml).min(self.nx - 1);
                out.push(interior[iz * self.nx + ix]);
            }
        }
        Ok(out)
    }

    /// Distance (in cells) of padded coordinate `q` beyond the interior along one axis.
    fn depth(q: f64, first: usize, last: usize) -> f64 {
        (first as f64 - q).max(q - last as f64).max(0.0)
    }
}

/// `A(m)` for one angular frequency, with a fixed PML collar.
#[derive(Debug, Clone)]
pub struct HelmholtzSystem {
    layout: Layout,
    omega: f64,
    /// Stencil plus collar mass terms; zero mass on interior rows.
    base: ComplexSparseMatrix,
    matrix: ComplexSparseMatrix,
    interior: Vec<usize>,
}

impl HelmholtzSystem {
    /// Assembles `A(m)` with the collar filled by edge replication of `model`.
    pub fn assemble(model: &ModelGrid, omega: f64, opts: &WaveOptions) -> Result<Self> {
        if model.kind() != GridKind::SquaredSlowness {
            return Err(Error::Domain("Helmholtz assembly expects squared slowness".into()));
        }
        let layout = Layout::new(model.nz(), model.nx(), model.dz(), model.dx(), opts);
        let background = layout.pad(model.values())?;
        let mut sys = Self::with_background(layout, &background, omega, opts)?;
        sys.set_model(model.values())?;
        Ok(sys)
    }

    /// Builds the operator from padded squared-slowness values. Interior values are ignored;
    /// set them with [`HelmholtzSystem::set_model`].
    pub fn with_background(layout: Layout, background: &[f64], omega: f64, opts: &WaveOptions) -> Result<Self> {
        opts.validate()?;
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Domain(format!(
                "angular frequency must be positive, got {omega}"
            )));
        }
        if background.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: background.len(),
            });
        }
        if background.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("squared slowness must be positive".into()));
        }
        let (nzp, nxp) = (layout.nzp(), layout.nxp());
        let interior = layout.interior_indices();
        let mut is_interior = vec![false; layout.len()];
        for &k in &interior {
            is_interior[k] = true;
        }
        // the damping depends on the collar only, so it does not move with the interior model
        let v_max = background
            .iter()
            .zip(&is_interior)
            .filter(|(_, inside)| !**inside)
            .fold(0.0f64, |a, (&m, _)| a.max(1.0 / m.sqrt()));
        let v_min = background.iter().fold(f64::INFINITY, |a, &m| a.min(1.0 / m.sqrt()));
        let ppw = v_min / (omega / (2.0 * std::f64::consts::PI)) / layout.dz.max(layout.dx);
        if ppw < MIN_POINTS_PER_WAVELENGTH {
            warn!(
                "only {ppw:.1} points per wavelength at {:.2} Hz",
                omega / (2.0 * std::f64::consts::PI)
            );
        }

        let npml = layout.npml as f64;
        let stretch = |depth_cells: f64, h: f64| {
            let l = npml * h;
            let sigma_max = -3.0 * opts.pml_reflection.ln() * v_max / (2.0 * l);
            let d = depth_cells * h;
            Complex64::new(1.0, sigma_max * (d / l).powi(2) / omega)
        };
        let x_last = layout.npml + layout.nx - 1;
        let z_last = layout.top + layout.nz - 1;
        let sx = |q: f64| stretch(Layout::depth(q, layout.npml, x_last), layout.dx);
        let sz = |q: f64| {
            let d = if layout.top == 0 {
                (q - z_last as f64).max(0.0)
            } else {
                Layout::depth(q, layout.top, z_last)
            };
            stretch(d, layout.dz)
        };

        let (idx2, idz2) = (1.0 / (layout.dx * layout.dx), 1.0 / (layout.dz * layout.dz));
        let mut triplets = Vec::with_capacity(5 * layout.len());
        for pz in 0..nzp {
            let szn = sz(pz as f64);
            for px in 0..nxp {
                let k = pz * nxp + px;
                let sxn = sx(px as f64);
                let cxm = szn / sx(px as f64 - 0.5) * idx2;
                let cxp = szn / sx(px as f64 + 0.5) * idx2;
                let czm = sxn / sz(pz as f64 - 0.5) * idz2;
                let czp = sxn / sz(pz as f64 + 0.5) * idz2;
                let mut diag = -(cxm + cxp + czm + czp);
                if !is_interior[k] {
                    diag += omega * omega * background[k] * sxn * szn;
                }
                triplets.push((k, k, diag));
                if px > 0 {
                    triplets.push((k, k - 1, cxm));
                }
                if px + 1 < nxp {
                    triplets.push((k, k + 1, cxp));
                }
                if pz > 0 {
                    triplets.push((k, k - nxp, czm));
                }
                if pz + 1 < nzp {
                    triplets.push((k, k + nxp, czp));
                }
            }
        }
        let base = ComplexSparseMatrix::from_triplets(layout.len(), layout.len(), &triplets)?;
        Ok(Self {
            layout,
            omega,
            matrix: base.clone(),
            base,
            interior,
        })
    }

    /// Sets the interior squared slowness: `A = A_0 + w^2 diag(m)` on interior rows.
    pub fn set_model(&mut self, m: &[f64]) -> Result<()> {
        if m.len() != self.interior.len() {
            return Err(Error::DimensionMismatch {
                expected: self.interior.len(),
                got: m.len(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("model contains non-finite values".into()));
        }
        let w2 = self.omega * self.omega;
        let diag: Vec<Complex64> = m.iter().map(|&v| Complex64::new(w2 * v, 0.0)).collect();
        self.matrix = self.base.clone();
        self.matrix.add_to_diagonal(&self.interior, &diag)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn matrix(&self) -> &ComplexSparseMatrix {
        &self.matrix
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn factorize(&self, factorizer: &mut Factorizer) -> Result<Factorization> {
        factorizer.lu(&self.matrix)
    }

    /// Point sources of amplitude `amp / (dz dx)` at the nearest node, one vector per source.
    pub fn source_vectors(&self, sources: &[(usize, usize)], amp: Complex64) -> Result<Vec<Vec<Complex64>>> {
        let scale = amp / (self.layout.dz * self.layout.dx);
        sources
            .iter()
            .map(|&(iz, ix)| {
                self.check_position(iz, ix)?;
                let mut b = vec![ZERO; self.layout.len()];
                b[self.layout.padded(iz, ix)] = scale;
                Ok(b)
            })
            .collect()
    }

    /// Padded indices of the receivers (the rows selected by `P`).
    pub fn receiver_rows(&self, receivers: &[(usize, usize)]) -> Result<Vec<usize>> {
        receivers
            .iter()
            .map(|&(iz, ix)| {
                self.check_position(iz, ix)?;
                Ok(self.layout.padded(iz, ix))
            })
            .collect()
    }

    fn check_position(&self, iz: usize, ix: usize) -> Result<()> {
        if iz >= self.layout.nz || ix >= self.layout.nx {
            return Err(Error::Geometry(format!(
                "position ({iz}, {ix}) outside the {}x{} interior",
                self.layout.nz, self.layout.nx
            )));
        }
        Ok(())
    }
}

fn angular(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

fn check_model(model: &ModelGrid, acq: &AcquisitionGeometry) -> Result<()> {
    if model.kind() != GridKind::SquaredSlowness {
        return Err(Error::Domain("wave modeling expects a squared-slowness model".into()));
    }
    acq.validate(model.nz(), model.nx())
}

/// Wavefields for one frequency, one padded-grid vector per source.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFields {
    pub frequency: f64,
    pub fields: Vec<Vec<Complex64>>,
}

/// Solves `A(m) u = b` for every source and frequency.
pub fn forward_fields(
    model: &ModelGrid,
    acq: &AcquisitionGeometry,
    opts: &WaveOptions,
) -> Result<Vec<FrequencyFields>> {
    check_model(model, acq)?;
    let mut factorizer = Factorizer::new();
    acq.frequencies
        .iter()
        .map(|&f| {
            let sys = HelmholtzSystem::assemble(model, angular(f), opts)?;
            let lu = sys.factorize(&mut factorizer)?;
            let b = sys.source_vectors(&acq.sources, ricker_amplitude(f, opts.f_peak)?)?;
            Ok(FrequencyFields {
                frequency: f,
                fields: lu.solve_block(&b)?,
            })
        })
        .collect()
}

/// Samples fields at the receivers into a data block.
pub fn sample(
    sys: &HelmholtzSystem,
    acq: &AcquisitionGeometry,
    f: f64,
    fields: &[Vec<Complex64>],
) -> Result<FreqBlock> {
    let rows = sys.receiver_rows(&acq.receivers)?;
    let mut block = FreqBlock::zeros(f, rows.len(), fields.len());
    for (s, u) in fields.iter().enumerate() {
        for (r, &row) in rows.iter().enumerate() {
            block.set(r, s, u[row]);
        }
    }
    Ok(block)
}

/// `F(m) = P A(m)^{-1} b` for every frequency of `acq`.
pub fn forward(model: &ModelGrid, acq: &AcquisitionGeometry, opts: &WaveOptions) -> Result<FreqData> {
    check_model(model, acq)?;
    let mut factorizer = Factorizer::new();
    let mut blocks = Vec::with_capacity(acq.frequencies.len());
    for &f in &acq.frequencies {
        let sys = HelmholtzSystem::assemble(model, angular(f), opts)?;
        let lu = sys.factorize(&mut factorizer)?;
        let b = sys.source_vectors(&acq.sources, ricker_amplitude(f, opts.f_peak)?)?;
        let u = lu.solve_block(&b)?;
        blocks.push(sample(&sys, acq, f, &u)?);
    }
    Ok(FreqData::new(blocks))
}

/// Least-squares solutions of `[A; mu P] u = [b; mu d]` for every source of one frequency,
/// from the normal equations `(A^H A + mu^2 P^T P) u = A^H b + mu^2 P^T d` and one sparse
/// Cholesky factorization.
pub fn solve_augmented_system(
    sys: &HelmholtzSystem,
    receiver_rows: &[usize],
    sources: &[Vec<Complex64>],
    observed: &FreqBlock,
    mu: f64,
    factorizer: &mut Factorizer,
) -> Result<Vec<Vec<Complex64>>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("penalty mu must be positive, got {mu}")));
    }
    if observed.n_rx != receiver_rows.len() || observed.n_src != sources.len() {
        return Err(Error::DimensionMismatch {
            expected: receiver_rows.len() * sources.len(),
            got: observed.n_rx * observed.n_src,
        });
    }
    let a = sys.matrix();
    let mut normal = a.adjoint().matmul(a)?;
    let mu2 = mu * mu;
    normal.add_to_diagonal(receiver_rows, &vec![Complex64::new(mu2, 0.0); receiver_rows.len()])?;
    let chol = factorizer.cholesky(&normal)?;
    let rhs = sources
        .iter()
        .enumerate()
        .map(|(s, b)| {
            let mut r = a.adjoint_mul_vec(b)?;
            for (i, &row) in receiver_rows.iter().enumerate() {
                r[row] += mu2 * observed.get(i, s);
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    chol.solve_block(&rhs)
}

/// Data-assimilated wavefields for every frequency of `acq` (see [`solve_augmented_system`]).
pub fn solve_augmented(
    model: &ModelGrid,
    acq: &AcquisitionGeometry,
    observed: &FreqData,
    mu: f64,
    opts: &WaveOptions,
) -> Result<Vec<FrequencyFields>> {
    check_model(model, acq)?;
    observed.check_geometry(acq)?;
    let mut factorizer = Factorizer::new();
    acq.frequencies
        .iter()
        .map(|&f| {
            let block = observed
                .block(f)
                .ok_or_else(|| Error::Geometry(format!("no observed data at {f} Hz")))?;
            let sys = HelmholtzSystem::assemble(model, angular(f), opts)?;
            let rows = sys.receiver_rows(&acq.receivers)?;
            let b = sys.source_vectors(&acq.sources, ricker_amplitude(f, opts.f_peak)?)?;
            Ok(FrequencyFields {
                frequency: f,
                fields: solve_augmented_system(&sys, &rows, &b, block, mu, &mut factorizer)?,
            })
        })
        .collect()
}

/// Signal-to-noise target for [`add_noise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Leave the data untouched.
    Noiseless,
    Db(f64),
}

/// Adds seeded circular complex Gaussian noise. Each frequency block is rescaled after the
/// draw so its own SNR, and hence the SNR of the whole data set, equals the target exactly.
///
/// Returns the noisy data and the noise that was added.
pub fn add_noise(data: &FreqData, level: NoiseLevel, seed: u64) -> Result<(FreqData, FreqData)> {
    let zero_like = || {
        FreqData::new(
            data.blocks
                .iter()
                .map(|b| FreqBlock::zeros(b.frequency, b.n_rx, b.n_src))
                .collect(),
        )
    };
    let snr_db = match level {
        NoiseLevel::Noiseless => return Ok((data.clone(), zero_like())),
        NoiseLevel::Db(v) if v.is_finite() => v,
        NoiseLevel::Db(v) if v == f64::INFINITY => return Ok((data.clone(), zero_like())),
        NoiseLevel::Db(v) => return Err(Error::Domain(format!("invalid SNR {v} dB"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = Vec::with_capacity(data.blocks.len());
    let mut noise = Vec::with_capacity(data.blocks.len());
    for b in &data.blocks {
        let signal_rms = rms(&b.values);
        if signal_rms == 0.0 {
            return Err(Error::Domain(format!("data at {} Hz are all zero", b.frequency)));
        }
        let draw: Vec<Complex64> = (0..b.values.len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let scale = signal_rms * 10f64.powf(-snr_db / 20.0) / rms(&draw);
        let n: Vec<Complex64> = draw.iter().map(|v| v * scale).collect();
        let values = b.values.iter().zip(&n).map(|(s, e)| s + e).collect();
        noisy.push(FreqBlock::new(b.frequency, b.n_rx, b.n_src, values)?);
        noise.push(FreqBlock::new(b.frequency, b.n_rx, b.n_src, n)?);
    }
    Ok((FreqData::new(noisy), FreqData::new(noise)))
}

fn rms(v: &[Complex64]) -> f64 {
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::factorize;

    fn homogeneous(n: usize, h: f64, v: f64) -> ModelGrid {
        ModelGrid::constant(n, n, h, h, GridKind::Velocity, v)
            .unwrap()
            .convert(GridKind::SquaredSlowness)
            .unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn ricker_examples() {
        let fp = 10.0;
        let a = ricker_amplitude(fp, fp).unwrap();
        let expected = 2.0 / std::f64::consts::PI.sqrt() / (fp * std::f64::consts::E);
        assert!((a.re - expected).abs() < 1e-15 && a.im == 0.0);
        assert!(ricker_amplitude(1e-6, fp).unwrap().re < 1e-12);
        assert!(ricker_amplitude(0.0, fp).is_err());
        assert!(ricker_amplitude(5.0, -1.0).is_err());

        let (mut best, mut arg) = (0.0, 0.0);
        for i in 1..=40_000 {
            let f = i as f64 * 1e-3;
            let v = ricker_amplitude(f, fp).unwrap().re;
            if v > best {
                best = v;
                arg = f;
            }
        }
        assert!((arg - fp).abs() <= 1e-3);
    }

    #[test]
    fn interior_stencil_entries() {
        let h = 25.0;
        let model = homogeneous(21, h, 2000.0);
        let omega = angular(5.0);
        let sys = HelmholtzSystem::assemble(&model, omega, &WaveOptions::default()).unwrap();
        let a = sys.matrix();
        let k = sys.layout().padded(10, 10);
        let nxp = sys.layout().nxp();
        let diag = -4.0 / (h * h) + omega * omega / (2000.0 * 2000.0);
        assert!((a.get(k, k) - c(diag)).norm() < 1e-15);
        for j in [k - 1, k + 1, k - nxp, k + nxp] {
            assert!((a.get(k, j) - c(1.0 / (h * h))).norm() < 1e-18);
        }
        assert_eq!(a.row(k).count(), 5);
        let row_sum: Complex64 = a.row(k).map(|(_, v)| v).sum();
        assert!((row_sum - c(omega * omega / 4e6)).norm() < 1e-15);
    }

    #[test]
    fn assembly_is_symmetric_and_sized() {
        let model = homogeneous(12, 20.0, 1800.0);
        for free_surface in [false, true] {
            let opts = WaveOptions {
                pml_cells: 6,
                free_surface,
                ..WaveOptions::default()
            };
            let sys = HelmholtzSystem::assemble(&model, angular(7.0), &opts).unwrap();
            let l = sys.layout();
            let expected_rows = if free_surface { 12 + 6 } else { 12 + 12 };
            assert_eq!(l.nzp(), expected_rows);
            assert_eq!(sys.matrix().n_rows(), l.nzp() * 24);
            assert_eq!(sys.matrix().max_asymmetry(), 0.0);
        }
    }

    #[test]
    fn preconditions_rejected() {
        let model = homogeneous(12, 20.0, 1800.0);
        let bad = WaveOptions {
            pml_cells: 0,
            ..WaveOptions::default()
        };
        assert!(HelmholtzSystem::assemble(&model, 10.0, &bad).is_err());
        assert!(HelmholtzSystem::assemble(&model, 0.0, &WaveOptions::default()).is_err());
        let vel = model.convert(GridKind::Velocity).unwrap();
        assert!(HelmholtzSystem::assemble(&vel, 10.0, &WaveOptions::default()).is_err());
    }

    #[test]
    fn assembly_is_affine_in_the_model() {
        let layout_model = homogeneous(10, 20.0, 2000.0);
        let opts = WaveOptions {
            pml_cells: 5,
            ..WaveOptions::default()
        };
        let omega = angular(6.0);
        let mut sys = HelmholtzSystem::assemble(&layout_model, omega, &opts).unwrap();
        let m1: Vec<f64> = (0..100).map(|i| 2.5e-7 * (1.0 + 0.01 * (i % 7) as f64)).collect();
        let m2: Vec<f64> = (0..100).map(|i| 2.5e-7 * (1.0 - 0.02 * (i % 3) as f64)).collect();
        sys.set_model(&m1).unwrap();
        let a1 = sys.matrix().clone();
        sys.set_model(&m2).unwrap();
        let a2 = sys.matrix().clone();
        let mut expected = vec![0.0; a1.n_rows()];
        for (i, &k) in sys.interior().iter().enumerate() {
            expected[k] = omega * omega * (m1[i] - m2[i]);
        }
        assert_eq!(a1.col_indices(), a2.col_indices());
        for (r, &diag) in expected.iter().enumerate() {
            for (c_, v) in a1.row(r) {
                let d = v - a2.get(r, c_);
                let want = if r == c_ { diag } else { 0.0 };
                assert!((d.re - want).abs() <= 1e-12 * omega * omega * 2.5e-7 && d.im.abs() < 1e-20);
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_data() {
        let model = homogeneous(12, 20.0, 2000.0);
        let sys = HelmholtzSystem::assemble(&model, angular(5.0), &WaveOptions::default()).unwrap();
        let lu = factorize(sys.matrix()).unwrap();
        let b = sys.source_vectors(&[(3, 4)], ZERO).unwrap();
        let u = lu.solve_block(&b).unwrap();
        assert!(u[0].iter().all(|v| *v == ZERO));
    }

    #[test]
    fn reciprocity() {
        let mut model = homogeneous(16, 20.0, 2000.0);
        let mut vals = model.values().to_vec();
        for iz in 5..10 {
            for ix in 6..12 {
                vals[iz * 16 + ix] = 1.0 / (2500.0f64 * 2500.0);
            }
        }
        let hetero = model.with_values(vals).unwrap();
        for m in [&mut model, &mut hetero.clone()] {
            let a = (2, 3);
            let b = (13, 11);
            let acq1 = AcquisitionGeometry::new(vec![a], vec![b], vec![8.0, 12.0]).unwrap();
            let acq2 = AcquisitionGeometry::new(vec![b], vec![a], vec![8.0, 12.0]).unwrap();
            let opts = WaveOptions {
                pml_cells: 8,
                ..WaveOptions::default()
            };
            let d1 = forward(m, &acq1, &opts).unwrap();
            let d2 = forward(m, &acq2, &opts).unwrap();
            for (x, y) in d1.blocks.iter().zip(&d2.blocks) {
                let (p, q) = (x.get(0, 0), y.get(0, 0));
                assert!((p - q).norm() <= 1e-8 * p.norm(), "{p} vs {q}");
            }
        }
    }

    fn small_problem() -> (ModelGrid, AcquisitionGeometry, WaveOptions) {
        let model = homogeneous(12, 20.0, 2000.0);
        let acq =
            AcquisitionGeometry::new(vec![(1, 3), (1, 8)], vec![(10, 2), (10, 6), (6, 10)], vec![6.0, 9.0]).unwrap();
        let opts = WaveOptions {
            pml_cells: 5,
            ..WaveOptions::default()
        };
        (model, acq, opts)
    }

    fn dense_lstsq(sys: &HelmholtzSystem, rows: &[usize], b: &[Complex64], d: &[Complex64], mu: f64) -> Vec<Complex64> {
        use faer::linalg::solvers::SolveLstsq;
        let n = sys.matrix().n_rows();
        let a = sys.matrix().to_dense();
        let m = n + rows.len();
        let stacked = faer::Mat::<Complex64>::from_fn(m, n, |i, j| {
            if i < n {
                a[i * n + j]
            } else if rows[i - n] == j {
                c(mu)
            } else {
                ZERO
            }
        });
        let rhs = faer::Mat::<Complex64>::from_fn(m, 1, |i, _| if i < n { b[i] } else { mu * d[i - n] });
        let x = stacked.qr().solve_lstsq(&rhs);
        (0..n).map(|i| x[(i, 0)]).collect()
    }

    #[test]
    fn augmented_solve_matches_dense_least_squares() {
        let (model, acq, opts) = small_problem();
        let f = 6.0;
        let sys = HelmholtzSystem::assemble(&model, angular(f), &opts).unwrap();
        let rows = sys.receiver_rows(&acq.receivers).unwrap();
        let b = sys
            .source_vectors(&acq.sources, ricker_amplitude(f, 10.0).unwrap())
            .unwrap();
        let mut obs = FreqBlock::zeros(f, 3, 2);
        for r in 0..3 {
            for s in 0..2 {
                obs.set(r, s, Complex64::new(1e-3 * (r as f64 + 1.0), -2e-3 * s as f64));
            }
        }
        let mu = 1e-4;
        let u = solve_augmented_system(&sys, &rows, &b, &obs, mu, &mut Factorizer::new()).unwrap();
        for s in 0..2 {
            let d: Vec<Complex64> = (0..3).map(|r| obs.get(r, s)).collect();
            let reference = dense_lstsq(&sys, &rows, &b[s], &d, mu);
            let err: f64 = u[s]
                .iter()
                .zip(&reference)
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let scale: f64 = reference.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * scale, "{err} vs {scale}");

            // optimality of 0.5||b - Au||^2 + 0.5 mu^2 ||Pu - d||^2
            let a = sys.matrix();
            let r: Vec<Complex64> = a
                .mul_vec(&u[s])
                .unwrap()
                .iter()
                .zip(&b[s])
                .map(|(x, y)| x - y)
                .collect();
            let mut grad = a.adjoint_mul_vec(&r).unwrap();
            for (i, &row) in rows.iter().enumerate() {
                grad[row] += mu * mu * (u[s][row] - d[i]);
            }
            let gn: f64 = grad.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let bn: f64 = b[s].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let dn: f64 = d.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let an = a.values().iter().fold(0.0f64, |m, v| m.max(v.norm()));
            // the normal equations carry A^H, so scale the bound by a norm of A
            assert!(gn <= 1e-9 * an * (bn + mu * dn), "{gn}");
        }
    }

    #[test]
    fn augmented_solve_limits() {
        let (model, acq, opts) = small_problem();
        let clean = forward_fields(&model, &acq, &opts).unwrap();
        let mut perturbed = forward(&model, &acq, &opts).unwrap();
        for b in &mut perturbed.blocks {
            for v in &mut b.values {
                *v *= Complex64::new(1.3, 0.2);
            }
        }
        let sys = HelmholtzSystem::assemble(&model, angular(6.0), &opts).unwrap();
        let a_scale = sys.matrix().values().iter().fold(0.0f64, |m, v| m.max(v.norm()));

        let tiny = solve_augmented(&model, &acq, &perturbed, 1e-8 * a_scale, &opts).unwrap();
        for (t, cf) in tiny.iter().zip(&clean) {
            for (u, v) in t.fields.iter().zip(&cf.fields) {
                let err: f64 = u.iter().zip(v).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                let n: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                assert!(err < 1e-4 * n);
            }
        }

        let rows = sys.receiver_rows(&acq.receivers).unwrap();
        let block = perturbed.block(6.0).unwrap();
        let mut last = f64::INFINITY;
        for k in -4..=2 {
            let mu = a_scale * 10f64.powi(k);
            let u = solve_augmented(
                &model,
                &acq.with_frequencies(vec![6.0]).unwrap(),
                &perturbed.subset(&[6.0]).unwrap(),
                mu,
                &opts,
            )
            .unwrap();
            let mut r2 = 0.0;
            for (s, field) in u[0].fields.iter().enumerate() {
                for (i, &row) in rows.iter().enumerate() {
                    r2 += (field[row] - block.get(i, s)).norm_sqr();
                }
            }
            assert!(r2.sqrt() <= last, "mu = {mu}: {} > {last}", r2.sqrt());
            last = r2.sqrt();
        }
        assert!(solve_augmented(&model, &acq, &perturbed, 0.0, &opts).is_err());
    }

    #[test]
    fn noise_hits_the_target_snr() {
        let (model, acq, opts) = small_problem();
        let data = forward(&model, &acq, &opts).unwrap();
        let (same, zero) = add_noise(&data, NoiseLevel::Noiseless, 1).unwrap();
        assert_eq!(same, data);
        assert_eq!(zero.norm(), 0.0);
        assert_eq!(add_noise(&data, NoiseLevel::Db(f64::INFINITY), 1).unwrap().0, data);

        let all = |d: &FreqData| d.blocks.iter().flat_map(|b| b.values.clone()).collect::<Vec<_>>();
        for snr in [0.0, 5.0, 20.0] {
            let (noisy, noise) = add_noise(&data, NoiseLevel::Db(snr), 42).unwrap();
            let realized = 20.0 * (rms(&all(&data)) / rms(&all(&noise))).log10();
            assert!((realized - snr).abs() < 1e-9, "{realized}");
            let diff = noisy.sub(&data).unwrap();
            assert!(diff.sub(&noise).unwrap().norm() <= 1e-15 * data.norm());
        }
        let (a, _) = add_noise(&data, NoiseLevel::Db(5.0), 7).unwrap();
        let (b, _) = add_noise(&data, NoiseLevel::Db(5.0), 7).unwrap();
        assert_eq!(a, b);

        let zeros = FreqData::new(vec![FreqBlock::zeros(5.0, 2, 1)]);
        assert!(add_noise(&zeros, NoiseLevel::Db(5.0), 1).is_err());
    }
}
