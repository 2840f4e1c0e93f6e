//! Proximal operators and denoisers used as `prox_{c*lambda*R}` inside the solvers.
//!
//! The solvers only ever call [`Denoise::denoise`]; anything that maps a grid to a
//! same-shaped grid deterministically can be plugged in.

use crate::error::{Error, Result};
use crate::model::GridShape;

/// Black-box regularizer: a deterministic, shape-preserving map parameterized by a scale.
///
/// For true proximal operators `denoise(x, s) = argmin_m 0.5*||x - m||^2 + s*R(m)`.
pub trait Denoise {
    fn denoise(&self, x: &[f64], shape: GridShape, scale: f64) -> Result<Vec<f64>>;

    /// `R(x)` when the regularizer has a known functional form.
    fn reg_value(&self, _x: &[f64], _shape: GridShape) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

impl<D: Denoise + ?Sized> Denoise for &D {
    fn denoise(&self, x: &[f64], shape: GridShape, scale: f64) -> Result<Vec<f64>> {
        (**self).denoise(x, shape, scale)
    }

    fn reg_value(&self, x: &[f64], shape: GridShape) -> Option<f64> {
        (**self).reg_value(x, shape)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Non-local means parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Bandwidth in units of the grid values; multiplied by the scale on each call.
    pub h: f64,
    /// Noise standard deviation subtracted from patch distances.
    pub sigma: f64,
}

/// The bundled regularizers.
#[derive(Debug, Clone, PartialEq)]
pub enum Denoiser {
    Identity,
    /// `R(m) = ||m||_1`.
    SoftThreshold,
    /// `R(m) = ||m - reference||_2^2`.
    Quadratic {
        reference: Vec<f64>,
    },
    /// `R(m) = weight * TV(m)` (anisotropic), solved with `iterations` inner steps.
    Tv2d {
        weight: f64,
        iterations: usize,
    },
    Nlm(NlmParams),
}

impl Denoise for Denoiser {
    /// A zero scale is the identity for every kind.
    fn denoise(&self, x: &[f64], shape: GridShape, scale: f64) -> Result<Vec<f64>> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("denoiser scale must be >= 0, got {scale}")));
        }
        if x.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                got: x.len(),
            });
        }
        if scale == 0.0 {
            return Ok(x.to_vec());
        }
        match self {
            Denoiser::Identity => Ok(x.to_vec()),
            Denoiser::SoftThreshold => prox_l1(x, scale),
            Denoiser::Quadratic { reference } => prox_l2sq(x, scale, reference),
            Denoiser::Tv2d { weight, iterations } => tv2d(x, shape, weight * scale, *iterations),
            Denoiser::Nlm(p) => nlm(x, shape, p.patch_radius, p.search_radius, p.h * scale, p.sigma),
        }
    }

    fn reg_value(&self, x: &[f64], shape: GridShape) -> Option<f64> {
        match self {
            Denoiser::Identity => Some(0.0),
            Denoiser::SoftThreshold => Some(x.iter().map(|v| v.abs()).sum()),
            Denoiser::Quadratic { reference } => Some(x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum()),
            Denoiser::Tv2d { weight, .. } => Some(weight * total_variation(x, shape)),
            Denoiser::Nlm(_) => None,
        }
    }

    fn name(&self) -> String {
        match self {
            Denoiser::Identity => "identity".into(),
            Denoiser::SoftThreshold => "l1".into(),
            Denoiser::Quadratic { .. } => "l2sq".into(),
            Denoiser::Tv2d { .. } => "tv2d".into(),
            Denoiser::Nlm(_) => "nlm".into(),
        }
    }
}

fn check_weight(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("prox weight must be >= 0, got {t}")));
    }
    Ok(())
}

/// Soft threshold `sign(x)*max(|x| - t, 0)`, the prox of `t*||.||_1`.
pub fn prox_l1(x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_weight(t)?;
    Ok(x.iter().map(|&v| v.signum() * (v.abs() - t).max(0.0)).collect())
}

/// Prox of `t*||. - reference||^2`: `(x + 2t*ref) / (1 + 2t)`.
pub fn prox_l2sq(x: &[f64], t: f64, reference: &[f64]) -> Result<Vec<f64>> {
    check_weight(t)?;
    if reference.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: reference.len(),
        });
    }
    Ok(x.iter()
        .zip(reference)
        .map(|(&v, &r)| (v + 2.0 * t * r) / (1.0 + 2.0 * t))
        .collect())
}

/// Anisotropic total variation: sum of absolute forward differences along z and x.
pub fn total_variation(m: &[f64], shape: GridShape) -> f64 {
    let GridShape { nz, nx } = shape;
    let mut tv = 0.0;
    for iz in 0..nz {
        for ix in 0..nx {
            let k = iz * nx + ix;
            if iz + 1 < nz {
                tv += (m[k + nx] - m[k]).abs();
            }
            if ix + 1 < nx {
                tv += (m[k + 1] - m[k]).abs();
            }
        }
    }
    tv
}

/// `0.5*||x - m||^2 + t*TV(m)`.
pub fn tv_objective(x: &[f64], m: &[f64], shape: GridShape, t: f64) -> f64 {
    let fit: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fit + t * total_variation(m, shape)
}

/// Approximate prox of `t*TV` (anisotropic, Neumann boundary).
pub fn tv2d(x: &[f64], shape: GridShape, t: f64, iterations: usize) -> Result<Vec<f64>> {
    tv2d_trace(x, shape, t, iterations).map(|(m, _)| m)
}

/// [`tv2d`] returning also the objective of the kept iterate after each inner step.
///
/// The inner solver is accelerated projected gradient on the dual
/// `min_{|p|<=1} 0.5*||x - t*D^T p||^2`; the primal candidate `x - t*D^T p` is kept
/// only when it lowers the primal objective, so the trace is nonincreasing.
pub fn tv2d_trace(x: &[f64], shape: GridShape, t: f64, iterations: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_weight(t)?;
    if x.len() != shape.len() {
        return Err(Error::DimensionMismatch {
            expected: shape.len(),
            got: x.len(),
        });
    }
    let mut best = x.to_vec();
    let mut best_obj = tv_objective(x, &best, shape, t);
    let mut trace = vec![best_obj];
    if t == 0.0 {
        return Ok((best, trace));
    }
    let n = x.len();
    let GridShape { nz, nx } = shape;
    // dual variables on z- and x-edges, and their extrapolated copies
    let (mut pz, mut px) = (vec![0.0; n], vec![0.0; n]);
    let (mut yz, mut yx) = (vec![0.0; n], vec![0.0; n]);
    let mut theta = 1.0f64;
    let step = 1.0 / (8.0 * t);
    let mut m = vec![0.0; n];

    let primal = |yz: &[f64], yx: &[f64], m: &mut [f64]| {
        // m = x - t * D^T y, with D^T the negative divergence
        for iz in 0..nz {
            for ix in 0..nx {
                let k = iz * nx + ix;
                let mut dt = 0.0;
                if iz + 1 < nz {
                    dt -= yz[k];
                }
                if iz > 0 {
                    dt += yz[k - nx];
                }
                if ix + 1 < nx {
                    dt -= yx[k];
                }
                if ix > 0 {
                    dt += yx[k - 1];
                }
                m[k] = x[k] - t * dt;
            }
        }
    };

    for _ in 0..iterations {
        primal(&yz, &yx, &mut m);
        let (old_z, old_x) = (pz.clone(), px.clone());
        for iz in 0..nz {
            for ix in 0..nx {
                let k = iz * nx + ix;
                if iz + 1 < nz {
                    pz[k] = (yz[k] + step * (m[k + nx] - m[k])).clamp(-1.0, 1.0);
                }
                if ix + 1 < nx {
                    px[k] = (yx[k] + step * (m[k + 1] - m[k])).clamp(-1.0, 1.0);
                }
            }
        }
        let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        let w = (theta - 1.0) / theta_next;
        theta = theta_next;
        for k in 0..n {
            yz[k] = pz[k] + w * (pz[k] - old_z[k]);
            yx[k] = px[k] + w * (px[k] - old_x[k]);
        }
        primal(&pz, &px, &mut m);
        let obj = tv_objective(x, &m, shape, t);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&m);
        }
        trace.push(best_obj);
    }
    Ok((best, trace))
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Non-local means: each pixel becomes a normalized weighted average over its search window
/// with weights `exp(-max(d^2 - 2*sigma^2, 0)/h^2)`, `d^2` the mean squared patch difference.
///
/// Patches are extended by reflection at the borders; search windows are clipped to the grid.
pub fn nlm(
    x: &[f64],
    shape: GridShape,
    patch_radius: usize,
    search_radius: usize,
    h: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    if patch_radius < 1 || search_radius < 1 {
        return Err(Error::Domain("NLM radii must be >= 1".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("NLM bandwidth must be positive, got {h}")));
    }
    let GridShape { nz, nx } = shape;
    if x.len() != shape.len() {
        return Err(Error::DimensionMismatch {
            expected: shape.len(),
            got: x.len(),
        });
    }
    let window = 2 * patch_radius + 1;
    if nz < window || nx < window {
        return Err(Error::Geometry(format!(
            "{nz}x{nx} grid is smaller than the {window}x{window} patch"
        )));
    }
    let pr = patch_radius as isize;
    let sr = search_radius as isize;
    let patch_len = (window * window) as f64;
    let at = |iz: isize, ix: isize| x[reflect(iz, nz) * nx + reflect(ix, nx)];
    let offset = 2.0 * sigma * sigma;
    let inv_h2 = 1.0 / (h * h);

    let mut out = vec![0.0; x.len()];
    for iz in 0..nz as isize {
        for ix in 0..nx as isize {
            let mut wsum = 0.0;
            let mut acc = 0.0;
            for qz in (iz - sr).max(0)..=(iz + sr).min(nz as isize - 1) {
                for qx in (ix - sr).max(0)..=(ix + sr).min(nx as isize - 1) {
                    let mut d2 = 0.0;
                    for a in -pr..=pr {
                        for b in -pr..=pr {
                            let diff = at(iz + a, ix + b) - at(qz + a, qx + b);
                            d2 += diff * diff;
                        }
                    }
                    d2 /= patch_len;
                    let w = (-(d2 - offset).max(0.0) * inv_h2).exp();
                    wsum += w;
                    acc += w * x[qz as usize * nx + qx as usize];
                }
            }
            out[iz as usize * nx + ix as usize] = acc / wsum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(prox_l1(&[2.5, -0.4, -3.0], 1.0).unwrap(), vec![1.5, 0.0, -2.0]);
        let x = [0.3, -7.0, 0.0];
        assert_eq!(prox_l1(&x, 0.0).unwrap(), x.to_vec());
        assert!(prox_l1(&x, -1.0).is_err());
    }

    #[test]
    fn soft_threshold_matches_grid_search() {
        let t = 0.3;
        let step = 1e-4;
        for &x in &[-1.7, -0.31, -0.05, 0.0, 0.2, 0.29, 0.9, 2.4] {
            let mut best = (f64::INFINITY, 0.0);
            let mut m = -3.0;
            while m <= 3.0 {
                let f = 0.5 * (x - m) * (x - m) + t * f64::abs(m);
                if f < best.0 {
                    best = (f, m);
                }
                m += step;
            }
            let p = prox_l1(&[x], t).unwrap()[0];
            assert!((p - best.1).abs() <= step, "x={x}: {p} vs {}", best.1);
        }
    }

    #[test]
    fn quadratic_prox_examples() {
        assert_eq!(prox_l2sq(&[1.0], 0.5, &[3.0]).unwrap(), vec![2.0]);
        assert_eq!(prox_l2sq(&[1.0, -2.0], 0.0, &[9.0, 9.0]).unwrap(), vec![1.0, -2.0]);
        let x = [4.0, -3.0];
        let out = prox_l2sq(&x, 1e8, &[0.0, 0.0]).unwrap();
        for (o, v) in out.iter().zip(&x) {
            assert!(o.abs() < 1e-7 * v.abs());
        }
        assert!(matches!(
            prox_l2sq(&x, 1.0, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quadratic_prox_is_stationary() {
        // derivative of 0.5(x-m)^2 + t(m-r)^2 vanishes at the output
        let (x, t, r) = (0.7, 2.3, -1.1);
        let m = prox_l2sq(&[x], t, &[r]).unwrap()[0];
        assert!(((m - x) + 2.0 * t * (m - r)).abs() < 1e-15);
    }

    #[test]
    fn tv_constant_is_fixed() {
        let shape = GridShape::new(5, 6);
        let x = vec![3.25; 30];
        for t in [0.0, 0.1, 10.0, 1e6] {
            assert_eq!(tv2d(&x, shape, t, 50).unwrap(), x);
        }
    }

    #[test]
    fn tv_large_weight_gives_mean() {
        let shape = GridShape::new(6, 6);
        let x: Vec<f64> = (0..36).map(|k| ((k * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mean = x.iter().sum::<f64>() / 36.0;
        let range = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        let out = tv2d(&x, shape, 1e6, 3000).unwrap();
        let dev = out.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-3 * range, "deviation {dev}");
    }

    #[test]
    fn tv_trace_is_nonincreasing() {
        let shape = GridShape::new(8, 7);
        let x: Vec<f64> = (0..56)
            .map(|k| ((k * 13) % 7) as f64 - 3.0 + (k / 28) as f64 * 4.0)
            .collect();
        let (_, trace) = tv2d_trace(&x, shape, 0.8, 200).unwrap();
        assert_eq!(trace.len(), 201);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn tv_matches_exhaustive_search_on_2x2() {
        let shape = GridShape::new(2, 2);
        let x = [0.3, 0.9, 0.5, 0.1];
        let t = 0.1;
        let out = tv2d(&x, shape, t, 5000).unwrap();

        // coarse exhaustive search over a 4-D lattice, then a finer lattice around the best node
        let search = |center: [f64; 4], half: f64, pts: usize| {
            let h = 2.0 * half / (pts - 1) as f64;
            let axis = |c: f64| (0..pts).map(move |i| c - half + i as f64 * h);
            let mut best = (f64::INFINITY, [0.0; 4]);
            for a in axis(center[0]) {
                for b in axis(center[1]) {
                    for c in axis(center[2]) {
                        for d in axis(center[3]) {
                            let m = [a, b, c, d];
                            let f = tv_objective(&x, &m, shape, t);
                            if f < best.0 {
                                best = (f, m);
                            }
                        }
                    }
                }
            }
            (best, h)
        };
        let ((_, coarse), h0) = search([0.5; 4], 0.5, 41);
        let ((fbest, fine), h) = search(coarse, 2.0 * h0, 41);
        let fout = tv_objective(&x, &out, shape, t);
        assert!(fout <= fbest + 1e-12, "tv2d objective {fout} vs search {fbest}");
        for (o, b) in out.iter().zip(&fine) {
            assert!((o - b).abs() <= 2.0 * h, "{out:?} vs {fine:?}");
        }
    }

    fn naive_nlm(x: &[f64], nz: usize, nx: usize, pr: i64, sr: i64, h: f64, sigma: f64) -> Vec<f64> {
        let get = |z: i64, w: i64| {
            let z = if z < 0 {
                -z
            } else if z >= nz as i64 {
                2 * (nz as i64 - 1) - z
            } else {
                z
            };
            let w = if w < 0 {
                -w
            } else if w >= nx as i64 {
                2 * (nx as i64 - 1) - w
            } else {
                w
            };
            x[z as usize * nx + w as usize]
        };
        let mut out = vec![0.0; nz * nx];
        for i in 0..nz as i64 {
            for j in 0..nx as i64 {
                let mut num = 0.0;
                let mut den = 0.0;
                for k in i - sr..=i + sr {
                    for l in j - sr..=j + sr {
                        if k < 0 || l < 0 || k >= nz as i64 || l >= nx as i64 {
                            continue;
                        }
                        let mut s = 0.0;
                        let mut cnt = 0.0;
                        for a in -pr..=pr {
                            for b in -pr..=pr {
                                s += (get(i + a, j + b) - get(k + a, l + b)).powi(2);
                                cnt += 1.0;
                            }
                        }
                        let w = (-f64::max(s / cnt - 2.0 * sigma * sigma, 0.0) / (h * h)).exp();
                        num += w * get(k, l);
                        den += w;
                    }
                }
                out[i as usize * nx + j as usize] = num / den;
            }
        }
        out
    }

    #[test]
    fn nlm_matches_naive_reference() {
        let shape = GridShape::new(16, 16);
        let x: Vec<f64> = (0..256)
            .map(|k| (k as f64 * 0.37).sin() * 3.0 + ((k * 7919) % 13) as f64 * 0.1)
            .collect();
        let out = nlm(&x, shape, 1, 3, 0.8, 0.2).unwrap();
        let reference = naive_nlm(&x, 16, 16, 1, 3, 0.8, 0.2);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn nlm_constant_and_geometry() {
        let shape = GridShape::new(5, 5);
        let x = vec![1.5; 25];
        assert!(nlm(&x, shape, 1, 2, 0.1, 0.0)
            .unwrap()
            .iter()
            .all(|&v| (v - 1.5).abs() < 1e-15));
        assert!(matches!(nlm(&x, shape, 3, 2, 0.1, 0.0), Err(Error::Geometry(_))));
        assert!(nlm(&x, shape, 1, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn nlm_commutes_with_mirroring() {
        let (nz, nx) = (7, 9);
        let shape = GridShape::new(nz, nx);
        let x: Vec<f64> = (0..nz * nx).map(|k| ((k * 31) % 17) as f64 * 0.2 - 1.0).collect();
        let flip = |v: &[f64]| -> Vec<f64> { (0..nz * nx).map(|k| v[(k / nx) * nx + nx - 1 - k % nx]).collect() };
        let a = flip(&nlm(&x, shape, 1, 3, 0.7, 0.1).unwrap());
        let b = nlm(&flip(&x), shape, 1, 3, 0.7, 0.1).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn dispatch() {
        let shape = GridShape::new(3, 4);
        let x: Vec<f64> = (0..12).map(|k| k as f64 * 0.7 - 4.0).collect();
        assert_eq!(Denoiser::Identity.denoise(&x, shape, 5.0).unwrap(), x);
        assert_eq!(Denoiser::SoftThreshold.denoise(&x, shape, 0.0).unwrap(), x);
        assert_eq!(
            Denoiser::SoftThreshold.denoise(&x, shape, 1.3).unwrap(),
            prox_l1(&x, 1.3).unwrap()
        );
        let nl = Denoiser::Nlm(NlmParams {
            patch_radius: 1,
            search_radius: 2,
            h: 1.0,
            sigma: 0.0,
        });
        assert_eq!(nl.denoise(&x, shape, 0.0).unwrap(), x);
        assert!(Denoiser::SoftThreshold.denoise(&x, shape, -1.0).is_err());
        assert_eq!(
            Denoiser::SoftThreshold.reg_value(&[1.0, -2.0], GridShape::vector(2)),
            Some(3.0)
        );
        assert!(nl.reg_value(&x, shape).is_none());
    }

    proptest! {
        #[test]
        fn convex_proxes_are_nonexpansive(
            a in prop::collection::vec(-5.0f64..5.0, 20),
            b in prop::collection::vec(-5.0f64..5.0, 20),
            r in prop::collection::vec(-5.0f64..5.0, 20),
            t in 0.0f64..3.0,
        ) {
            let shape = GridShape::new(4, 5);
            let d = dist(&a, &b);
            let l1 = (prox_l1(&a, t).unwrap(), prox_l1(&b, t).unwrap());
            prop_assert!(dist(&l1.0, &l1.1) <= d + 1e-12);
            let l2 = (prox_l2sq(&a, t, &r).unwrap(), prox_l2sq(&b, t, &r).unwrap());
            prop_assert!(dist(&l2.0, &l2.1) <= d + 1e-12);
            let tv = (tv2d(&a, shape, t, 2000).unwrap(), tv2d(&b, shape, t, 2000).unwrap());
            prop_assert!(dist(&tv.0, &tv.1) <= d * (1.0 + 1e-3) + 1e-6);
        }

        #[test]
        fn denoisers_preserve_shape_and_are_deterministic(
            a in prop::collection::vec(-5.0f64..5.0, 30),
            s in 0.0f64..2.0,
        ) {
            let shape = GridShape::new(5, 6);
            for d in [
                Denoiser::Identity,
                Denoiser::SoftThreshold,
                Denoiser::Quadratic { reference: vec![0.5; 30] },
                Denoiser::Tv2d { weight: 1.0, iterations: 30 },
                Denoiser::Nlm(NlmParams { patch_radius: 1, search_radius: 2, h: 1.0, sigma: 0.1 }),
            ] {
                let o1 = d.denoise(&a, shape, s).unwrap();
                let o2 = d.denoise(&a, shape, s).unwrap();
                prop_assert_eq!(o1.len(), a.len());
                prop_assert!(o1.iter().all(|v| v.is_finite()));
                prop_assert_eq!(o1, o2);
            }
        }
    }
}
