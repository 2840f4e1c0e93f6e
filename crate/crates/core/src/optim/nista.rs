use super::all_finite;
use super::hessian::HessianApply;
use crate::denoise::Denoise;
use crate::error::{Error, Result};
use crate::model::GridShape;

/// Search direction from `n_inner` accelerated proximal-gradient iterations on the local model
/// `g'dm + 0.5 dm'H dm + lambda*R(m + dm)`.
///
/// Each inner step is a gradient step on the quadratic model, a denoiser call at scale
/// `c*lambda` on `m + dm`, and extrapolation with weight `(l-1)/(l+2)`, `l = 1, 2, ...`.
/// `H` is only touched through products, at most `n_inner` of them (none while the
/// extrapolated point is zero). `warm` seeds the first iterate; `None` starts from zero.
#[allow(clippy::too_many_arguments)]
pub fn nista_direction<H, D>(
    h: &mut H,
    m: &[f64],
    grad: &[f64],
    denoiser: &D,
    shape: GridShape,
    lambda: f64,
    c: f64,
    n_inner: usize,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>>
where
    H: HessianApply + ?Sized,
    D: Denoise + ?Sized,
{
    let n = m.len();
    if grad.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grad.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("step size c must be positive, got {c}")));
    }
    if n_inner == 0 {
        return Err(Error::Config("NISTA needs at least one inner iteration".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut dm = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            })
        }
        None => vec![0.0; n],
    };
    let mut dp = dm.clone();
    let mut z = vec![0.0; n];
    for l in 1..=n_inner {
        let hdp = if dp.iter().all(|v| *v == 0.0) {
            vec![0.0; n]
        } else {
            h.apply(&dp)?
        };
        for i in 0..n {
            z[i] = m[i] + dp[i] - c * (hdp[i] + grad[i]);
        }
        let prox = denoiser.denoise(&z, shape, c * lambda)?;
        if prox.len() != n {
            return Err(Error::Denoiser(format!(
                "denoiser returned {} values for a grid of {n}",
                prox.len()
            )));
        }
        let next: Vec<f64> = prox.iter().zip(m).map(|(p, mi)| p - mi).collect();
        if !all_finite(&next) {
            return Err(Error::Numerical(format!(
                "non-finite NISTA inner iterate at l = {l}; step size c = {c:e} is too large"
            )));
        }
        let w = (l as f64 - 1.0) / (l as f64 + 2.0);
        for i in 0..n {
            dp[i] = next[i] + w * (next[i] - dm[i]);
        }
        dm = next;
    }
    Ok(dm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::Denoiser;
    use crate::optim::hessian::{solve_dense, ScaledIdentity};

    struct Dense2 {
        a: [f64; 4],
        calls: usize,
    }

    impl HessianApply for Dense2 {
        fn dim(&self) -> usize {
            2
        }
        fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
            self.calls += 1;
            Ok(vec![
                self.a[0] * v[0] + self.a[1] * v[1],
                self.a[2] * v[0] + self.a[3] * v[1],
            ])
        }
    }

    /// Records the points it is asked to denoise.
    struct Spy(std::cell::RefCell<Vec<Vec<f64>>>);

    impl Denoise for Spy {
        fn denoise(&self, x: &[f64], _: GridShape, _: f64) -> Result<Vec<f64>> {
            self.0.borrow_mut().push(x.to_vec());
            Ok(x.to_vec())
        }
        fn name(&self) -> String {
            "spy".into()
        }
    }

    #[test]
    fn single_step_is_gradient_step() {
        let mut h = ScaledIdentity { n: 2, scale: 1.0 };
        let g = [0.3, -1.2];
        let dm = nista_direction(
            &mut h,
            &[5.0, 6.0],
            &g,
            &Denoiser::Identity,
            GridShape::vector(2),
            0.0,
            1.0,
            1,
            None,
        )
        .unwrap();
        assert!((dm[0] + 0.3).abs() < 1e-14 && (dm[1] - 1.2).abs() < 1e-14);
    }

    #[test]
    fn long_run_reaches_newton_direction() {
        let mut h = Dense2 {
            a: [4.0, 1.0, 1.0, 2.0],
            calls: 0,
        };
        let g = [1.0, -3.0];
        let newton: Vec<f64> = solve_dense(&h.a, &g).unwrap().iter().map(|v| -v).collect();
        let c = 0.9 / 4.415;
        let dm = nista_direction(
            &mut h,
            &[0.0, 0.0],
            &g,
            &Denoiser::SoftThreshold,
            GridShape::vector(2),
            0.0,
            c,
            400,
            None,
        )
        .unwrap();
        for (a, b) in dm.iter().zip(&newton) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hvp_budget_and_extrapolation_weights() {
        // H = 0 and g = -e1 make every gradient step add exactly c*e1, so the denoised
        // points reveal the extrapolation: z_l = m + dp_l + c e1.
        let mut h = Dense2 { a: [0.0; 4], calls: 0 };
        let spy = Spy(Default::default());
        let n_inner = 7;
        nista_direction(
            &mut h,
            &[0.0, 0.0],
            &[-1.0, 0.0],
            &spy,
            GridShape::vector(2),
            1.0,
            1.0,
            n_inner,
            None,
        )
        .unwrap();
        assert_eq!(h.calls, n_inner - 1);
        let pts = spy.0.into_inner();
        assert_eq!(pts.len(), n_inner);
        // z_l = dp_l + 1 and dm_{l+1} = z_l, so
        // z_{l+1} - 1 = z_l + (l-1)/(l+2) * (z_l - z_{l-1}), with dm_1 = 0
        assert_eq!(pts[1][0] - 1.0, pts[0][0]);
        for l in 2..n_inner {
            let w = (l as f64 - 1.0) / (l as f64 + 2.0);
            let expected = pts[l - 1][0] + w * (pts[l - 1][0] - pts[l - 2][0]);
            assert!((pts[l][0] - 1.0 - expected).abs() < 1e-14, "l = {l}");
        }

        let mut h = Dense2 {
            a: [1.0, 0.0, 0.0, 1.0],
            calls: 0,
        };
        nista_direction(
            &mut h,
            &[0.0, 0.0],
            &[1.0, 1.0],
            &Denoiser::Identity,
            GridShape::vector(2),
            0.0,
            0.5,
            5,
            Some(&[0.1, 0.1]),
        )
        .unwrap();
        assert_eq!(h.calls, 5);
    }

    #[test]
    fn errors() {
        let mut h = ScaledIdentity { n: 2, scale: 1.0 };
        let s = GridShape::vector(2);
        let d = Denoiser::Identity;
        assert!(nista_direction(&mut h, &[0.0; 2], &[1.0; 2], &d, s, 0.0, 0.0, 3, None).is_err());
        assert!(nista_direction(&mut h, &[0.0; 2], &[1.0; 2], &d, s, 0.0, 1.0, 0, None).is_err());
        assert!(nista_direction(&mut h, &[0.0; 2], &[1.0; 3], &d, s, 0.0, 1.0, 3, None).is_err());
        let mut big = ScaledIdentity { n: 2, scale: 1e300 };
        let r = nista_direction(&mut big, &[0.0; 2], &[1.0; 2], &d, s, 0.0, 1e10, 5, None);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn toy_subproblem_matches_grid_search() {
        use crate::optim::hessian::ExactHessian;
        use crate::optim::MisfitOracle;
        use crate::toyproblems::RosenbrockOracle;

        let mut o = RosenbrockOracle::new();
        let m = [0.0, 0.0];
        let lambda = 1.5;
        let (_, g) = o.value_grad(&m).unwrap();
        let hd = o.dense_hessian(&m).unwrap().unwrap();
        let c = 0.9 / 150.0;
        let mut h = ExactHessian { oracle: &mut o, m: &m };
        let dm = nista_direction(
            &mut h,
            &m,
            &g,
            &Denoiser::SoftThreshold,
            GridShape::vector(2),
            lambda,
            c,
            100,
            None,
        )
        .unwrap();

        let model = |d: [f64; 2]| {
            let hd0 = hd[0] * d[0] + hd[1] * d[1];
            let hd1 = hd[2] * d[0] + hd[3] * d[1];
            g[0] * d[0]
                + g[1] * d[1]
                + 0.5 * (d[0] * hd0 + d[1] * hd1)
                + lambda * ((m[0] + d[0]).abs() + (m[1] + d[1]).abs())
        };
        // 100 accelerated steps at c = 0.9/||H|| on a condition-75 model land within a few 1e-3
        let step = 1e-2;
        let mut best = (f64::INFINITY, [0.0; 2]);
        for i in -50..=50 {
            for j in -50..=50 {
                let d = [i as f64 * step, j as f64 * step];
                let v = model(d);
                if v < best.0 {
                    best = (v, d);
                }
            }
        }
        assert!(
            (dm[0] - best.1[0]).abs() <= step && (dm[1] - best.1[1]).abs() <= step,
            "{dm:?} vs {:?}",
            best.1
        );
        assert!(model([dm[0], dm[1]]) <= best.0 + 1e-4);
    }
}
