#![allow(dead_code)]

use adareg::linsys::Factorizer;
use adareg::model::{GridKind, ModelGrid};
use adareg::wave::{HelmholtzSystem, WaveOptions};
use num_complex::Complex64;

pub const GREEN_FREQUENCY: f64 = 10.0;
pub const GREEN_VELOCITY: f64 = 2000.0;

/// `-(i/4) H0^(1)(k r)` for k = 2 pi 10 / 2000, evaluated with scipy.special.hankel1.
pub const GREEN_REFERENCE: [(f64, Complex64); 4] = [
    (75.0, Complex64::new(0.12859082512895792, -0.006373853063476851)),
    (100.0, Complex64::new(0.08209157712907815, 0.0760605444110235)),
    (125.0, Complex64::new(0.0030998161479569237, 0.10023681915796201)),
    (150.0, Complex64::new(-0.06309839612183486, 0.06646431248958114)),
];

/// Field of a unit point source at the center of a 400 m square at spacing `h`, sampled at
/// the reference offsets along both axes. The PML is 100 m thick at every spacing.
pub fn green_field(h: f64) -> Vec<(f64, Complex64, Complex64)> {
    let cells = (400.0 / h).round() as usize;
    let n = cells + 1;
    let opts = WaveOptions {
        pml_cells: (100.0 / h).round() as usize,
        pml_reflection: 1e-6,
        ..WaveOptions::default()
    };
    let model = ModelGrid::constant(n, n, h, h, GridKind::Velocity, GREEN_VELOCITY)
        .unwrap()
        .convert(GridKind::SquaredSlowness)
        .unwrap();
    let sys = HelmholtzSystem::assemble(&model, 2.0 * std::f64::consts::PI * GREEN_FREQUENCY, &opts).unwrap();
    let lu = sys.factorize(&mut Factorizer::new()).unwrap();
    let c = n / 2;
    let b = sys.source_vectors(&[(c, c)], Complex64::new(1.0, 0.0)).unwrap();
    let u = lu.solve_block(&b).unwrap().remove(0);
    GREEN_REFERENCE
        .iter()
        .map(|&(r, _)| {
            let k = (r / h).round() as usize;
            let l = sys.layout();
            (r, u[l.padded(c, c + k)], u[l.padded(c + k, c)])
        })
        .collect()
}

/// Largest amplitude ratio error and phase error against the reference, after normalizing
/// by the field at `reference_offset`.
pub fn green_errors(field: &[(f64, Complex64, Complex64)], normalize: bool) -> (f64, f64) {
    let norm = if normalize {
        let (r0, u0, _) = field[0];
        let g0 = GREEN_REFERENCE.iter().find(|g| g.0 == r0).unwrap().1;
        g0 / u0
    } else {
        Complex64::new(1.0, 0.0)
    };
    let mut amp: f64 = 0.0;
    let mut phase: f64 = 0.0;
    for (&(_, ux, uz), &(_, g)) in field.iter().zip(&GREEN_REFERENCE) {
        for u in [ux * norm, uz * norm] {
            amp = amp.max((u.norm() / g.norm() - 1.0).abs());
            phase = phase.max((u / g).arg().abs());
        }
    }
    (amp, phase)
}
