//! 8-bit binary PGM rendering of a grid.

use anyhow::Result;

use crate::exit::usage;

/// `P5` image of an `nz x nx` row-major field: `[vmin, vmax]` maps linearly onto
/// `[0, 255]` (rounded, clamped), so low values are black.
pub fn pgm(values: &[f64], nz: usize, nx: usize, vmin: f64, vmax: f64) -> Result<Vec<u8>> {
    if !vmin.is_finite() || !vmax.is_finite() || vmin >= vmax {
        return Err(usage(format!("preview range needs vmin < vmax, got [{vmin}, {vmax}]")));
    }
    if values.len() != nz * nx {
        return Err(usage(format!("{} values for a {nz}x{nx} image", values.len())));
    }
    let mut out = format!("P5\n{nx} {nz}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        let t = ((v - vmin) / (vmax - vmin)).clamp(0.0, 1.0);
        (255.0 * t).round() as u8
    }));
    Ok(out)
}
