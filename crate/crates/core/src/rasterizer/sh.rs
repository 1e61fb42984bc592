//! Real spherical-harmonics color, degrees 0 through 2.

use nalgebra::Vector3;

use super::SceneError;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Number of coefficients per channel for `degree`.
pub const fn coeff_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

/// Degree-0 coefficient that renders as `rgb` from every direction.
pub fn dc_from_rgb(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| c / SH_C0)
}

pub fn rgb_from_dc(dc: [f64; 3]) -> [f64; 3] {
    dc.map(|c| c * SH_C0)
}

/// Basis values along a unit direction, in coefficient order.
fn basis(dir: &Vector3<f64>, out: &mut [f64; 9], degree: u8) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (x * x - y * y);
    }
}

/// Evaluates without the final clamp.
pub fn eval_sh_unclamped(coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> Result<[f64; 3], SceneError> {
    let n = dir.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(SceneError::InvalidArgument("view direction must be non-zero and finite".into()));
    }
    let degree = match coeffs.len() {
        1 => 0,
        4 => 1,
        9 => 2,
        k => return Err(SceneError::InvalidArgument(format!("{k} SH coefficients is not a supported degree"))),
    };
    let d = dir / n;
    let mut b = [0.0; 9];
    basis(&d, &mut b, degree);
    let mut rgb = [0.0; 3];
    for (coef, w) in coeffs.iter().zip(b.iter()) {
        for c in 0..3 {
            rgb[c] += coef[c] * w;
        }
    }
    Ok(rgb)
}

/// View-dependent color clamped to `[0, 1]`.
pub fn eval_sh(coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> Result<[f64; 3], SceneError> {
    Ok(eval_sh_unclamped(coeffs, dir)?.map(|c| c.clamp(0.0, 1.0)))
}
