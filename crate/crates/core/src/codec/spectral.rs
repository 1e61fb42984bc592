//! High-frequency luma energy over an 8x8 block DCT partition.

use super::dct::fdct;
use super::CodecError;
use crate::image::RgbImage;

/// Coefficients with `max(u, v) >= HALF_BAND_INDEX` count as high frequency.
pub const HALF_BAND_INDEX: usize = 4;

/// Energy of BT.601 luma in the upper half-band of every full 8x8 block.
pub fn high_frequency_energy(img: &RgbImage) -> f64 {
    let (w, h) = img.dims();
    let luma = img.luma();
    let mut energy = 0.0;
    for by in 0..h / 8 {
        for bx in 0..w / 8 {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = luma[(by * 8 + y) * w + bx * 8 + x];
                }
            }
            let f = fdct(&block);
            for (i, c) in f.iter().enumerate() {
                if (i % 8).max(i / 8) >= HALF_BAND_INDEX {
                    energy += c * c;
                }
            }
        }
    }
    energy
}

/// Ratio of decoded to original high-frequency energy (1.0 when both are zero).
pub fn spectral_report(original: &RgbImage, decoded: &RgbImage) -> Result<f64, CodecError> {
    if original.dims() != decoded.dims() {
        let ((a, b), (c, d)) = (original.dims(), decoded.dims());
        return Err(CodecError::DimensionMismatch(a as u32, b as u32, c as u32, d as u32));
    }
    let e0 = high_frequency_energy(original);
    let e1 = high_frequency_energy(decoded);
    Ok(if e0 == 0.0 {
        if e1 == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        e1 / e0
    })
}
