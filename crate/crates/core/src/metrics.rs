//! PSNR, SSIM, per-view quality vectors, inter-view deltas and Bjontegaard deltas.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbImage;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("empty quality vector")]
    Empty,
    #[error("config error: {0}")]
    Config(String),
    #[error("curves do not overlap on the {0} axis")]
    NoOverlap(&'static str),
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// PSNR over all channels of two 8-bit images, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let sse: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(psnr_from_mse(sse as f64 / a.as_raw().len().max(1) as f64, 255.0))
}

/// PSNR of float samples with a declared peak.
pub fn psnr_f32(a: &[f32], b: &[f32], peak: f64) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch((a.len(), 1), (b.len(), 1)));
    }
    let sse: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(psnr_from_mse(sse / a.len().max(1) as f64, peak))
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - SSIM_RADIUS as f64;
        *v = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Gaussian-filtered field over the valid region (output `(w - 10) x (h - 10)`).
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS;
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k.len()).map(|t| k[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k.len()).map(|t| k[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on BT.601 luma: 11x11 Gaussian window (sigma 1.5), population
/// statistics, peak 255, averaged over windows fully inside the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < 2 * SSIM_RADIUS + 1 || h < 2 * SSIM_RADIUS + 1 {
        return Err(MetricsError::Config(format!("{w}x{h} is smaller than the 11x11 SSIM window")));
    }
    ssim_luma(&a.luma(), &b.luma(), w, h, 255.0)
}

pub fn ssim_luma(x: &[f64], y: &[f64], w: usize, h: usize, peak: f64) -> Result<f64, MetricsError> {
    let k = gaussian_taps();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let fields: Vec<Vec<f64>> = [x, y, &xx[..], &yy[..], &xy[..]]
        .par_iter()
        .map(|f| filter_valid(f, w, h, &k))
        .collect();
    let (ux, uy, uxx, uyy, uxy) = (&fields[0], &fields[1], &fields[2], &fields[3], &fields[4]);
    let n = ux.len();
    let mut sum = 0.0;
    for i in 0..n {
        let vx = uxx[i] - ux[i] * ux[i];
        let vy = uyy[i] - uy[i] * uy[i];
        let vxy = uxy[i] - ux[i] * uy[i];
        let num = (2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2);
        let den = (ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2);
        sum += num / den;
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewQuality {
    pub view_id: u32,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub views: Vec<ViewQuality>,
}

impl QualityVector {
    pub fn mean_psnr(&self) -> f64 {
        self.views.iter().map(|v| v.psnr_db).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.views.iter().map(|v| v.ssim).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn view_ids(&self) -> Vec<u32> {
        self.views.iter().map(|v| v.view_id).collect()
    }
}

/// Scores rendered views against references, one entry per id.
pub fn evaluate(ids: &[u32], rendered: &[RgbImage], references: &[RgbImage]) -> Result<QualityVector, MetricsError> {
    if ids.len() != rendered.len() || ids.len() != references.len() {
        return Err(MetricsError::Config(format!(
            "{} ids, {} rendered, {} references",
            ids.len(),
            rendered.len(),
            references.len()
        )));
    }
    let views = ids
        .par_iter()
        .zip(rendered.par_iter().zip(references.par_iter()))
        .map(|(&view_id, (r, t))| {
            Ok(ViewQuality {
                view_id,
                psnr_db: psnr(r, t)?,
                ssim: ssim(r, t)?,
            })
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(QualityVector { views })
}

/// Max minus min over views, per metric, as `(psnr, ssim)`.
///
/// Results are rounded to 1e-9 so decimal inputs give decimal deltas
/// (41.3 - 24.1 is 17.2, not 17.199999999999996).
pub fn interview_delta(q: &QualityVector) -> Result<(f64, f64), MetricsError> {
    if q.views.is_empty() {
        return Err(MetricsError::Empty);
    }
    let spread = |f: &dyn Fn(&ViewQuality) -> f64| {
        let (lo, hi) = q.views.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        ((hi - lo) * 1e9).round() / 1e9
    };
    Ok((spread(&|v| v.psnr_db), spread(&|v| v.ssim)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub label: String,
    /// `(size_bytes, quality)` sorted by size.
    pub points: Vec<(f64, f64)>,
}

impl RdCurve {
    pub fn new(label: impl Into<String>, mut points: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.len() < 4 {
            return Err(MetricsError::Config(format!("{} points; at least 4 required", points.len())));
        }
        if points.iter().any(|p| !(p.0 > 0.0) || !p.0.is_finite() || !p.1.is_finite()) {
            return Err(MetricsError::Config("sizes must be positive and finite".into()));
        }
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(MetricsError::Config("sizes must be distinct".into()));
        }
        Ok(Self {
            label: label.into(),
            points,
        })
    }
}

/// Least-squares cubic in a normalized variable; integrates analytically.
struct Cubic {
    coef: [f64; 4],
    mean: f64,
    scale: f64,
}

impl Cubic {
    fn fit(x: &[f64], y: &[f64]) -> Result<Self, MetricsError> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(MetricsError::Config("degenerate abscissae".into()));
        }
        let a = DMatrix::from_fn(x.len(), 4, |i, j| ((x[i] - mean) / scale).powi(j as i32));
        let b = DVector::from_column_slice(y);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| MetricsError::Config(format!("cubic fit failed: {e}")))?;
        Ok(Self {
            coef: [sol[0], sol[1], sol[2], sol[3]],
            mean,
            scale,
        })
    }

    /// Integral over `[lo, hi]` in the original variable.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let prim = |x: f64| {
            let t = (x - self.mean) / self.scale;
            self.coef.iter().enumerate().map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>()
        };
        self.scale * (prim(hi) - prim(lo))
    }
}

fn overlap(a: &[f64], b: &[f64], axis: &'static str) -> Result<(f64, f64), MetricsError> {
    let (amin, amax) = a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (bmin, bmax) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (lo, hi) = (amin.max(bmin), amax.min(bmax));
    if hi <= lo {
        return Err(MetricsError::NoOverlap(axis));
    }
    Ok((lo, hi))
}

/// Mean quality difference (test minus anchor) over the shared log10-rate interval.
pub fn bd_quality(anchor: &RdCurve, test: &RdCurve) -> Result<f64, MetricsError> {
    let split = |c: &RdCurve| -> (Vec<f64>, Vec<f64>) { c.points.iter().map(|p| (p.0.log10(), p.1)).unzip() };
    let (ra, qa) = split(anchor);
    let (rt, qt) = split(test);
    let (lo, hi) = overlap(&ra, &rt, "log-rate")?;
    let (fa, ft) = (Cubic::fit(&ra, &qa)?, Cubic::fit(&rt, &qt)?);
    Ok((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

/// Average rate difference in percent at equal quality (negative means test is smaller).
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, MetricsError> {
    let split = |c: &RdCurve| -> (Vec<f64>, Vec<f64>) { c.points.iter().map(|p| (p.1, p.0.log10())).unzip() };
    let (qa, ra) = split(anchor);
    let (qt, rt) = split(test);
    let (lo, hi) = overlap(&qa, &qt, "quality")?;
    let (fa, ft) = (Cubic::fit(&qa, &ra)?, Cubic::fit(&qt, &rt)?);
    let mean = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(mean) - 1.0) * 100.0)
}
