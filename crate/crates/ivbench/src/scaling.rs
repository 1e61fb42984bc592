//! Complexity probe: cost-volume time against plane count, refinement time against splat count.

use std::time::Instant;

use ivbench_core::dsde::build_cost_volume;
use ivbench_core::dsgs::{init_splats, refine_splats, PredictorConfig};
use ivbench_core::scenegen::{generate, split_transmitted, SceneSpec};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::REPORT_HEADER;

pub const PLANE_COUNTS: [usize; 3] = [32, 64, 128];
pub const SPLAT_FACTORS: [usize; 3] = [1, 2, 4];
/// Each timing is the minimum over this many runs.
pub const REPEATS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// `(planes, milliseconds)`.
    pub dsde: Vec<(usize, f64)>,
    /// `(splats, milliseconds)` for one refinement iteration.
    pub dsgs: Vec<(usize, f64)>,
    pub dsde_exponent: f64,
    pub dsgs_exponent: f64,
}

/// Least-squares slope of `log t` against `log x`.
pub fn fit_exponent(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.max(1e-9).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn time_min<T>(mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..REPEATS {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

/// Even resolution covering `num / den` of the pixel area of `(w, h)`.
fn scaled_resolution((w, h): (u32, u32), num: usize, den: usize) -> (u32, u32) {
    let f = (num as f64 / den as f64).sqrt();
    let even = |v: u32| ((v as f64 * f / 2.0).round() as u32 * 2).max(8);
    (even(w), even(h))
}

/// Times `build_cost_volume` for each of [`PLANE_COUNTS`] on the first transmitted view, and
/// one `refine_splats` iteration with the input resolution scaled so the initial splat count
/// grows by [`SPLAT_FACTORS`] at constant splat density.
pub fn scaling_probe(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let spec = cfg.scene_spec();
    let transmitted = |spec| -> Result<Vec<_>> {
        let d = generate(&spec)?;
        let (tx, _) = split_transmitted(d.cameras.len(), cfg.atlas_counts[0])?;
        Ok(tx.iter().map(|&i| (d.cameras[i], d.views[i].clone())).collect::<Vec<_>>())
    };
    let views = transmitted(spec.clone())?;
    let range = cfg.resolved_depth_range();
    let mut dsde = Vec::new();
    for planes in PLANE_COUNTS {
        let ms = time_min(|| Ok(build_cost_volume((&views[0].0, &views[0].1), &views[1..], planes, range)?))?;
        dsde.push((planes, ms));
    }
    let pc = PredictorConfig {
        refine_iters: 1,
        ..cfg.predictor_config()
    };
    let top = SPLAT_FACTORS[SPLAT_FACTORS.len() - 1];
    let mut dsgs = Vec::new();
    for f in SPLAT_FACTORS {
        let views = transmitted(SceneSpec {
            resolution: scaled_resolution(spec.resolution, f, top),
            ..spec.clone()
        })?;
        let scene = init_splats(&views, &pc)?;
        let n = scene.len();
        let ms = time_min(|| Ok(refine_splats(scene.clone(), &views, &pc)?))?;
        dsgs.push((n, ms));
    }
    Ok(ScalingReport {
        dsde_exponent: fit_exponent(&dsde),
        dsgs_exponent: fit_exponent(&dsgs),
        dsde,
        dsgs,
    })
}

impl ScalingReport {
    pub fn render(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push_str("stage       size      time_ms\n");
        for (n, ms) in &self.dsde {
            s.push_str(&format!("dsde_cv  {n:>7} pl  {ms:>10.1}\n"));
        }
        for (n, ms) in &self.dsgs {
            s.push_str(&format!("dsgs_ref {n:>7} sp  {ms:>10.1}\n"));
        }
        s.push_str(&format!("exponent dsde vs planes: {:.3}\n", self.dsde_exponent));
        s.push_str(&format!("exponent dsgs vs splats: {:.3}\n", self.dsgs_exponent));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_of_power_laws() {
        let lin = [(32, 10.0), (64, 20.0), (128, 40.0)];
        assert!((fit_exponent(&lin) - 1.0).abs() < 1e-12);
        let quad = [(1, 3.0), (2, 12.0), (4, 48.0)];
        assert!((fit_exponent(&quad) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_resolutions_stay_even() {
        assert_eq!(scaled_resolution((480, 272), 4, 4), (480, 272));
        assert_eq!(scaled_resolution((480, 272), 1, 4), (240, 136));
        let (w, h) = scaled_resolution((480, 272), 2, 4);
        assert!(w % 2 == 0 && h % 2 == 0 && (w * h) as f64 / (480.0 * 272.0) > 0.49);
    }
}
