//! Gaussian-splat decoder pipeline: subsampled splat initialization from a
//! coarse plane sweep, then gradient-free refinement driven by the
//! rendering residual of the input views.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraParams, Intrinsics, ViewFrame};
use crate::dsde::{build_cost_volume, estimate_depth, DsdeError};
use crate::image::{quantize, RgbF32, RgbImage};
use crate::rasterizer::sh::{dc_from_rgb, rgb_from_dc};
use crate::rasterizer::{
    accumulate_stats, composite, prepare_gaussians, splat_color, Gaussian, GaussianScene, RasterConfig, SceneError, SplatStats,
    LOG_SCALE_RANGE,
};

/// Mean color residuals below this are left alone by the color update.
pub const COLOR_DEADZONE: f64 = 1.0 / 255.0;
/// Probe vertices closer than this (in probe steps) to the current depth do not move.
pub const POSITION_DEADZONE: f64 = 0.1;
/// A splat moves only if one probe lowers its residual below this fraction of the current one.
pub const PROBE_GAIN: f64 = 0.8;
/// Splats already matching to about two code values (mean squared) stay put.
pub const POSITION_MIN_RESIDUAL: f64 = (2.0 / 255.0) * (2.0 / 255.0);
/// Share of splats probed per iteration; the rest hold still so depth order stays meaningful.
pub const PROBE_FRACTION: f64 = 0.25;
const PROBE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Spread of per-view center residuals that marks a splat as view-inconsistent.
pub const DISAGREEMENT_SPREAD: f64 = 0.2;
pub const OPACITY_DECAY: f64 = 0.5;
/// Minimum compositing weight for a view to count as observing a splat.
pub const MIN_VIEW_WEIGHT: f64 = 0.5;
pub const FLOATER_RESIDUAL: f64 = 0.2;
pub const FLOATER_ISOLATION: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DsgsError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl From<DsdeError> for DsgsError {
    fn from(e: DsdeError) -> Self {
        match e {
            DsdeError::Config(m) => DsgsError::Config(m),
            DsdeError::Camera(c) => DsgsError::Camera(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// One splat per `subsample x subsample` pixel block of every view.
    pub subsample: usize,
    pub init_planes: usize,
    pub refine_iters: usize,
    pub opacity_init: f64,
    pub prune_alpha: f64,
    pub sh_degree: u8,
    pub seed: u64,
    pub depth_range: (f64, f64),
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            subsample: 2,
            init_planes: 32,
            refine_iters: 4,
            opacity_init: 0.8,
            prune_alpha: 0.05,
            sh_degree: 0,
            seed: 0,
            depth_range: (1.0, 4.0),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), DsgsError> {
        let bad = |m: String| Err(DsgsError::Config(m));
        if self.subsample == 0 {
            return bad("subsample must be at least 1".into());
        }
        if self.init_planes < 2 {
            return bad(format!("init_planes {} < 2", self.init_planes));
        }
        if !(self.opacity_init > 0.0 && self.opacity_init < 1.0) {
            return bad(format!("opacity_init {} not in (0, 1)", self.opacity_init));
        }
        if !(self.prune_alpha >= 0.0 && self.prune_alpha < self.opacity_init) {
            return bad(format!("prune_alpha {} not in [0, opacity_init)", self.prune_alpha));
        }
        if self.sh_degree > 2 {
            return bad(format!("sh_degree {} > 2", self.sh_degree));
        }
        let (near, far) = self.depth_range;
        if !(near > 0.0 && far > near && far.is_finite()) {
            return bad(format!("depth range [{near}, {far}] must be positive and increasing"));
        }
        Ok(())
    }

    /// Upper bound on the initial splat count for `views` of the given sizes.
    pub fn splat_bound(&self, dims: &[(usize, usize)]) -> usize {
        dims.iter()
            .map(|&(w, h)| w.div_ceil(self.subsample) * h.div_ceil(self.subsample))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Mean of the per-view residuals.
    pub aggregate: f64,
    /// Mean squared error per input view, channels in `[0, 1]`.
    pub per_view: Vec<f64>,
    pub splat_count: usize,
    pub accepted: u32,
    pub rejected: u32,
}

/// `records[0]` is the state before refinement, then one record per iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub records: Vec<IterationRecord>,
}

impl RefineTrace {
    pub fn is_non_increasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].aggregate <= w[0].aggregate)
            && self.records.windows(2).all(|w| w[1].splat_count <= w[0].splat_count)
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.aggregate)
    }

    pub fn accepted(&self) -> u32 {
        self.records.iter().map(|r| r.accepted).sum()
    }
}

fn check_views(views: &[(CameraParams, RgbImage)]) -> Result<(), DsgsError> {
    if views.len() < 2 {
        return Err(DsgsError::Config(format!("{} view(s); at least 2 required", views.len())));
    }
    for (cam, img) in views {
        let k = &cam.intrinsics;
        if img.dims() != (k.width as usize, k.height as usize) {
            return Err(DsgsError::Config(format!("view {} image disagrees with its intrinsics", cam.id)));
        }
    }
    Ok(())
}

/// Camera for the `s`-fold block-averaged image; block centers map to pixel centers.
pub fn subsampled_camera(cam: &CameraParams, s: usize) -> CameraParams {
    let k = &cam.intrinsics;
    let sf = s as f64;
    let mut out = *cam;
    out.intrinsics = Intrinsics {
        focal_x: k.focal_x / sf,
        focal_y: k.focal_y / sf,
        principal_x: (k.principal_x + 0.5) / sf - 0.5,
        principal_y: (k.principal_y + 0.5) / sf - 0.5,
        width: (k.width as usize).div_ceil(s) as u32,
        height: (k.height as usize).div_ceil(s) as u32,
    };
    out
}

/// Decoded views + cameras to the subsampled splat model.
pub fn predict(views: &[(CameraParams, RgbImage)], cfg: &PredictorConfig) -> Result<(GaussianScene, RefineTrace), DsgsError> {
    let scene = init_splats(views, cfg)?;
    refine_splats(scene, views, cfg)
}

/// One isotropic splat per subsampled pixel of every view, placed at the
/// winning depth of a coarse plane sweep against the other views.
pub fn init_splats(views: &[(CameraParams, RgbImage)], cfg: &PredictorConfig) -> Result<GaussianScene, DsgsError> {
    cfg.validate()?;
    check_views(views)?;
    let s = cfg.subsample;
    let low: Vec<(CameraParams, RgbImage, Vec<f32>)> = views
        .iter()
        .map(|(cam, img)| {
            let c = subsampled_camera(cam, s);
            let rgb = img.downsample(s);
            let (w, h) = (c.intrinsics.width as usize, c.intrinsics.height as usize);
            let q = RgbImage::from_raw(w, h, rgb.iter().map(|&v| quantize(v)).collect()).expect("dims");
            (c, q, rgb)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.splat_bound(&views.iter().map(|v| v.1.dims()).collect::<Vec<_>>()));
    for r in 0..views.len() {
        let sources: Vec<(CameraParams, RgbImage)> = low
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != r)
            .map(|(_, (c, img, _))| (*c, img.clone()))
            .collect();
        let cv = build_cost_volume((&low[r].0, &low[r].1), &sources, cfg.init_planes, cfg.depth_range)?;
        let dm = estimate_depth(&cv);
        let depth = dm.filled_depth();
        let frame = ViewFrame::new(&views[r].0)?;
        let rgb = &low[r].2;
        let half = (s as f64 - 1.0) / 2.0;
        for i in 0..dm.width * dm.height {
            let (x, y) = ((i % dm.width) as f64, (i / dm.width) as f64);
            let jx = rng.gen_range(-0.25..0.25) * s as f64;
            let jy = rng.gen_range(-0.25..0.25) * s as f64;
            let d = depth[i] as f64;
            let mu = frame.unproject(s as f64 * x + half + jx, s as f64 * y + half + jy, d);
            let sigma = s as f64 * d / frame.fx;
            let c = [rgb[i * 3] as f64, rgb[i * 3 + 1] as f64, rgb[i * 3 + 2] as f64];
            out.push(Gaussian::isotropic(mu, sigma, cfg.opacity_init, c, cfg.sh_degree));
        }
    }
    Ok(GaussianScene::new(out, cfg.sh_degree)?)
}

struct Target {
    frame: ViewFrame,
    image: RgbF32,
}

struct Evaluated {
    frames: Vec<crate::rasterizer::PreparedFrame>,
    residuals: Vec<Vec<f32>>,
    per_view: Vec<f64>,
    aggregate: f64,
    stats: std::cell::OnceCell<Vec<Vec<SplatStats>>>,
}

impl Evaluated {
    fn stats(&self, targets: &[Target], n: usize) -> &[Vec<SplatStats>] {
        self.stats.get_or_init(|| splat_stats(self, targets, n))
    }
}

fn evaluate(gs: &[Gaussian], targets: &[Target], rc: &RasterConfig) -> Evaluated {
    let mut frames = Vec::with_capacity(targets.len());
    let mut residuals = Vec::with_capacity(targets.len());
    let mut per_view = Vec::with_capacity(targets.len());
    for t in targets {
        let f = prepare_gaussians(gs, &t.frame, rc);
        let out = composite(&f.bins, &f.splats, t.frame.width, t.frame.height, rc.background);
        let res: Vec<f32> = t.image.data.iter().zip(&out.color).map(|(a, b)| a - b).collect();
        per_view.push(res.iter().map(|&r| (r as f64) * (r as f64)).sum::<f64>() / res.len() as f64);
        residuals.push(res);
        frames.push(f);
    }
    let aggregate = per_view.iter().sum::<f64>() / per_view.len() as f64;
    Evaluated {
        frames,
        residuals,
        per_view,
        aggregate,
        stats: Default::default(),
    }
}

/// Scene-indexed residual statistics, one vector per view.
fn splat_stats(ev: &Evaluated, targets: &[Target], n: usize) -> Vec<Vec<SplatStats>> {
    ev.frames
        .iter()
        .zip(&ev.residuals)
        .zip(targets)
        .map(|((f, res), t)| {
            let local = accumulate_stats(&f.bins, &f.splats, t.frame.width, t.frame.height, res);
            let mut out = vec![SplatStats::default(); n];
            for (k, st) in local.into_iter().enumerate() {
                out[f.ids[k] as usize] = st;
            }
            out
        })
        .collect()
}

fn total(stats: &[Vec<SplatStats>], i: usize) -> SplatStats {
    let mut t = SplatStats::default();
    for v in stats {
        let s = &v[i];
        t.weight += s.weight;
        for c in 0..3 {
            t.residual[c] += s.residual[c];
        }
        t.sq_residual += s.sq_residual;
    }
    t
}

/// Index of the input camera nearest to `p`, and `p`'s depth in that camera.
fn anchor(frames: &[ViewFrame], p: &Vector3<f64>) -> (usize, f64) {
    let mut best = 0;
    for (k, f) in frames.iter().enumerate() {
        if (p - f.center).norm_squared() < (p - frames[best].center).norm_squared() {
            best = k;
        }
    }
    (best, frames[best].to_camera(p).z)
}

fn shift_depth(g: &Gaussian, frame: &ViewFrame, z: f64, dz: f64) -> Gaussian {
    let mut out = g.clone();
    if z <= 0.0 || z + dz <= 0.0 {
        return out;
    }
    out.mu = frame.center + (g.mu - frame.center) * ((z + dz) / z);
    let ls = ((z + dz) / z).ln();
    out.log_scale = g.log_scale.map(|s| (s + ls).clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1));
    out
}

#[derive(Clone, Copy)]
struct Steps {
    color: f64,
    position: f64,
}

/// Rendering-error-driven refinement with greedy accept-only proposal classes.
pub fn refine_splats(
    scene: GaussianScene,
    views: &[(CameraParams, RgbImage)],
    cfg: &PredictorConfig,
) -> Result<(GaussianScene, RefineTrace), DsgsError> {
    cfg.validate()?;
    check_views(views)?;
    let degree = scene.sh_degree();
    let rc = RasterConfig::default();
    let targets: Vec<Target> = views
        .iter()
        .map(|(c, img)| {
            Ok(Target {
                frame: ViewFrame::new(c)?,
                image: RgbF32::from_rgb8(img),
            })
        })
        .collect::<Result<_, DsgsError>>()?;
    let frames: Vec<ViewFrame> = targets.iter().map(|t| t.frame).collect();
    let inv_step = (1.0 / cfg.depth_range.0 - 1.0 / cfg.depth_range.1) / (cfg.init_planes - 1) as f64;
    let mut gs = scene.into_gaussians();
    let mut cur = evaluate(&gs, &targets, &rc);
    let mut trace = RefineTrace {
        records: vec![IterationRecord {
            aggregate: cur.aggregate,
            per_view: cur.per_view.clone(),
            splat_count: gs.len(),
            accepted: 0,
            rejected: 0,
        }],
    };
    let mut steps = Steps {
        color: 1.0,
        position: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PROBE_SALT);
    for _ in 0..cfg.refine_iters {
        let (mut accepted, mut rejected) = (0u32, 0u32);
        let mut try_accept = |cand: Vec<Gaussian>, gs: &mut Vec<Gaussian>, cur: &mut Evaluated| -> bool {
            let ev = evaluate(&cand, &targets, &rc);
            if ev.aggregate < cur.aggregate {
                *gs = cand;
                *cur = ev;
                accepted += 1;
                true
            } else {
                rejected += 1;
                false
            }
        };

        // Color: degree-0 SH moves by the weighted mean residual.
        let stats = cur.stats(&targets, gs.len());
        let mut changed = false;
        let cand: Vec<Gaussian> = gs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let t = total(stats, i);
                let m = t.mean_residual();
                if t.weight <= 0.0 || m.iter().all(|r| r.abs() < COLOR_DEADZONE) {
                    return g.clone();
                }
                changed = true;
                let rgb = rgb_from_dc(g.sh[0]);
                let mut g2 = g.clone();
                g2.sh[0] = dc_from_rgb([0, 1, 2].map(|c| (rgb[c] + steps.color * m[c]).clamp(0.0, 1.0)));
                g2
            })
            .collect();
        if changed {
            if try_accept(cand, &mut gs, &mut cur) {
                steps.color = (steps.color * 2.0).min(1.0);
            } else {
                steps.color = (steps.color * 0.5).max(1.0 / 16.0);
            }
        }

        // Position: three-point probe along the anchor-camera ray.
        let anchors: Vec<(usize, f64)> = gs.par_iter().map(|g| anchor(&frames, &g.mu)).collect();
        let probed: Vec<bool> = (0..gs.len()).map(|_| rng.gen_bool(PROBE_FRACTION)).collect();
        let deltas: Vec<f64> = anchors.iter().map(|&(_, z)| 0.5 * z * z * inv_step).collect();
        let probe = |sign: f64| -> Vec<SplatStats> {
            let shifted: Vec<Gaussian> = gs
                .par_iter()
                .zip(&anchors)
                .zip(&deltas)
                .zip(&probed)
                .map(|(((g, &(k, z)), &d), &p)| if p { shift_depth(g, &frames[k], z, sign * d) } else { g.clone() })
                .collect();
            let ev = evaluate(&shifted, &targets, &rc);
            let st = splat_stats(&ev, &targets, shifted.len());
            (0..shifted.len()).map(|i| total(&st, i)).collect()
        };
        let centre = cur.stats(&targets, gs.len());
        let (minus, plus) = (probe(-1.0), probe(1.0));
        let mut changed = false;
        let cand: Vec<Gaussian> = gs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let (a, b, c) = (minus[i], total(centre, i), plus[i]);
                if !probed[i] || a.weight <= 0.0 || b.weight <= 0.0 || c.weight <= 0.0 {
                    return g.clone();
                }
                let (ea, eb, ec) = (a.mean_sq(), b.mean_sq(), c.mean_sq());
                let t = probe_offset(ea, eb, ec);
                if eb < POSITION_MIN_RESIDUAL || t.abs() < POSITION_DEADZONE || ea.min(ec) > PROBE_GAIN * eb {
                    return g.clone();
                }
                changed = true;
                let (k, z) = anchors[i];
                shift_depth(g, &frames[k], z, steps.position * t * deltas[i])
            })
            .collect();
        if changed {
            if try_accept(cand, &mut gs, &mut cur) {
                steps.position = (steps.position * 2.0).min(1.0);
            } else {
                steps.position = (steps.position * 0.5).max(1.0 / 16.0);
            }
        }

        // Opacity: fade visible splats that match some views and clash with others.
        let stats = cur.stats(&targets, gs.len());
        let cand: Vec<Gaussian> = gs
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let r: Vec<f64> = targets
                    .iter()
                    .zip(stats)
                    .filter(|(_, st)| st[i].weight >= MIN_VIEW_WEIGHT)
                    .filter_map(|(t, _)| center_residual(g, &t.frame, &t.image))
                    .collect();
                if r.len() < 2 {
                    return g.clone();
                }
                let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
                let mut g2 = g.clone();
                if spread > DISAGREEMENT_SPREAD {
                    g2.opacity *= OPACITY_DECAY;
                }
                g2
            })
            .collect();
        let changed = cand.iter().zip(&gs).any(|(a, b)| a.opacity != b.opacity);
        if changed {
            try_accept(cand, &mut gs, &mut cur);
        }

        // Pruning, gated like the other classes so the residual never rises.
        if gs.iter().any(|g| g.opacity < cfg.prune_alpha) {
            let cand: Vec<Gaussian> = gs.iter().filter(|g| g.opacity >= cfg.prune_alpha).cloned().collect();
            try_accept(cand, &mut gs, &mut cur);
        }

        trace.records.push(IterationRecord {
            aggregate: cur.aggregate,
            per_view: cur.per_view.clone(),
            splat_count: gs.len(),
            accepted,
            rejected,
        });
    }
    Ok((GaussianScene::new(gs, degree)?, trace))
}

/// Mean absolute difference between the splat color and the pixel under its center.
fn center_residual(g: &Gaussian, frame: &ViewFrame, image: &RgbF32) -> Option<f64> {
    let (u, v, _) = frame.project(&g.mu)?;
    let px = image.sample(u, v)?;
    let c = splat_color(g, &frame.center);
    Some((0..3).map(|k| (c[k] - px[k]).abs() as f64).sum::<f64>() / 3.0)
}

/// Minimizer in `[-1, 1]` (probe steps) of the parabola through `(-1, a), (0, b), (1, c)`.
pub fn probe_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom > 0.0 {
        (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
    } else if a < b.min(c) {
        -1.0
    } else if c < b.min(a) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloaterCensus {
    pub count: usize,
    /// Scene indices, ascending.
    pub ids: Vec<u32>,
}

/// Splats seen with a large color residual in at least two views and isolated
/// from every other splat by more than three times their own scale.
pub fn floater_census(scene: &GaussianScene, views: &[(CameraParams, RgbImage)]) -> Result<FloaterCensus, DsgsError> {
    let frames: Vec<(ViewFrame, RgbF32)> = views
        .iter()
        .map(|(c, img)| Ok((ViewFrame::new(c)?, RgbF32::from_rgb8(img))))
        .collect::<Result<_, DsgsError>>()?;
    let gs = scene.gaussians();
    let suspects: Vec<usize> = (0..gs.len())
        .into_par_iter()
        .filter(|&i| {
            let g = &gs[i];
            frames
                .iter()
                .filter(|(f, img)| center_residual(g, f, img).is_some_and(|r| r > FLOATER_RESIDUAL))
                .count()
                >= 2
        })
        .collect();
    if suspects.is_empty() {
        return Ok(FloaterCensus::default());
    }
    let grid = SpatialGrid::new(gs);
    let ids: Vec<u32> = suspects
        .into_iter()
        .filter(|&i| !grid.has_neighbor_within(gs, i, FLOATER_ISOLATION * gs[i].max_scale()))
        .map(|i| i as u32)
        .collect();
    Ok(FloaterCensus { count: ids.len(), ids })
}

struct SpatialGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialGrid {
    fn new(gs: &[Gaussian]) -> Self {
        let mut scales: Vec<f64> = gs.iter().map(|g| FLOATER_ISOLATION * g.max_scale()).collect();
        scales.sort_by(f64::total_cmp);
        let cell = scales[scales.len() / 2].max(1e-6);
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, g) in gs.iter().enumerate() {
            cells.entry(Self::key(cell, &g.mu)).or_default().push(i as u32);
        }
        Self { cell, cells }
    }

    fn key(cell: f64, p: &Vector3<f64>) -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    fn has_neighbor_within(&self, gs: &[Gaussian], i: usize, r: f64) -> bool {
        let p = gs[i].mu;
        let r2 = r * r;
        let near = |j: usize| j != i && (gs[j].mu - p).norm_squared() <= r2;
        let span = (r / self.cell).ceil() as i64;
        if span > 16 {
            return (0..gs.len()).any(near);
        }
        let (kx, ky, kz) = Self::key(self.cell, &p);
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    if let Some(list) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        if list.iter().any(|&j| near(j as usize)) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}
