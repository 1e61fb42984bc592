//! Tile-based forward rasterizer for 3D Gaussian scenes.
//!
//! Pipeline: [`project_gaussian`] (EWA projection with an anti-aliasing floor)
//! -> [`bin_tiles`] (depth-sorted per-tile lists) -> [`composite`] (front-to-back
//! alpha blending). Every pixel visits only splats whose 3-sigma ellipse covers
//! it, so the result does not depend on the tile size or the worker count.

pub mod gsc1;
pub mod sh;
mod tiles;

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraParams, ViewFrame};

pub use tiles::{
    accumulate_stats, bin_tiles, composite, render_naive, render_naive_rows, SplatStats, TileBins,
};

/// Valid range for per-axis log standard deviations.
pub const LOG_SCALE_RANGE: (f64, f64) = (-12.0, 4.0);
/// Mahalanobis radius squared of the splat footprint (3 sigma).
pub const CUTOFF_SQ: f32 = 9.0;
/// Traversal stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f32 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gaussian {index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: Vector3<f64>,
    pub rot: UnitQuaternion<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity: f64,
    /// `(L + 1)^2` RGB coefficients.
    pub sh: Vec<[f64; 3]>,
}

impl Gaussian {
    /// Isotropic splat with a constant color.
    pub fn isotropic(mu: Vector3<f64>, sigma: f64, opacity: f64, rgb: [f64; 3], sh_degree: u8) -> Self {
        let mut sh = vec![[0.0; 3]; sh::coeff_count(sh_degree)];
        sh[0] = sh::dc_from_rgb(rgb);
        Self {
            mu,
            rot: UnitQuaternion::identity(),
            log_scale: Vector3::repeat(sigma.ln()),
            opacity,
            sh,
        }
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }

    pub fn validate(&self, sh_degree: u8) -> Result<(), String> {
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err("non-finite center".into());
        }
        let qn = self.rot.as_ref().norm();
        if (qn - 1.0).abs() > 1e-9 {
            return Err(format!("quaternion norm {qn}"));
        }
        if !self.log_scale.iter().all(|&s| (LOG_SCALE_RANGE.0..=LOG_SCALE_RANGE.1).contains(&s)) {
            return Err(format!("log scale {:?} out of range", self.log_scale));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(format!("opacity {} not in (0, 1)", self.opacity));
        }
        if self.sh.len() != sh::coeff_count(sh_degree) {
            return Err(format!("{} SH coefficients for degree {sh_degree}", self.sh.len()));
        }
        if !self.sh.iter().flatten().all(|v| v.is_finite()) {
            return Err("non-finite SH coefficient".into());
        }
        Ok(())
    }
}

/// `R diag(exp(2 s)) R^T`.
pub fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    let r = g.rot.to_rotation_matrix().into_inner();
    let d = Matrix3::from_diagonal(&g.log_scale.map(|s| (2.0 * s).exp()));
    r * d * r.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A validated set of Gaussians sharing one SH degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian>,
    sh_degree: u8,
    bbox: Aabb,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: u8) -> Result<Self, SceneError> {
        if sh_degree > 2 {
            return Err(SceneError::InvalidArgument(format!("SH degree {sh_degree} > 2")));
        }
        for (index, g) in gaussians.iter().enumerate() {
            g.validate(sh_degree)
                .map_err(|reason| SceneError::InvalidGaussian { index, reason })?;
        }
        let bbox = bounds(&gaussians);
        Ok(Self {
            gaussians,
            sh_degree,
            bbox,
        })
    }

    pub fn empty(sh_degree: u8) -> Self {
        Self {
            gaussians: Vec::new(),
            sh_degree,
            bbox: Aabb {
                min: Vector3::zeros(),
                max: Vector3::zeros(),
            },
        }
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn into_gaussians(self) -> Vec<Gaussian> {
        self.gaussians
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

fn bounds(gs: &[Gaussian]) -> Aabb {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for g in gs {
        min = min.inf(&g.mu);
        max = max.sup(&g.mu);
    }
    if gs.is_empty() {
        min = Vector3::zeros();
        max = Vector3::zeros();
    }
    Aabb { min, max }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Added to the projected covariance diagonal, px^2.
    pub aa_floor: f64,
    /// Near plane, meters.
    pub near: f64,
    pub background: [f32; 3],
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            aa_floor: 0.3,
            near: 0.01,
            background: [0.0; 3],
        }
    }
}

/// 2D footprint of a Gaussian in one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// EWA projection. `None` when culled (behind the near plane or fully off-image).
pub fn project_gaussian(g: &Gaussian, view: &ViewFrame, cfg: &RasterConfig) -> Option<Footprint> {
    let t = view.to_camera(&g.mu);
    if t.z <= cfg.near {
        return None;
    }
    let iz = 1.0 / t.z;
    let mean = Vector2::new(view.cx + view.fx * t.x * iz, view.cy + view.fy * t.y * iz);
    let j = nalgebra::Matrix2x3::new(
        view.fx * iz,
        0.0,
        -view.fx * t.x * iz * iz,
        0.0,
        view.fy * iz,
        -view.fy * t.y * iz * iz,
    );
    let m = j * view.rotation;
    let cov = m * covariance_of(g) * m.transpose() + Matrix2::identity() * cfg.aa_floor;
    let rx = 3.0 * cov[(0, 0)].sqrt();
    let ry = 3.0 * cov[(1, 1)].sqrt();
    let (w, h) = (view.width as f64, view.height as f64);
    if mean.x + rx < -0.5 || mean.x - rx > w - 0.5 || mean.y + ry < -0.5 || mean.y - ry > h - 0.5 {
        return None;
    }
    Some(Footprint { mean, cov, depth: t.z })
}

/// Compositing-ready splat in f32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub mean: [f32; 2],
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
    pub depth: f32,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the 3-sigma ellipse, clipped to the image.
    pub bounds: [u32; 4],
}

impl ProjectedSplat {
    pub fn from_footprint(fp: &Footprint, opacity: f32, color: [f32; 3], width: usize, height: usize) -> Option<Self> {
        let (a, b, c) = (fp.cov[(0, 0)], fp.cov[(0, 1)], fp.cov[(1, 1)]);
        let det = a * c - b * b;
        if !(det > 0.0) {
            return None;
        }
        // Slightly padded so the f32 ellipse test never reaches outside the bounds.
        let rx = 3.0 * a.sqrt() * (1.0 + 1e-5) + 1e-2;
        let ry = 3.0 * c.sqrt() * (1.0 + 1e-5) + 1e-2;
        let x0 = (fp.mean.x - rx).ceil().max(0.0);
        let x1 = (fp.mean.x + rx).floor().min(width as f64 - 1.0);
        let y0 = (fp.mean.y - ry).ceil().max(0.0);
        let y1 = (fp.mean.y + ry).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some(Self {
            mean: [fp.mean.x as f32, fp.mean.y as f32],
            conic: [(c / det) as f32, (-b / det) as f32, (a / det) as f32],
            opacity,
            color,
            depth: fp.depth as f32,
            bounds: [x0 as u32, y0 as u32, x1 as u32, y1 as u32],
        })
    }
}

/// Per-pixel render planes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB in `[0, 1]`.
    pub color: Vec<f32>,
    pub alpha: Vec<f32>,
    pub depth: Vec<f32>,
    pub contrib_count: Vec<u32>,
}

impl RenderOutput {
    pub fn to_rgb8(&self) -> crate::image::RgbImage {
        crate::image::RgbImage::from_f32(self.width, self.height, &self.color)
    }
}

/// Projected splats of one scene in one view, plus their tile bins.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub view: ViewFrame,
    pub splats: Vec<ProjectedSplat>,
    /// Scene index of each entry in `splats` (ascending).
    pub ids: Vec<u32>,
    pub bins: TileBins,
    pub background: [f32; 3],
}

/// Color of a splat seen from `center`, clamped SH evaluated along the center ray.
pub fn splat_color(g: &Gaussian, center: &Vector3<f64>) -> [f32; 3] {
    let dir = g.mu - center;
    match sh::eval_sh(&g.sh, &dir) {
        Ok(c) => c.map(|v| v as f32),
        Err(_) => sh::rgb_from_dc(g.sh[0]).map(|v| v.clamp(0.0, 1.0) as f32),
    }
}

pub fn prepare_gaussians(gaussians: &[Gaussian], view: &ViewFrame, cfg: &RasterConfig) -> PreparedFrame {
    let projected: Vec<Option<ProjectedSplat>> = gaussians
        .par_iter()
        .with_min_len(1024)
        .map(|g| {
            let fp = project_gaussian(g, view, cfg)?;
            ProjectedSplat::from_footprint(&fp, g.opacity as f32, splat_color(g, &view.center), view.width, view.height)
        })
        .collect();
    let mut splats = Vec::with_capacity(projected.len());
    let mut ids = Vec::with_capacity(projected.len());
    for (i, p) in projected.into_iter().enumerate() {
        if let Some(p) = p {
            splats.push(p);
            ids.push(i as u32);
        }
    }
    let bins = bin_tiles(&splats, view.width, view.height, cfg.tile_size);
    PreparedFrame {
        view: *view,
        splats,
        ids,
        bins,
        background: cfg.background,
    }
}

pub fn prepare(scene: &GaussianScene, view: &ViewFrame, cfg: &RasterConfig) -> PreparedFrame {
    prepare_gaussians(scene.gaussians(), view, cfg)
}

/// Renders `scene` through `cam` with the tiled rasterizer.
pub fn render(scene: &GaussianScene, cam: &CameraParams, cfg: &RasterConfig) -> Result<RenderOutput, SceneError> {
    let view = ViewFrame::new(cam)?;
    Ok(render_view(scene, &view, cfg))
}

pub fn render_view(scene: &GaussianScene, view: &ViewFrame, cfg: &RasterConfig) -> RenderOutput {
    let frame = prepare(scene, view, cfg);
    composite(&frame.bins, &frame.splats, view.width, view.height, cfg.background)
}
