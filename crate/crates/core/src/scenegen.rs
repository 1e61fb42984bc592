//! Deterministic synthetic multiview content: a ground-truth Gaussian scene,
//! a camera rig and the views rendered from it.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraParams, Convention, Intrinsics, Pose};
use crate::image::RgbImage;
use crate::rasterizer::{self, sh, Gaussian, GaussianScene, RasterConfig, SceneError};

/// Horizontal field of view of every rig camera, degrees.
pub const RIG_HFOV_DEG: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TexturedPlane,
    BoxRoom,
    SphereField,
    SpecularSphere,
    /// `SphereField` geometry with per-pixel texture noise added to the source views.
    NoiseAugmented,
}

impl SceneKind {
    /// Geometry generator used for this kind.
    pub fn base(self) -> SceneKind {
        match self {
            SceneKind::NoiseAugmented => SceneKind::SphereField,
            k => k,
        }
    }

    /// Depth interval (meters) that bounds every visible surface of the kind.
    pub fn depth_range(self) -> (f64, f64) {
        match self.base() {
            SceneKind::TexturedPlane => (1.0, 4.0),
            SceneKind::BoxRoom => (1.0, 5.0),
            _ => (1.0, 4.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rig {
    #[serde(rename = "linear_4")]
    Linear4,
    #[serde(rename = "linear_9")]
    Linear9,
    #[serde(rename = "grid_8")]
    Grid8,
}

impl Rig {
    pub fn camera_count(self) -> usize {
        match self {
            Rig::Linear4 => 4,
            Rig::Linear9 => 9,
            Rig::Grid8 => 8,
        }
    }

    /// Camera centers; all cameras look along world +x.
    pub fn positions(self, baseline: f64) -> Vec<[f64; 3]> {
        match self {
            Rig::Linear4 | Rig::Linear9 => {
                let n = self.camera_count();
                let mid = (n as f64 - 1.0) / 2.0;
                (0..n).map(|i| [0.0, (mid - i as f64) * baseline, 0.0]).collect()
            }
            Rig::Grid8 => (0..8)
                .map(|i| {
                    let (row, col) = (i / 4, i % 4);
                    [0.0, (1.5 - col as f64) * baseline, (0.5 - row as f64) * baseline]
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub kind: SceneKind,
    pub splat_count: usize,
    pub rig: Rig,
    pub baseline_m: f64,
    pub resolution: (u32, u32),
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            kind: SceneKind::TexturedPlane,
            splat_count: 100_000,
            rig: Rig::Linear4,
            baseline_m: 0.1,
            resolution: (960, 540),
            noise_sigma: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (w, h) = self.resolution;
        if w % 2 != 0 || h % 2 != 0 || w < 8 || h < 8 {
            return Err(ConfigError::Invalid(format!("resolution {w}x{h} must be even and at least 8x8")));
        }
        if self.splat_count == 0 {
            return Err(ConfigError::Invalid("splat_count must be positive".into()));
        }
        if !(self.baseline_m > 0.0 && self.baseline_m.is_finite()) {
            return Err(ConfigError::Invalid("baseline_m must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            return Err(ConfigError::Invalid("noise_sigma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<CameraParams> {
        let (w, h) = self.resolution;
        self.rig
            .positions(self.baseline_m)
            .into_iter()
            .enumerate()
            .map(|(i, position)| CameraParams {
                id: i as u32,
                intrinsics: Intrinsics::with_hfov(w, h, RIG_HFOV_DEG),
                pose: Pose {
                    yaw_deg: 0.0,
                    pitch_deg: 0.0,
                    roll_deg: 0.0,
                    position,
                    convention: Convention::Miv,
                },
            })
            .collect()
    }
}

/// Ground truth plus rendered views.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub scene: GaussianScene,
    pub cameras: Vec<CameraParams>,
    /// Source textures as captured (noise included for `NoiseAugmented`).
    pub views: Vec<RgbImage>,
    /// Pristine evaluation references, one per camera.
    pub heldout: Vec<(CameraParams, RgbImage)>,
}

pub fn generate(spec: &SceneSpec) -> Result<Dataset, ConfigError> {
    spec.validate()?;
    let cameras = spec.cameras();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = Texture::new(spec.seed);
    let (gaussians, degree) = build_scene(spec, &cameras, &texture, &mut rng);
    let scene = GaussianScene::new(gaussians, degree)?;
    let cfg = RasterConfig::default();
    let clean: Vec<RgbImage> = cameras
        .par_iter()
        .map(|c| rasterizer::render(&scene, c, &cfg).map(|o| o.to_rgb8()))
        .collect::<Result<_, _>>()?;
    let views = if spec.kind == SceneKind::NoiseAugmented && spec.noise_sigma > 0.0 {
        clean
            .iter()
            .enumerate()
            .map(|(i, v)| add_noise(v, spec.noise_sigma, spec.seed ^ 0x9e37_79b9_7f4a_7c15 ^ i as u64))
            .collect()
    } else {
        clean.clone()
    };
    let heldout = cameras.iter().copied().zip(clean).collect();
    Ok(Dataset {
        spec: spec.clone(),
        scene,
        cameras,
        views,
        heldout,
    })
}

/// Additive uniform noise in `[-sigma, sigma]` per channel, seeded.
pub fn add_noise(img: &RgbImage, sigma: f64, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .as_raw()
        .iter()
        .map(|&v| {
            let n: f64 = rng.gen_range(-sigma..=sigma);
            ((v as f64 / 255.0 + n).clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    RgbImage::from_raw(img.width(), img.height(), data).expect("same dims")
}

/// Picks transmitted cameras: `round(k (n - 1) / (m - 1))`, `m = min(n, 4 * atlas_count)`.
/// Returns `(transmitted, evaluation)` index lists; evaluation covers every camera.
pub fn split_transmitted(camera_count: usize, atlas_count: usize) -> Result<(Vec<usize>, Vec<usize>), ConfigError> {
    if !(1..=2).contains(&atlas_count) {
        return Err(ConfigError::Invalid(format!("atlas_count {atlas_count} must be 1 or 2")));
    }
    if camera_count < 4 {
        return Err(ConfigError::Invalid(format!("{camera_count} cameras; at least 4 required")));
    }
    let m = camera_count.min(4 * atlas_count);
    let n = camera_count;
    let mut picked: Vec<usize> = (0..m)
        .map(|k| ((k * (n - 1)) as f64 / (m - 1) as f64).round() as usize)
        .collect();
    picked.dedup();
    Ok((picked, (0..n).collect()))
}

/// Smooth multi-octave value noise, colored.
#[derive(Debug, Clone)]
pub struct Texture {
    seed: u64,
}

const OCTAVES: [(f64, f64); 4] = [(0.5, 0.35), (0.2, 0.25), (0.1, 0.2), (0.03, 0.2)];

impl Texture {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn lattice(&self, ix: i64, iy: i64, salt: u64) -> f64 {
        let mut z = self
            .seed
            .wrapping_add((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add((iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
            .wrapping_add(salt.wrapping_mul(0x1656_67b1_9e37_79f9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    fn value_noise(&self, u: f64, v: f64, salt: u64) -> f64 {
        let (fu, fv) = (u.floor(), v.floor());
        let (tu, tv) = (u - fu, v - fv);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (su, sv) = (s(tu), s(tv));
        let (iu, iv) = (fu as i64, fv as i64);
        let a = self.lattice(iu, iv, salt);
        let b = self.lattice(iu + 1, iv, salt);
        let c = self.lattice(iu, iv + 1, salt);
        let d = self.lattice(iu + 1, iv + 1, salt);
        (a * (1.0 - su) + b * su) * (1.0 - sv) + (c * (1.0 - su) + d * su) * sv
    }

    /// RGB in `[0, 1]` at surface coordinates `(u, v)` (meters) on surface `surface`.
    pub fn color(&self, u: f64, v: f64, surface: u64) -> [f64; 3] {
        let mut rgb = [0.0; 3];
        for (ch, out) in rgb.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (o, (period, amp)) in OCTAVES.iter().enumerate() {
                let salt = surface * 97 + (ch as u64) * 13 + o as u64;
                acc += amp * self.value_noise(u / period + 17.3 * o as f64, v / period - 4.1 * o as f64, salt);
            }
            *out = 0.1 + 0.8 * acc;
        }
        rgb
    }
}

/// Flat disk splats over a rectangle: origin `o`, unit axes `a`, `b`, extents `la`, `lb`.
#[allow(clippy::too_many_arguments)]
fn rect_splats(
    out: &mut Vec<Gaussian>,
    rng: &mut ChaCha8Rng,
    texture: &Texture,
    surface: u64,
    o: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    la: f64,
    lb: f64,
    count: usize,
    degree: u8,
) {
    let spacing = (la * lb / count.max(1) as f64).sqrt();
    let na = (la / spacing).ceil() as usize;
    let nb = (lb / spacing).ceil() as usize;
    let normal = a.cross(&b).normalize();
    let rot = UnitQuaternion::rotation_between(&Vector3::x(), &normal).unwrap_or_else(|| {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI)
    });
    let sigma = 0.75 * spacing;
    for j in 0..nb {
        for i in 0..na {
            let u = (i as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * spacing;
            let v = (j as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * spacing;
            let mu = o + a * u + b * v;
            let mut coeffs = vec![[0.0; 3]; sh::coeff_count(degree)];
            coeffs[0] = sh::dc_from_rgb(texture.color(u, v, surface));
            out.push(Gaussian {
                mu,
                rot,
                log_scale: Vector3::new((0.05 * sigma).ln(), sigma.ln(), sigma.ln()),
                opacity: 0.95,
                sh: coeffs,
            });
        }
    }
}

/// Fibonacci-lattice splats on a sphere. `view_dependent` adds degree-1/2 color terms.
#[allow(clippy::too_many_arguments)]
fn sphere_splats(
    out: &mut Vec<Gaussian>,
    texture: &Texture,
    surface: u64,
    center: Vector3<f64>,
    radius: f64,
    count: usize,
    degree: u8,
    view_dependent: bool,
) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let spacing = (4.0 * std::f64::consts::PI * radius * radius / count as f64).sqrt();
    let sigma = 0.75 * spacing;
    for k in 0..count {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * k as f64;
        let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        let rot = UnitQuaternion::rotation_between(&Vector3::x(), &n)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI));
        let (u, v) = (radius * phi.rem_euclid(std::f64::consts::TAU), radius * z.acos());
        let base = texture.color(u, v, surface);
        let mut coeffs = vec![[0.0; 3]; sh::coeff_count(degree)];
        if view_dependent {
            // Darker diffuse base plus a strong lobe that swings with the viewing direction.
            coeffs[0] = sh::dc_from_rgb(base.map(|c| 0.25 + 0.5 * c));
            coeffs[1] = [1.2, 0.4, -0.6];
            coeffs[3] = [0.3, 0.3, 0.3];
            coeffs[4] = [2.0, -1.0, 1.5];
            coeffs[8] = [-1.0, 1.5, 0.5];
        } else {
            coeffs[0] = sh::dc_from_rgb(base);
        }
        out.push(Gaussian {
            mu: center + n * radius,
            rot,
            log_scale: Vector3::new((0.05 * sigma).ln(), sigma.ln(), sigma.ln()),
            opacity: 0.95,
            sh: coeffs,
        });
    }
}

/// Half extents `(y, z)` a surface at depth `x` must cover to fill every rig view.
fn coverage(cams: &[CameraParams], x: f64) -> (f64, f64) {
    let k = &cams[0].intrinsics;
    let half_y = x * (k.principal_x + 1.0) / k.focal_x;
    let half_z = x * (k.principal_y + 1.0) / k.focal_y;
    let span_y = cams.iter().map(|c| c.pose.position[1].abs()).fold(0.0, f64::max);
    let span_z = cams.iter().map(|c| c.pose.position[2].abs()).fold(0.0, f64::max);
    (half_y + span_y + 0.05 * x, half_z + span_z + 0.05 * x)
}

fn back_plane(out: &mut Vec<Gaussian>, rng: &mut ChaCha8Rng, tex: &Texture, cams: &[CameraParams], x: f64, count: usize, degree: u8) {
    let (hy, hz) = coverage(cams, x);
    rect_splats(
        out,
        rng,
        tex,
        0,
        Vector3::new(x, hy, hz),
        -Vector3::y(),
        -Vector3::z(),
        2.0 * hy,
        2.0 * hz,
        count,
        degree,
    );
}

fn build_scene(spec: &SceneSpec, cams: &[CameraParams], tex: &Texture, rng: &mut ChaCha8Rng) -> (Vec<Gaussian>, u8) {
    let n = spec.splat_count;
    let mut out = Vec::with_capacity(n + n / 4);
    match spec.kind.base() {
        SceneKind::TexturedPlane => {
            back_plane(&mut out, rng, tex, cams, 2.0, n, 0);
            (out, 0)
        }
        SceneKind::BoxRoom => {
            let depth = 4.0;
            let (hy, hz) = coverage(cams, depth);
            let back = n / 2;
            back_plane(&mut out, rng, tex, cams, depth, back, 0);
            let side = (n - back) / 4;
            let x0 = 0.6;
            let len = depth - x0;
            // Left and right walls, floor and ceiling.
            let walls = [
                (Vector3::new(x0, hy, hz), Vector3::x(), -Vector3::z(), 2.0 * hz),
                (Vector3::new(x0, -hy, -hz), Vector3::x(), Vector3::z(), 2.0 * hz),
                (Vector3::new(x0, -hy, -hz), Vector3::x(), Vector3::y(), 2.0 * hy),
                (Vector3::new(x0, hy, hz), Vector3::x(), -Vector3::y(), 2.0 * hy),
            ];
            for (k, (o, a, b, lb)) in walls.into_iter().enumerate() {
                rect_splats(&mut out, rng, tex, 1 + k as u64, o, a, b, len, lb, side, 0);
            }
            (out, 0)
        }
        SceneKind::SphereField => {
            let back = n * 3 / 5;
            back_plane(&mut out, rng, tex, cams, 3.5, back, 0);
            let spheres = 5;
            let per = (n - back) / spheres;
            for k in 0..spheres {
                let center = Vector3::new(
                    rng.gen_range(1.8..2.8),
                    -0.8 + 1.6 * (k as f64 + 0.5) / spheres as f64 + rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.25..0.25),
                );
                let r = rng.gen_range(0.15..0.28);
                sphere_splats(&mut out, tex, 10 + k as u64, center, r, per, 0, false);
            }
            (out, 0)
        }
        SceneKind::SpecularSphere => {
            let back = n / 2;
            back_plane(&mut out, rng, tex, cams, 4.0, back, 2);
            sphere_splats(&mut out, tex, 10, Vector3::new(2.5, 0.0, 0.0), 0.5, n - back, 2, true);
            (out, 2)
        }
        SceneKind::NoiseAugmented => unreachable!("base() never returns NoiseAugmented"),
    }
}
