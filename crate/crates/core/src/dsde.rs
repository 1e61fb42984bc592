//! Depth-based decoder pipeline: plane-sweep cost volume, winner-take-all
//! depth with confidence, and forward-warping view synthesis.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraParams, ViewFrame};
use crate::image::{quantize, RgbF32, RgbImage};

/// Per-source cost of a warp that leaves the source image.
pub const OUT_OF_FRAME_COST: f32 = 0.1;
pub const SAD_WEIGHT: f32 = 0.8;
pub const CENSUS_WEIGHT: f32 = 0.2;
/// Pixels with lower confidence are marked invalid.
pub const MIN_CONFIDENCE: f32 = 0.05;
/// Candidates within this distance (meters) of the nearest one are blended.
pub const Z_TOLERANCE: f64 = 0.01;
pub const ANGLE_EPS: f64 = 0.01;
pub const MAX_INPAINT_PASSES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DsdeError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsdeConfig {
    pub planes: usize,
    pub depth_range: (f64, f64),
}

impl Default for DsdeConfig {
    fn default() -> Self {
        Self {
            planes: 64,
            depth_range: (1.0, 4.0),
        }
    }
}

impl DsdeConfig {
    pub fn validate(&self) -> Result<(), DsdeError> {
        let (near, far) = self.depth_range;
        if self.planes < 2 {
            return Err(DsdeError::Config(format!("{} planes; at least 2 required", self.planes)));
        }
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(DsdeError::Config(format!("depth range [{near}, {far}] must be positive and increasing")));
        }
        Ok(())
    }
}

/// Depths uniform in inverse depth from `near` (index 0) to `far`.
pub fn plane_depths(n: usize, near: f64, far: f64) -> Vec<f64> {
    let (a, b) = (1.0 / near, 1.0 / far);
    (0..n).map(|k| 1.0 / (a + (b - a) * k as f64 / (n - 1) as f64)).collect()
}

/// Depth at a fractional plane index, interpolated in inverse depth.
pub fn depth_at_index(idx: f64, n: usize, near: f64, far: f64) -> f64 {
    let (a, b) = (1.0 / near, 1.0 / far);
    1.0 / (a + (b - a) * idx / (n - 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub ref_id: u32,
    pub width: usize,
    pub height: usize,
    pub planes: Vec<f64>,
    pub depth_range: (f64, f64),
    /// Plane-major: `costs[k * width * height + y * width + x]`.
    costs: Vec<f32>,
}

impl CostVolume {
    pub fn from_costs(ref_id: u32, width: usize, height: usize, depth_range: (f64, f64), costs: Vec<f32>) -> Result<Self, DsdeError> {
        let n = width * height;
        if n == 0 || costs.len() % n != 0 || costs.len() / n < 2 {
            return Err(DsdeError::Config("cost buffer must hold at least two full planes".into()));
        }
        if costs.iter().any(|c| !(*c >= 0.0)) {
            return Err(DsdeError::Config("costs must be non-negative".into()));
        }
        Ok(Self {
            ref_id,
            width,
            height,
            planes: plane_depths(costs.len() / n, depth_range.0, depth_range.1),
            depth_range,
            costs,
        })
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, k: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.costs[k * n..(k + 1) * n]
    }

    pub fn cost(&self, x: usize, y: usize, k: usize) -> f32 {
        self.plane(k)[y * self.width + x]
    }
}

fn luma(rgb: &[f32]) -> Vec<f32> {
    rgb.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Absorbs round-off so coordinates that land on the border stay in frame.
#[inline]
fn snap(c: f64, extent: usize) -> f64 {
    const EPS: f64 = 1e-6;
    let hi = (extent - 1) as f64;
    if c < 0.0 && c > -EPS {
        0.0
    } else if c > hi && c < hi + EPS {
        hi
    } else {
        c
    }
}

struct SourceWarp {
    image: RgbF32,
    frame: ViewFrame,
    /// Reference center in source camera coordinates.
    offset: Vector3<f64>,
    /// Per reference pixel: ray direction in source camera coordinates.
    dirs: Vec<Vector3<f64>>,
}

/// Plane-sweep matching cost of `reference` against `sources` over `planes`
/// inverse-depth-uniform hypotheses.
pub fn build_cost_volume(
    reference: (&CameraParams, &RgbImage),
    sources: &[(CameraParams, RgbImage)],
    planes: usize,
    depth_range: (f64, f64),
) -> Result<CostVolume, DsdeError> {
    DsdeConfig { planes, depth_range }.validate()?;
    if sources.is_empty() {
        return Err(DsdeError::Config("at least one source view required".into()));
    }
    let (ref_cam, ref_img) = reference;
    let rf = ViewFrame::new(ref_cam)?;
    let (w, h) = (rf.width, rf.height);
    if ref_img.dims() != (w, h) {
        return Err(DsdeError::Config("reference image disagrees with its intrinsics".into()));
    }
    let ref_rgb = ref_img.to_f32();
    let ref_luma = luma(&ref_rgb);
    let mut warps = Vec::with_capacity(sources.len());
    for (cam, img) in sources {
        let frame = ViewFrame::new(cam)?;
        if img.dims() != (frame.width, frame.height) {
            return Err(DsdeError::Config(format!("source {} image disagrees with its intrinsics", cam.id)));
        }
        let r = frame.rotation;
        let dirs = (0..w * h).map(|i| r * rf.ray((i % w) as f64, (i / w) as f64)).collect();
        warps.push(SourceWarp {
            image: RgbF32::from_rgb8(img),
            frame,
            offset: r * (rf.center - frame.center),
            dirs,
        });
    }
    let depths = plane_depths(planes, depth_range.0, depth_range.1);
    let slices: Vec<Vec<f32>> = depths
        .par_iter()
        .map(|&d| plane_cost(&ref_rgb, &ref_luma, w, h, &warps, d))
        .collect();
    Ok(CostVolume {
        ref_id: ref_cam.id,
        width: w,
        height: h,
        planes: depths,
        depth_range,
        costs: slices.concat(),
    })
}

fn plane_cost(ref_rgb: &[f32], ref_luma: &[f32], w: usize, h: usize, warps: &[SourceWarp], depth: f64) -> Vec<f32> {
    let n = w * h;
    let mut acc = vec![0f32; n];
    let mut inside = vec![false; n];
    let mut ad = vec![0f32; n];
    let mut wl = vec![0f32; n];
    for s in warps {
        let f = &s.frame;
        for i in 0..n {
            let p = s.offset + s.dirs[i] * depth;
            let hit = if p.z > 1e-9 {
                let (u, v) = (f.cx + f.fx * p.x / p.z, f.cy + f.fy * p.y / p.z);
                s.image.sample(snap(u, f.width), snap(v, f.height))
            } else {
                None
            };
            inside[i] = hit.is_some();
            if let Some(c) = hit {
                let r = &ref_rgb[i * 3..i * 3 + 3];
                ad[i] = ((r[0] - c[0]).abs() + (r[1] - c[1]).abs() + (r[2] - c[2]).abs()) / 3.0;
                wl[i] = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
            }
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !inside[i] {
                    acc[i] += OUT_OF_FRAME_COST;
                    continue;
                }
                let (mut sum, mut cnt, mut ham) = (ad[i], 1u32, 0u32);
                for (dx, dy) in NEIGHBORS {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if inside[j] {
                        sum += ad[j];
                        cnt += 1;
                        ham += u32::from((ref_luma[j] < ref_luma[i]) != (wl[j] < wl[i]));
                    } else {
                        ham += 1;
                    }
                }
                acc[i] += SAD_WEIGHT * sum / cnt as f32 + CENSUS_WEIGHT * ham as f32 / 8.0;
            }
        }
    }
    let inv = 1.0 / warps.len() as f32;
    acc.iter_mut().for_each(|c| *c *= inv);
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub valid: Vec<bool>,
    pub conf: Vec<f32>,
}

impl DepthMap {
    /// Fully valid, fully confident map from known depths.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f32>) -> Self {
        let valid: Vec<bool> = depth.iter().map(|d| *d > 0.0 && d.is_finite()).collect();
        let conf = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Self {
            width,
            height,
            depth,
            valid,
            conf,
        }
    }

    /// Depths with invalid pixels replaced by diffusion from valid neighbors.
    /// Unchanged when nothing is valid.
    pub fn filled_depth(&self) -> Vec<f32> {
        let (w, h) = (self.width, self.height);
        let mut depth = self.depth.clone();
        let mut known = self.valid.clone();
        if !known.iter().any(|v| *v) {
            return depth;
        }
        while known.iter().any(|v| !v) {
            let updates: Vec<(usize, f32)> = (0..w * h)
                .filter(|&i| !known[i])
                .filter_map(|i| {
                    let (x, y) = ((i % w) as isize, (i / w) as isize);
                    let (mut s, mut n) = (0f32, 0);
                    for (dx, dy) in NEIGHBORS {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize && known[ny as usize * w + nx as usize] {
                            s += depth[ny as usize * w + nx as usize];
                            n += 1;
                        }
                    }
                    (n > 0).then(|| (i, s / n as f32))
                })
                .collect();
            for (i, d) in updates {
                depth[i] = d;
                known[i] = true;
            }
        }
        depth
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len().max(1) as f64
    }
}

/// 3x3 box mean over in-image neighbors.
fn box3(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let mut s = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    s += src[yy * w + xx];
                }
            }
            out[y * w + x] = s / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f32;
        }
    }
    out
}

/// Vertex offset in `[-0.5, 0.5]` of the parabola through three equally spaced costs.
pub fn parabola_offset(c_minus: f64, c0: f64, c_plus: f64) -> f64 {
    let denom = c_minus - 2.0 * c0 + c_plus;
    if denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (c_minus - c_plus) / denom).clamp(-0.5, 0.5)
}

/// Winner-take-all over 3x3-aggregated costs with parabolic refinement.
pub fn estimate_depth(cv: &CostVolume) -> DepthMap {
    let (w, h, np) = (cv.width, cv.height, cv.plane_count());
    let agg: Vec<Vec<f32>> = (0..np).into_par_iter().map(|k| box3(cv.plane(k), w, h)).collect();
    let (near, far) = cv.depth_range;
    let per_pixel: Vec<(f32, bool, f32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let mut best = 0;
            for k in 1..np {
                if agg[k][i] < agg[best][i] {
                    best = k;
                }
            }
            let cmin = agg[best][i] as f64;
            let second = (0..np)
                .filter(|&k| k + 1 < best || k > best + 1)
                .map(|k| agg[k][i] as f64)
                .fold(f64::INFINITY, f64::min);
            let conf = if second.is_finite() && second > 0.0 {
                (1.0 - cmin / second).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let offset = if best > 0 && best + 1 < np {
                parabola_offset(agg[best - 1][i] as f64, cmin, agg[best + 1][i] as f64)
            } else {
                0.0
            };
            let depth = depth_at_index(best as f64 + offset, np, near, far) as f32;
            let valid = conf as f32 >= MIN_CONFIDENCE;
            (depth, valid, if valid { conf as f32 } else { 0.0 })
        })
        .collect();
    DepthMap {
        width: w,
        height: h,
        depth: per_pixel.iter().map(|p| p.0).collect(),
        valid: per_pixel.iter().map(|p| p.1).collect(),
        conf: per_pixel.iter().map(|p| p.2).collect(),
    }
}

struct Candidate {
    target: u32,
    z: f32,
    weight: f32,
    color: [f32; 3],
}

/// Forward-warps every valid input pixel into `target`, z-buffers, blends and inpaints.
pub fn dibr_synthesize(inputs: &[(CameraParams, RgbImage, DepthMap)], target: &CameraParams) -> Result<RgbImage, DsdeError> {
    if inputs.is_empty() {
        return Err(DsdeError::Config("at least one input view required".into()));
    }
    let tf = ViewFrame::new(target)?;
    let (tw, th) = (tf.width, tf.height);
    let mut all: Vec<Vec<Candidate>> = Vec::with_capacity(inputs.len());
    for (cam, img, dm) in inputs {
        let sf = ViewFrame::new(cam)?;
        if img.dims() != (sf.width, sf.height) || (dm.width, dm.height) != img.dims() {
            return Err(DsdeError::Config(format!("view {} image/depth dims disagree with intrinsics", cam.id)));
        }
        let rgb = img.to_f32();
        let w = sf.width;
        let per_pixel: Vec<Vec<Candidate>> = (0..w * sf.height)
            .into_par_iter()
            .map(|i| {
                if !dm.valid[i] {
                    return Vec::new();
                }
                let x = sf.unproject((i % w) as f64, (i / w) as f64, dm.depth[i] as f64);
                let Some((u, v, z)) = tf.project(&x) else {
                    return Vec::new();
                };
                let (a, b) = (x - sf.center, x - tf.center);
                let cos = (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
                let base = dm.conf[i] as f64 / (ANGLE_EPS + cos.acos());
                let (x0, y0) = (u.floor(), v.floor());
                let (fx, fy) = (u - x0, v - y0);
                let color = [rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]];
                let mut out = Vec::with_capacity(4);
                for (dx, dy, wb) in [(0.0, 0.0, (1.0 - fx) * (1.0 - fy)), (1.0, 0.0, fx * (1.0 - fy)), (0.0, 1.0, (1.0 - fx) * fy), (1.0, 1.0, fx * fy)] {
                    let (px, py) = (x0 + dx, y0 + dy);
                    if wb < 1e-6 || px < 0.0 || py < 0.0 || px >= tw as f64 || py >= th as f64 {
                        continue;
                    }
                    out.push(Candidate {
                        target: (py as usize * tw + px as usize) as u32,
                        z: z as f32,
                        weight: (wb * base) as f32,
                        color,
                    });
                }
                out
            })
            .collect();
        all.push(per_pixel.into_iter().flatten().collect());
    }
    let n = tw * th;
    let mut zmin = vec![f32::INFINITY; n];
    for c in all.iter().flatten() {
        let t = c.target as usize;
        zmin[t] = zmin[t].min(c.z);
    }
    let mut acc = vec![[0f64; 4]; n];
    for c in all.iter().flatten() {
        let t = c.target as usize;
        if (c.z - zmin[t]) as f64 <= Z_TOLERANCE && c.weight > 0.0 {
            let a = &mut acc[t];
            for k in 0..3 {
                a[k] += c.weight as f64 * c.color[k] as f64;
            }
            a[3] += c.weight as f64;
        }
    }
    let mut color = vec![0f32; n * 3];
    let mut filled = vec![false; n];
    for i in 0..n {
        if acc[i][3] > 0.0 {
            for k in 0..3 {
                color[i * 3 + k] = (acc[i][k] / acc[i][3]) as f32;
            }
            filled[i] = true;
        }
    }
    inpaint(&mut color, &mut filled, tw, th);
    Ok(RgbImage::from_raw(tw, th, color.iter().map(|&v| quantize(v)).collect()).expect("dims"))
}

/// Iterative 8-neighbor mean diffusion into holes; unreached holes stay black.
pub fn inpaint(color: &mut [f32], filled: &mut [bool], w: usize, h: usize) -> usize {
    for pass in 0..MAX_INPAINT_PASSES {
        let updates: Vec<(usize, [f32; 3])> = (0..w * h)
            .filter(|&i| !filled[i])
            .filter_map(|i| {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                let mut s = [0f32; 3];
                let mut cnt = 0;
                for (dx, dy) in NEIGHBORS {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if filled[j] {
                        for k in 0..3 {
                            s[k] += color[j * 3 + k];
                        }
                        cnt += 1;
                    }
                }
                (cnt > 0).then(|| (i, s.map(|v| v / cnt as f32)))
            })
            .collect();
        if updates.is_empty() {
            return pass;
        }
        for (i, c) in updates {
            color[i * 3..i * 3 + 3].copy_from_slice(&c);
            filled[i] = true;
        }
    }
    MAX_INPAINT_PASSES
}

/// Depth for every input view, matching each against all the others.
pub fn estimate_all(inputs: &[(CameraParams, RgbImage)], cfg: &DsdeConfig) -> Result<Vec<DepthMap>, DsdeError> {
    cfg.validate()?;
    if inputs.len() < 2 {
        return Err(DsdeError::Config("depth estimation needs at least two views".into()));
    }
    (0..inputs.len())
        .map(|r| {
            let sources: Vec<(CameraParams, RgbImage)> = inputs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != r)
                .map(|(_, v)| v.clone())
                .collect();
            let cv = build_cost_volume((&inputs[r].0, &inputs[r].1), &sources, cfg.planes, cfg.depth_range)?;
            Ok(estimate_depth(&cv))
        })
        .collect()
}

/// Full decoder branch: estimate depths, then synthesize each target camera.
pub fn synthesize(inputs: &[(CameraParams, RgbImage)], targets: &[CameraParams], cfg: &DsdeConfig) -> Result<Vec<RgbImage>, DsdeError> {
    let depths = estimate_all(inputs, cfg)?;
    let with_depth: Vec<(CameraParams, RgbImage, DepthMap)> = inputs
        .iter()
        .cloned()
        .zip(depths)
        .map(|((c, i), d)| (c, i, d))
        .collect();
    targets.iter().map(|t| dibr_synthesize(&with_depth, t)).collect()
}
