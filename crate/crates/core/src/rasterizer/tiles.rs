use rayon::prelude::*;

use super::{ProjectedSplat, RenderOutput, CUTOFF_SQ, MIN_TRANSMITTANCE};

/// Compressed per-tile splat lists. Each list is sorted by `(depth, index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    offsets: Vec<usize>,
    entries: Vec<u32>,
}

impl TileBins {
    pub fn tile(&self, tx: usize, ty: usize) -> &[u32] {
        let t = ty * self.tiles_x + tx;
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }
}

/// Splat indices in front-to-back order, ties by index.
fn depth_order(splats: &[ProjectedSplat]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        splats[a as usize]
            .depth
            .total_cmp(&splats[b as usize].depth)
            .then(a.cmp(&b))
    });
    order
}

/// Assigns each splat to every tile its 3-sigma bounding box touches.
pub fn bin_tiles(splats: &[ProjectedSplat], width: usize, height: usize, tile_size: usize) -> TileBins {
    assert!(tile_size > 0);
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut counts = vec![0usize; tiles_x * tiles_y + 1];
    let span = |s: &ProjectedSplat| {
        let [x0, y0, x1, y1] = s.bounds;
        (
            x0 as usize / tile_size,
            y0 as usize / tile_size,
            x1 as usize / tile_size,
            y1 as usize / tile_size,
        )
    };
    for s in splats {
        let (tx0, ty0, tx1, ty1) = span(s);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                counts[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; *offsets.last().unwrap()];
    for i in depth_order(splats) {
        let (tx0, ty0, tx1, ty1) = span(&splats[i as usize]);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let t = ty * tiles_x + tx;
                entries[cursor[t]] = i;
                cursor[t] += 1;
            }
        }
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}

/// Front-to-back traversal of one pixel. Calls `visit(position_in_list, weight, alpha)`
/// for every contributing splat and returns the final transmittance.
#[inline(always)]
fn traverse<F: FnMut(usize, f32, f32)>(list: &[u32], splats: &[ProjectedSplat], x: f32, y: f32, mut visit: F) -> f32 {
    let mut t = 1.0f32;
    for (k, &i) in list.iter().enumerate() {
        let s = &splats[i as usize];
        let dx = x - s.mean[0];
        let dy = y - s.mean[1];
        let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if !(m <= CUTOFF_SQ) {
            continue;
        }
        let a = s.opacity * (-0.5 * m).exp();
        visit(k, a * t, a);
        t *= 1.0 - a;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    t
}

#[derive(Default)]
struct PixelOut {
    color: [f32; 3],
    alpha: f32,
    depth: f32,
    count: u32,
}

#[inline(always)]
fn shade(list: &[u32], splats: &[ProjectedSplat], x: usize, y: usize, background: [f32; 3]) -> PixelOut {
    let mut c = [0f32; 3];
    let mut z = 0f32;
    let mut n = 0u32;
    let t = traverse(list, splats, x as f32, y as f32, |k, w, _| {
        let s = &splats[list[k] as usize];
        c[0] += w * s.color[0];
        c[1] += w * s.color[1];
        c[2] += w * s.color[2];
        z += w * s.depth;
        n += 1;
    });
    let alpha = 1.0 - t;
    PixelOut {
        color: [c[0] + t * background[0], c[1] + t * background[1], c[2] + t * background[2]],
        alpha,
        depth: z / alpha.max(1e-6),
        count: n,
    }
}

fn empty_output(width: usize, height: usize) -> RenderOutput {
    RenderOutput {
        width,
        height,
        color: vec![0.0; width * height * 3],
        alpha: vec![0.0; width * height],
        depth: vec![0.0; width * height],
        contrib_count: vec![0; width * height],
    }
}

fn write_pixel(out: &mut RenderOutput, idx: usize, p: PixelOut) {
    out.color[idx * 3..idx * 3 + 3].copy_from_slice(&p.color);
    out.alpha[idx] = p.alpha;
    out.depth[idx] = p.depth;
    out.contrib_count[idx] = p.count;
}

/// Blends the binned splats into the final image, one tile per task.
pub fn composite(
    bins: &TileBins,
    splats: &[ProjectedSplat],
    width: usize,
    height: usize,
    background: [f32; 3],
) -> RenderOutput {
    let ts = bins.tile_size;
    let tiles: Vec<Vec<PixelOut>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
            let list = bins.tile(tx, ty);
            let mut px = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(height) {
                for x in tx * ts..((tx + 1) * ts).min(width) {
                    px.push(shade(list, splats, x, y, background));
                }
            }
            px
        })
        .collect();
    let mut out = empty_output(width, height);
    for (t, px) in tiles.into_iter().enumerate() {
        let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
        let mut it = px.into_iter();
        for y in ty * ts..((ty + 1) * ts).min(height) {
            for x in tx * ts..((tx + 1) * ts).min(width) {
                write_pixel(&mut out, y * width + x, it.next().unwrap());
            }
        }
    }
    out
}

/// Reference renderer: every pixel walks the full depth-sorted splat list.
pub fn render_naive(splats: &[ProjectedSplat], width: usize, height: usize, background: [f32; 3]) -> RenderOutput {
    let order = depth_order(splats);
    let mut out = empty_output(width, height);
    let rows: Vec<Vec<PixelOut>> = (0..height)
        .into_par_iter()
        .map(|y| (0..width).map(|x| shade(&order, splats, x, y, background)).collect())
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, p) in row.into_iter().enumerate() {
            write_pixel(&mut out, y * width + x, p);
        }
    }
    out
}

/// Naive colors for a subset of rows only; used to time the reference path.
pub fn render_naive_rows(
    splats: &[ProjectedSplat],
    width: usize,
    rows: &[usize],
    background: [f32; 3],
) -> Vec<f32> {
    let order = depth_order(splats);
    rows.par_iter()
        .flat_map_iter(|&y| {
            let order = &order;
            (0..width).flat_map(move |x| shade(order, splats, x, y, background).color)
        })
        .collect()
}

/// Per-splat accumulation of compositing weights against a residual image.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatStats {
    /// Sum of compositing weights.
    pub weight: f64,
    /// Weighted signed residual per channel.
    pub residual: [f64; 3],
    /// Weighted squared residual (summed over channels).
    pub sq_residual: f64,
}

impl SplatStats {
    fn add(&mut self, o: &SplatStats) {
        self.weight += o.weight;
        for c in 0..3 {
            self.residual[c] += o.residual[c];
        }
        self.sq_residual += o.sq_residual;
    }

    /// Weighted mean residual per channel.
    pub fn mean_residual(&self) -> [f64; 3] {
        if self.weight > 0.0 {
            self.residual.map(|r| r / self.weight)
        } else {
            [0.0; 3]
        }
    }

    /// Weighted mean squared residual per channel.
    pub fn mean_sq(&self) -> f64 {
        if self.weight > 0.0 {
            self.sq_residual / (3.0 * self.weight)
        } else {
            0.0
        }
    }
}

/// Accumulates, for each splat, its compositing weight times the per-pixel residual.
/// `residual` is interleaved RGB. The result is indexed like `splats`.
pub fn accumulate_stats(
    bins: &TileBins,
    splats: &[ProjectedSplat],
    width: usize,
    height: usize,
    residual: &[f32],
) -> Vec<SplatStats> {
    assert_eq!(residual.len(), width * height * 3);
    let ts = bins.tile_size;
    let per_tile: Vec<Vec<SplatStats>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
            let list = bins.tile(tx, ty);
            let mut acc = vec![SplatStats::default(); list.len()];
            for y in ty * ts..((ty + 1) * ts).min(height) {
                for x in tx * ts..((tx + 1) * ts).min(width) {
                    let o = (y * width + x) * 3;
                    let r = [residual[o], residual[o + 1], residual[o + 2]];
                    let sq = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) as f64;
                    traverse(list, splats, x as f32, y as f32, |k, w, _| {
                        let a = &mut acc[k];
                        let w = w as f64;
                        a.weight += w;
                        a.residual[0] += w * r[0] as f64;
                        a.residual[1] += w * r[1] as f64;
                        a.residual[2] += w * r[2] as f64;
                        a.sq_residual += w * sq;
                    });
                }
            }
            acc
        })
        .collect();
    let mut out = vec![SplatStats::default(); splats.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        let list = bins.tile(t % bins.tiles_x, t / bins.tiles_x);
        for (k, a) in acc.iter().enumerate() {
            if a.weight > 0.0 {
                out[list[k] as usize].add(a);
            }
        }
    }
    out
}
