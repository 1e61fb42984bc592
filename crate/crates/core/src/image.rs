//! Plain interleaved image buffers shared by every pipeline stage.

use serde::{Deserialize, Serialize};

/// 8-bit interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    /// Wraps an existing buffer. Returns `None` when the length does not match.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    /// Quantizes a float RGB buffer in `[0, 1]` (values are clamped).
    pub fn from_f32(width: usize, height: usize, rgb: &[f32]) -> Self {
        assert_eq!(rgb.len(), width * height * 3);
        let data = rgb.iter().map(|&v| quantize(v)).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Normalized float copy, `[0, 1]` per channel.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// BT.601 luma in 8-bit units.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    /// Copies the `w x h` rectangle at `(x, y)`. Caller guarantees bounds.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> RgbImage {
        let mut out = RgbImage::new(w, h);
        for row in 0..h {
            let src = ((y + row) * self.width + x) * 3;
            let dst = row * w * 3;
            out.data[dst..dst + w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        out
    }

    /// Writes `src` with its top-left corner at `(x, y)`. Caller guarantees bounds.
    pub fn blit(&mut self, src: &RgbImage, x: usize, y: usize) {
        for row in 0..src.height {
            let dst = ((y + row) * self.width + x) * 3;
            let s = row * src.width * 3;
            self.data[dst..dst + src.width * 3].copy_from_slice(&src.data[s..s + src.width * 3]);
        }
    }

    /// Box-filter downsample by an integer factor; trailing partial blocks are averaged too.
    pub fn downsample(&self, factor: usize) -> Vec<f32> {
        let (w, h) = (self.width.div_ceil(factor), self.height.div_ceil(factor));
        let mut out = vec![0f32; w * h * 3];
        for by in 0..h {
            for bx in 0..w {
                let mut acc = [0f32; 3];
                let mut n = 0f32;
                for y in by * factor..((by + 1) * factor).min(self.height) {
                    for x in bx * factor..((bx + 1) * factor).min(self.width) {
                        let p = self.pixel(x, y);
                        for c in 0..3 {
                            acc[c] += p[c] as f32;
                        }
                        n += 1.0;
                    }
                }
                let o = (by * w + bx) * 3;
                for c in 0..3 {
                    out[o + c] = acc[c] / (255.0 * n);
                }
            }
        }
        out
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel float plane (depth, alpha, confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Float RGB image in `[0, 1]`, used where 8-bit quantization would bias sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbF32 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbF32 {
    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.to_f32(),
        }
    }

    /// Bilinear sample at continuous pixel-center coordinates. `None` outside the valid area.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<[f32; 3]> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        if x0 >= self.width || y0 >= self.height {
            return None;
        }
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        if (x0 + 1 >= self.width && x > x0 as f64) || (y0 + 1 >= self.height && y > y0 as f64) {
            return None;
        }
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let w = self.width;
        let p = |xx: usize, yy: usize, c: usize| self.data[(yy * w + xx) * 3 + c];
        let mut out = [0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = p(x0, y0, c) * (1.0 - fx) + p(x1, y0, c) * fx;
            let bot = p(x0, y1, c) * (1.0 - fx) + p(x1, y1, c) * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        Some(out)
    }
}
