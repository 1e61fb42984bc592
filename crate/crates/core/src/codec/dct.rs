//! 8x8 block DCT path: full-range YCbCr 4:4:4, orthonormal type-II DCT,
//! uniform quantization, zigzag run/size prefix coding.

use std::sync::OnceLock;

use rayon::prelude::*;

use super::entropy::{category, signed_bits, signed_from_bits, BitReader, BitWriter, PrefixCode};
use super::{CodecError, BLOCK};
use crate::image::RgbImage;

pub const BASE_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51, 87,
    80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72,
    92, 95, 98, 112, 100, 103, 99,
];

pub const BASE_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99,
];

const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47,
    55, 62, 63,
];

const EOB: u8 = 0x00;
const ZRL: u8 = 0xF0;
const MAX_DC_CATEGORY: u32 = 16;
const MAX_SKIP_CATEGORY: u32 = 31;

/// Perceptual base matrix (row-major, natural order) for channel 0 = luma, 1/2 = chroma.
pub fn base_matrix(channel: usize) -> &'static [u16; 64] {
    if channel == 0 {
        &BASE_LUMA
    } else {
        &BASE_CHROMA
    }
}

/// DC quantizer step for a channel at `qscale`.
pub fn dc_step(qscale: u8, channel: usize) -> f64 {
    base_matrix(channel)[0] as f64 * qscale as f64 / 16.0
}

fn steps(qscale: u8, channel: usize) -> [f64; 64] {
    base_matrix(channel).map(|b| b as f64 * qscale as f64 / 16.0)
}

fn basis() -> &'static [[f64; 8]; 8] {
    static C: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

pub(super) fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| c[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| c[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| c[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| c[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

fn to_ycc(p: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = p.map(|v| v as f64);
    [
        0.299 * r + 0.587 * g + 0.114 * b - 128.0,
        -0.168_736 * r - 0.331_264 * g + 0.5 * b,
        0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

fn to_rgb(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let y = y + 128.0;
    [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb].map(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Quantized coefficients of one block, three channels, zigzag order.
type Coeffs = [[i32; 64]; 3];

fn quantize_block(img: &RgbImage, bx: u32, by: u32, st: &[[f64; 64]; 3]) -> Coeffs {
    let mut planes = [[0.0f64; 64]; 3];
    for y in 0..8 {
        for x in 0..8 {
            let ycc = to_ycc(img.pixel((bx * BLOCK + x) as usize, (by * BLOCK + y) as usize));
            for ch in 0..3 {
                planes[ch][(y * 8 + x) as usize] = ycc[ch];
            }
        }
    }
    let mut out = [[0i32; 64]; 3];
    for ch in 0..3 {
        let f = fdct(&planes[ch]);
        for (k, &nat) in ZIGZAG.iter().enumerate() {
            out[ch][k] = (f[nat] / st[ch][nat]).round() as i32;
        }
    }
    out
}

fn is_empty(c: &Coeffs, prev_dc: &[i32; 3]) -> bool {
    (0..3).all(|ch| c[ch][0] == prev_dc[ch] && c[ch][1..].iter().all(|&v| v == 0))
}

/// Symbol stream visitor shared by the frequency pass and the write pass.
fn walk(blocks: &[Coeffs], mut emit: impl FnMut(usize, u8, u32, u32)) {
    // Tables: 0 DC luma, 1 AC luma, 2 DC chroma, 3 AC chroma, 4 skip runs.
    let mut prev = [0i32; 3];
    let mut run = 0u32;
    let skip = |emit: &mut dyn FnMut(usize, u8, u32, u32), r: u32| {
        let cat = category(r as i32);
        emit(4, cat as u8, if cat > 0 { r - (1 << (cat - 1)) } else { 0 }, cat.saturating_sub(1));
    };
    for c in blocks {
        if is_empty(c, &prev) {
            run += 1;
            continue;
        }
        skip(&mut emit, run);
        run = 0;
        for ch in 0..3 {
            let (dt, at) = if ch == 0 { (0, 1) } else { (2, 3) };
            let diff = c[ch][0] - prev[ch];
            prev[ch] = c[ch][0];
            let cat = category(diff);
            emit(dt, cat as u8, signed_bits(diff), cat);
            let last = (1..64).rev().find(|&k| c[ch][k] != 0).unwrap_or(0);
            let mut zeros = 0u32;
            for k in 1..=last {
                let v = c[ch][k];
                if v == 0 {
                    zeros += 1;
                    continue;
                }
                while zeros >= 16 {
                    emit(at, ZRL, 0, 0);
                    zeros -= 16;
                }
                let size = category(v);
                emit(at, ((zeros << 4) | size) as u8, signed_bits(v), size);
                zeros = 0;
            }
            if last < 63 {
                emit(at, EOB, 0, 0);
            }
        }
    }
    if run > 0 {
        skip(&mut emit, run);
    }
}

pub(super) fn encode(img: &RgbImage, qscale: u8) -> (Vec<u8>, Vec<u8>) {
    let (wb, hb) = (img.width() as u32 / BLOCK, img.height() as u32 / BLOCK);
    let st = [steps(qscale, 0), steps(qscale, 1), steps(qscale, 2)];
    let blocks: Vec<Coeffs> = (0..wb * hb)
        .into_par_iter()
        .map(|i| quantize_block(img, i % wb, i / wb, &st))
        .collect();
    let mut freq = [[0u64; 256]; 5];
    walk(&blocks, |t, s, _, _| freq[t][s as usize] += 1);
    let codes: Vec<PrefixCode> = freq.iter().map(PrefixCode::from_frequencies).collect();
    let mut w = BitWriter::default();
    walk(&blocks, |t, s, bits, len| {
        codes[t].write(&mut w, s);
        w.put(bits, len);
    });
    let mut tables = Vec::new();
    for c in &codes {
        c.serialize(&mut tables);
    }
    (tables, w.finish())
}

pub(super) fn decode(tables: &[u8], data: &[u8], wb: u32, hb: u32, qscale: u8) -> Result<RgbImage, CodecError> {
    let mut pos = 0;
    let mut codes = Vec::with_capacity(5);
    for t in 0..5 {
        let c = PrefixCode::deserialize(tables, &mut pos).map_err(|e| CodecError::Header(format!("code table {t}: {e:?}")))?;
        codes.push(c);
    }
    if pos != tables.len() {
        return Err(CodecError::Header(format!("{} trailing bytes in code tables", tables.len() - pos)));
    }
    let total = (wb * hb) as usize;
    let mut blocks: Vec<Coeffs> = Vec::with_capacity(total);
    let mut r = BitReader::new(data);
    let mut prev = [0i32; 3];
    while blocks.len() < total {
        let at = |n: usize| (n as u32 % wb, n as u32 / wb);
        let (bx, by) = at(blocks.len());
        let cat = codes[4].read(&mut r).ok_or_else(|| CodecError::at(bx, by, "bad or truncated skip-run code"))? as u32;
        if cat > MAX_SKIP_CATEGORY {
            return Err(CodecError::at(bx, by, format!("skip category {cat}")));
        }
        let run = if cat == 0 {
            0
        } else {
            let extra = r.bits(cat - 1).ok_or_else(|| CodecError::at(bx, by, "truncated skip run"))?;
            (1usize << (cat - 1)) + extra as usize
        };
        if blocks.len() + run > total {
            return Err(CodecError::at(bx, by, format!("skip run {run} passes the last block")));
        }
        let mut empty = [[0i32; 64]; 3];
        for ch in 0..3 {
            empty[ch][0] = prev[ch];
        }
        blocks.extend(std::iter::repeat_n(empty, run));
        if blocks.len() == total {
            break;
        }
        let (bx, by) = at(blocks.len());
        let mut c = [[0i32; 64]; 3];
        for ch in 0..3 {
            let (dt, atab) = if ch == 0 { (0, 1) } else { (2, 3) };
            let cat = codes[dt].read(&mut r).ok_or_else(|| CodecError::at(bx, by, "bad or truncated DC code"))? as u32;
            if cat > MAX_DC_CATEGORY {
                return Err(CodecError::at(bx, by, format!("DC category {cat}")));
            }
            let bits = r.bits(cat).ok_or_else(|| CodecError::at(bx, by, "truncated DC bits"))?;
            prev[ch] = prev[ch]
                .checked_add(signed_from_bits(bits, cat))
                .filter(|v| v.abs() <= 1 << 20)
                .ok_or_else(|| CodecError::at(bx, by, "DC out of range"))?;
            c[ch][0] = prev[ch];
            let mut k = 1usize;
            while k < 64 {
                let sym = codes[atab].read(&mut r).ok_or_else(|| CodecError::at(bx, by, "bad or truncated AC code"))?;
                if sym == EOB {
                    break;
                }
                let (zeros, size) = ((sym >> 4) as usize, (sym & 15) as u32);
                k += if sym == ZRL { 16 } else { zeros };
                if k > 63 {
                    return Err(CodecError::at(bx, by, "AC run passes the end of the block"));
                }
                if sym == ZRL {
                    continue;
                }
                if size == 0 {
                    return Err(CodecError::at(bx, by, format!("invalid AC symbol {sym:#04x}")));
                }
                let bits = r.bits(size).ok_or_else(|| CodecError::at(bx, by, "truncated AC bits"))?;
                c[ch][k] = signed_from_bits(bits, size);
                k += 1;
            }
        }
        blocks.push(c);
    }
    let st = [steps(qscale, 0), steps(qscale, 1), steps(qscale, 2)];
    let (w, h) = (wb * BLOCK, hb * BLOCK);
    let pixels: Vec<[[u8; 3]; 64]> = blocks
        .par_iter()
        .map(|c| {
            let mut planes = [[0.0; 64]; 3];
            for ch in 0..3 {
                let mut f = [0.0; 64];
                for (k, &nat) in ZIGZAG.iter().enumerate() {
                    f[nat] = c[ch][k] as f64 * st[ch][nat];
                }
                planes[ch] = idct(&f);
            }
            std::array::from_fn(|i| to_rgb(planes[0][i], planes[1][i], planes[2][i]))
        })
        .collect();
    let mut img = RgbImage::new(w as usize, h as usize);
    for (n, px) in pixels.iter().enumerate() {
        let (bx, by) = (n as u32 % wb, n as u32 / wb);
        for (i, p) in px.iter().enumerate() {
            img.put_pixel((bx * BLOCK + i as u32 % 8) as usize, (by * BLOCK + i as u32 / 8) as usize, *p);
        }
    }
    Ok(img)
}
