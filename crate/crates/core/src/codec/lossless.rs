//! Reversible path: G, R-G, B-G planes, left (or up, in column 0) prediction,
//! zigzag-mapped residual bytes, one prefix code per plane.

use super::entropy::{BitReader, BitWriter, PrefixCode};
use super::{CodecError, BLOCK};
use crate::image::RgbImage;

fn planes(img: &RgbImage) -> [Vec<u8>; 3] {
    let n = (img.width() * img.height()) as usize;
    let mut p = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in img.as_raw().chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        p[0].push(g);
        p[1].push(r.wrapping_sub(g));
        p[2].push(b.wrapping_sub(g));
    }
    p
}

fn predict(plane: &[u8], w: usize, i: usize) -> u8 {
    match (i % w, i / w) {
        (0, 0) => 0,
        (0, _) => plane[i - w],
        _ => plane[i - 1],
    }
}

fn zigzag(d: u8) -> u8 {
    let s = d as i8 as i16;
    (if s >= 0 { 2 * s } else { -2 * s - 1 }) as u8
}

fn unzigzag(z: u8) -> u8 {
    let v = if z & 1 == 0 { (z >> 1) as i16 } else { -((z >> 1) as i16) - 1 };
    v as i8 as u8
}

pub(super) fn encode(img: &RgbImage) -> (Vec<u8>, Vec<u8>) {
    let w = img.width();
    let symbols: Vec<Vec<u8>> = planes(img)
        .iter()
        .map(|p| (0..p.len()).map(|i| zigzag(p[i].wrapping_sub(predict(p, w, i)))).collect())
        .collect();
    let mut tables = Vec::new();
    let mut writer = BitWriter::default();
    let codes: Vec<PrefixCode> = symbols
        .iter()
        .map(|s| {
            let mut freq = [0u64; 256];
            for &v in s {
                freq[v as usize] += 1;
            }
            PrefixCode::from_frequencies(&freq)
        })
        .collect();
    for c in &codes {
        c.serialize(&mut tables);
    }
    for (code, syms) in codes.iter().zip(&symbols) {
        for &s in syms {
            code.write(&mut writer, s);
        }
    }
    (tables, writer.finish())
}

pub(super) fn decode(tables: &[u8], data: &[u8], wb: u32, hb: u32) -> Result<RgbImage, CodecError> {
    let mut pos = 0;
    let mut codes = Vec::with_capacity(3);
    for t in 0..3 {
        codes.push(PrefixCode::deserialize(tables, &mut pos).map_err(|e| CodecError::Header(format!("code table {t}: {e:?}")))?);
    }
    if pos != tables.len() {
        return Err(CodecError::Header(format!("{} trailing bytes in code tables", tables.len() - pos)));
    }
    let (w, h) = ((wb * BLOCK) as usize, (hb * BLOCK) as usize);
    let mut r = BitReader::new(data);
    let mut out = [vec![0u8; w * h], vec![0u8; w * h], vec![0u8; w * h]];
    for (code, plane) in codes.iter().zip(out.iter_mut()) {
        for i in 0..w * h {
            let z = code.read(&mut r).ok_or_else(|| {
                CodecError::at((i % w) as u32 / BLOCK, (i / w) as u32 / BLOCK, "bad or truncated residual code")
            })?;
            plane[i] = unzigzag(z).wrapping_add(predict(plane, w, i));
        }
    }
    let mut raw = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let g = out[0][i];
        raw.extend_from_slice(&[out[1][i].wrapping_add(g), g, out[2][i].wrapping_add(g)]);
    }
    Ok(RgbImage::from_raw(w, h, raw).expect("dims match"))
}
