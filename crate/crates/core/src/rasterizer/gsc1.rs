//! `GSC1` little-endian scene file.
//!
//! ```text
//! "GSC1" | u32 count | u8 sh_degree |
//! count x ( 3 f32 mu | 4 f32 quat (w, x, y, z) | 3 f32 log_scale | f32 opacity | (L+1)^2 x 3 f32 sh )
//! ```

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use super::{sh, Gaussian, GaussianScene, SceneError};

pub const MAGIC: &[u8; 4] = b"GSC1";

#[derive(Debug, Error, PartialEq)]
pub enum Gsc1Error {
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("truncated at offset {offset}: need {expected} bytes, {available} available")]
    Truncated {
        offset: usize,
        expected: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after the last splat")]
    TrailingBytes(usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

pub fn encode(scene: &GaussianScene) -> Vec<u8> {
    let per = 4 * (11 + 3 * sh::coeff_count(scene.sh_degree()));
    let mut out = Vec::with_capacity(9 + per * scene.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(scene.len() as u32).to_le_bytes());
    out.push(scene.sh_degree());
    let put = |v: f64, out: &mut Vec<u8>| out.extend_from_slice(&(v as f32).to_le_bytes());
    for g in scene.gaussians() {
        for v in g.mu.iter() {
            put(*v, &mut out);
        }
        let q = g.rot.as_ref();
        for v in [q.w, q.i, q.j, q.k] {
            put(v, &mut out);
        }
        for v in g.log_scale.iter() {
            put(*v, &mut out);
        }
        put(g.opacity, &mut out);
        for c in &g.sh {
            for v in c {
                put(*v, &mut out);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], Gsc1Error> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(Gsc1Error::Truncated {
                offset: self.pos,
                expected: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32(&mut self) -> Result<f64, Gsc1Error> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
    }
}

/// Parses a scene. Quaternions are renormalized in f64 after widening.
pub fn decode(bytes: &[u8]) -> Result<GaussianScene, Gsc1Error> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Gsc1Error::BadMagic)? != MAGIC {
        return Err(Gsc1Error::BadMagic);
    }
    let c = r.take(4)?;
    let count = u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize;
    let degree = r.take(1)?[0];
    if degree > 2 {
        return Err(SceneError::InvalidArgument(format!("SH degree {degree}")).into());
    }
    let ncoef = sh::coeff_count(degree);
    let per = 4 * (11 + 3 * ncoef);
    let remaining = bytes.len() - r.pos;
    if remaining < count.saturating_mul(per) {
        return Err(Gsc1Error::Truncated {
            offset: r.pos,
            expected: count.saturating_mul(per),
            available: remaining,
        });
    }
    let mut gs = Vec::with_capacity(count);
    for _ in 0..count {
        let mu = Vector3::new(r.f32()?, r.f32()?, r.f32()?);
        let (w, x, y, z) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
        let log_scale = Vector3::new(r.f32()?, r.f32()?, r.f32()?);
        let opacity = r.f32()?;
        let mut coeffs = Vec::with_capacity(ncoef);
        for _ in 0..ncoef {
            coeffs.push([r.f32()?, r.f32()?, r.f32()?]);
        }
        gs.push(Gaussian {
            mu,
            rot: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            log_scale,
            opacity,
            sh: coeffs,
        });
    }
    if r.pos != bytes.len() {
        return Err(Gsc1Error::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(GaussianScene::new(gs, degree)?)
}
