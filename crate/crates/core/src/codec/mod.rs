//! Intra atlas codec: a reversible predictive path and a block-DCT path
//! with a five-step rate ladder.
//!
//! Payload layout (little-endian):
//!
//! ```text
//! u8 mode (0 lossless, 1 DCT) | u16 width_blocks | u16 height_blocks | u8 qscale |
//! u32 table_len | code tables | u32 data_len | coded data
//! ```

mod dct;
pub mod entropy;
mod lossless;
mod spectral;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::image::RgbImage;

pub use dct::{base_matrix, dc_step, BASE_CHROMA, BASE_LUMA};
pub use spectral::{high_frequency_energy, spectral_report};

pub const BLOCK: u32 = 8;
const HEADER_LEN: usize = 1 + 2 + 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RatePoint {
    Rp0,
    Rp1,
    Rp2,
    Rp3,
    Rp4,
}

impl RatePoint {
    pub const ALL: [RatePoint; 5] = [RatePoint::Rp0, RatePoint::Rp1, RatePoint::Rp2, RatePoint::Rp3, RatePoint::Rp4];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Quantizer scale; `None` for the lossless point.
    pub fn qscale(self) -> Option<u8> {
        match self {
            RatePoint::Rp0 => None,
            RatePoint::Rp1 => Some(8),
            RatePoint::Rp2 => Some(16),
            RatePoint::Rp3 => Some(32),
            RatePoint::Rp4 => Some(64),
        }
    }
}

impl fmt::Display for RatePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RP{}", self.index())
    }
}

impl FromStr for RatePoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = t.strip_prefix("RP").or_else(|| t.strip_prefix("rp")).unwrap_or(t);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Self::from_index)
            .ok_or_else(|| format!("unknown rate point {s:?} (expected RP0..RP4)"))
    }
}

impl Serialize for RatePoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.index())
    }
}

impl<'de> Deserialize<'de> for RatePoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Index(u8),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Index(i) => Self::from_index(i).ok_or_else(|| serde::de::Error::custom(format!("rate point {i} out of range 0..=4"))),
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("config error: {0}")]
    Config(String),
    #[error("payload header: {0}")]
    Header(String),
    #[error("corrupt payload at block ({block_x}, {block_y}): {reason}")]
    Corrupt { block_x: u32, block_y: u32, reason: String },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

impl CodecError {
    pub(crate) fn at(block_x: u32, block_y: u32, reason: impl Into<String>) -> Self {
        CodecError::Corrupt {
            block_x,
            block_y,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedAtlas {
    pub payload: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub rate_point: RatePoint,
}

impl CodedAtlas {
    pub fn size_bytes(&self) -> usize {
        self.payload.len()
    }

    /// Recovers dims and rate point from a bare payload.
    pub fn from_payload(payload: Vec<u8>) -> Result<Self, CodecError> {
        let h = Header::parse(&payload)?;
        Ok(Self {
            width: h.wb as u32 * BLOCK,
            height: h.hb as u32 * BLOCK,
            rate_point: h.rate_point()?,
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Header {
    mode: u8,
    wb: u16,
    hb: u16,
    qscale: u8,
}

impl Header {
    fn parse(p: &[u8]) -> Result<Self, CodecError> {
        if p.len() < HEADER_LEN {
            return Err(CodecError::Header(format!("need {HEADER_LEN} bytes, {} available", p.len())));
        }
        let h = Header {
            mode: p[0],
            wb: u16::from_le_bytes([p[1], p[2]]),
            hb: u16::from_le_bytes([p[3], p[4]]),
            qscale: p[5],
        };
        if h.wb == 0 || h.hb == 0 {
            return Err(CodecError::Header("zero block dimensions".into()));
        }
        h.rate_point()?;
        Ok(h)
    }

    fn rate_point(&self) -> Result<RatePoint, CodecError> {
        match (self.mode, self.qscale) {
            (0, 0) => Ok(RatePoint::Rp0),
            (1, q) => RatePoint::ALL[1..]
                .iter()
                .copied()
                .find(|rp| rp.qscale() == Some(q))
                .ok_or_else(|| CodecError::Header(format!("qscale {q} not on the rate ladder"))),
            (m, q) => Err(CodecError::Header(format!("mode {m} with qscale {q}"))),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.push(self.mode);
        out.extend_from_slice(&self.wb.to_le_bytes());
        out.extend_from_slice(&self.hb.to_le_bytes());
        out.push(self.qscale);
    }
}

/// Splits `u32 table_len | tables | u32 data_len | data` after the fixed header.
fn sections(p: &[u8]) -> Result<(&[u8], &[u8]), CodecError> {
    let mut pos = HEADER_LEN;
    let mut section = |what: &str| -> Result<&[u8], CodecError> {
        let len = p
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| CodecError::Header(format!("missing {what} length at offset {pos}")))?;
        pos += 4;
        let s = p.get(pos..pos.saturating_add(len)).ok_or_else(|| {
            CodecError::Header(format!("{what} at offset {pos}: need {len} bytes, {} available", p.len() - pos))
        })?;
        pos += len;
        Ok(s)
    };
    let tables = section("code table")?;
    let data = section("coded data")?;
    if pos != p.len() {
        return Err(CodecError::Header(format!("{} trailing bytes", p.len() - pos)));
    }
    Ok((tables, data))
}

fn assemble(header: Header, tables: &[u8], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 + tables.len() + data.len());
    header.write(&mut out);
    out.extend_from_slice(&(tables.len() as u32).to_le_bytes());
    out.extend_from_slice(tables);
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
    out
}

pub fn encode(image: &RgbImage, rate_point: RatePoint) -> Result<CodedAtlas, CodecError> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    if w == 0 || h == 0 || w % BLOCK != 0 || h % BLOCK != 0 {
        return Err(CodecError::Config(format!("{w}x{h} is not a positive multiple of {BLOCK}")));
    }
    let (wb, hb) = (w / BLOCK, h / BLOCK);
    if wb > u16::MAX as u32 || hb > u16::MAX as u32 {
        return Err(CodecError::Config(format!("{w}x{h} exceeds the block grid limit")));
    }
    let header = Header {
        mode: u8::from(rate_point != RatePoint::Rp0),
        wb: wb as u16,
        hb: hb as u16,
        qscale: rate_point.qscale().unwrap_or(0),
    };
    let (tables, data) = match rate_point.qscale() {
        None => lossless::encode(image),
        Some(q) => dct::encode(image, q),
    };
    Ok(CodedAtlas {
        payload: assemble(header, &tables, &data),
        width: w,
        height: h,
        rate_point,
    })
}

pub fn decode(coded: &CodedAtlas) -> Result<RgbImage, CodecError> {
    decode_payload(&coded.payload)
}

pub fn decode_payload(payload: &[u8]) -> Result<RgbImage, CodecError> {
    let h = Header::parse(payload)?;
    let (tables, data) = sections(payload)?;
    let (wb, hb) = (h.wb as u32, h.hb as u32);
    match h.mode {
        0 => lossless::decode(tables, data, wb, hb),
        _ => dct::decode(tables, data, wb, hb, h.qscale),
    }
}
