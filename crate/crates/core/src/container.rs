//! Atlas packing, camera manifest and the `IVB1` transport stream.
//!
//! ```text
//! "IVB1" | u8 version=1 | u8 rate_point | u32 manifest_len | manifest JSON |
//! u16 atlas_count | atlas_count x (u32 payload_len | payload)
//! ```

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraParams, Convention, Intrinsics, Pose};
use crate::codec::RatePoint;
use crate::image::RgbImage;

pub const MAGIC: &[u8; 4] = b"IVB1";
pub const VERSION: u8 = 1;
pub const VIEWS_PER_ATLAS: usize = 4;
/// Fixed bytes before the manifest: magic, version, rate point, manifest length.
pub const PREAMBLE_LEN: usize = 4 + 1 + 1 + 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u8 },
    #[error("truncated {what} at offset {offset}: need {expected} bytes, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        expected: usize,
        available: usize,
    },
    #[error("length mismatch at offset {offset}: {what}")]
    LengthMismatch { offset: usize, what: String },
    #[error("manifest at offset {offset}: {reason}")]
    Manifest { offset: usize, reason: String },
    #[error("invalid layout: {0}")]
    Layout(String),
}

impl ContainerError {
    /// True for malformed input, false for caller configuration errors.
    pub fn is_parse(&self) -> bool {
        !matches!(self, ContainerError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub view_id: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Placement {
    fn overlaps(&self, o: &Placement) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasLayout {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub placements: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub layout: AtlasLayout,
    pub image: RgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub rate_point: RatePoint,
    pub cameras: Vec<CameraParams>,
    pub atlases: Vec<AtlasLayout>,
}

// Wire schema for the JSON manifest.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    id: u32,
    width: u32,
    height: u32,
    intrinsics: IntrinsicsJson,
    pose: PoseJson,
    convention: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestJson {
    version: u32,
    rate_point: RatePoint,
    cameras: Vec<CameraJson>,
    atlases: Vec<AtlasLayout>,
}

impl From<&CameraParams> for CameraJson {
    fn from(c: &CameraParams) -> Self {
        let k = &c.intrinsics;
        let p = &c.pose;
        CameraJson {
            id: c.id,
            width: k.width,
            height: k.height,
            intrinsics: IntrinsicsJson {
                fx: k.focal_x,
                fy: k.focal_y,
                cx: k.principal_x,
                cy: k.principal_y,
            },
            pose: PoseJson {
                yaw_deg: p.yaw_deg,
                pitch_deg: p.pitch_deg,
                roll_deg: p.roll_deg,
                x: p.position[0],
                y: p.position[1],
                z: p.position[2],
            },
            convention: p.convention.to_string(),
        }
    }
}

impl CameraJson {
    fn into_params(self) -> Result<CameraParams, String> {
        let convention: Convention = self.convention.parse().map_err(|e| format!("camera {}: {e}", self.id))?;
        let intrinsics = Intrinsics {
            focal_x: self.intrinsics.fx,
            focal_y: self.intrinsics.fy,
            principal_x: self.intrinsics.cx,
            principal_y: self.intrinsics.cy,
            width: self.width,
            height: self.height,
        };
        intrinsics.validate().map_err(|e| format!("camera {}: {e}", self.id))?;
        Ok(CameraParams {
            id: self.id,
            intrinsics,
            pose: Pose {
                yaw_deg: self.pose.yaw_deg,
                pitch_deg: self.pose.pitch_deg,
                roll_deg: self.pose.roll_deg,
                position: [self.pose.x, self.pose.y, self.pose.z],
                convention,
            },
        })
    }
}

impl Manifest {
    pub fn camera(&self, id: u32) -> Option<&CameraParams> {
        self.cameras.iter().find(|c| c.id == id)
    }

    /// Adds cameras whose ids are not yet listed, keeping the list sorted by id.
    pub fn include_cameras(&mut self, cams: &[CameraParams]) {
        for c in cams {
            if self.camera(c.id).is_none() {
                self.cameras.push(*c);
            }
        }
        self.cameras.sort_by_key(|c| c.id);
    }

    /// View ids carried by the atlases, in placement order.
    pub fn transmitted_ids(&self) -> Vec<u32> {
        self.atlases.iter().flat_map(|a| a.placements.iter().map(|p| p.view_id)).collect()
    }

    /// Checks ids, bounds, overlap and per-atlas view limits.
    pub fn validate(&self) -> Result<(), ContainerError> {
        let mut ids = HashSet::new();
        for c in &self.cameras {
            if !ids.insert(c.id) {
                return Err(ContainerError::Layout(format!("duplicate camera id {}", c.id)));
            }
        }
        let mut placed = HashSet::new();
        let mut atlas_ids = HashSet::new();
        for a in &self.atlases {
            if !atlas_ids.insert(a.id) {
                return Err(ContainerError::Layout(format!("duplicate atlas id {}", a.id)));
            }
            if a.placements.len() > VIEWS_PER_ATLAS {
                return Err(ContainerError::Layout(format!("atlas {} holds {} views", a.id, a.placements.len())));
            }
            for (i, p) in a.placements.iter().enumerate() {
                let cam = self
                    .camera(p.view_id)
                    .ok_or_else(|| ContainerError::Layout(format!("atlas {} places unknown view {}", a.id, p.view_id)))?;
                if p.w == 0 || p.h == 0 || p.x as u64 + p.w as u64 > a.width as u64 || p.y as u64 + p.h as u64 > a.height as u64 {
                    return Err(ContainerError::Layout(format!("placement of view {} out of atlas {} bounds", p.view_id, a.id)));
                }
                if (p.w, p.h) != (cam.intrinsics.width, cam.intrinsics.height) {
                    return Err(ContainerError::Layout(format!(
                        "placement of view {} is {}x{}, camera is {}x{}",
                        p.view_id, p.w, p.h, cam.intrinsics.width, cam.intrinsics.height
                    )));
                }
                if !placed.insert(p.view_id) {
                    return Err(ContainerError::Layout(format!("view {} placed twice", p.view_id)));
                }
                if a.placements[..i].iter().any(|q| q.overlaps(p)) {
                    return Err(ContainerError::Layout(format!("placements overlap in atlas {}", a.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let m = ManifestJson {
            version: self.version,
            rate_point: self.rate_point,
            cameras: self.cameras.iter().map(CameraJson::from).collect(),
            atlases: self.atlases.clone(),
        };
        serde_json::to_vec(&m).expect("manifest serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let m: ManifestJson = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let cameras = m.cameras.into_iter().map(CameraJson::into_params).collect::<Result<_, _>>()?;
        Ok(Manifest {
            version: m.version,
            rate_point: m.rate_point,
            cameras,
            atlases: m.atlases,
        })
    }
}

fn round_up8(v: u32) -> u32 {
    v.div_ceil(8) * 8
}

/// Tiles views into 2x2-grid atlases (dims rounded up to multiples of 8, zero-filled).
pub fn pack_atlases(views: &[(CameraParams, RgbImage)], atlas_count: usize) -> Result<(Vec<Atlas>, Manifest), ContainerError> {
    if views.is_empty() {
        return Err(ContainerError::Config("no views to pack".into()));
    }
    if views.len() > VIEWS_PER_ATLAS * atlas_count {
        return Err(ContainerError::Config(format!(
            "{} views exceed {} atlas(es) of {VIEWS_PER_ATLAS}",
            views.len(),
            atlas_count
        )));
    }
    let (w, h) = views[0].1.dims();
    for (cam, img) in views {
        if img.dims() != (w, h) {
            return Err(ContainerError::Config(format!("mixed resolutions {:?} vs {:?}", img.dims(), (w, h))));
        }
        if (cam.intrinsics.width as usize, cam.intrinsics.height as usize) != (w, h) {
            return Err(ContainerError::Config(format!("camera {} intrinsics disagree with its {w}x{h} view", cam.id)));
        }
    }
    let (w, h) = (w as u32, h as u32);
    let (aw, ah) = (round_up8(2 * w), round_up8(2 * h));
    let mut atlases = Vec::new();
    for (ai, chunk) in views.chunks(VIEWS_PER_ATLAS).enumerate() {
        let mut image = RgbImage::new(aw as usize, ah as usize);
        let mut placements = Vec::with_capacity(chunk.len());
        for (cell, (cam, img)) in chunk.iter().enumerate() {
            let (x, y) = ((cell as u32 % 2) * w, (cell as u32 / 2) * h);
            image.blit(img, x as usize, y as usize);
            placements.push(Placement { view_id: cam.id, x, y, w, h });
        }
        atlases.push(Atlas {
            layout: AtlasLayout {
                id: ai as u32,
                width: aw,
                height: ah,
                placements,
            },
            image,
        });
    }
    let manifest = Manifest {
        version: VERSION as u32,
        rate_point: RatePoint::Rp0,
        cameras: views.iter().map(|(c, _)| *c).collect(),
        atlases: atlases.iter().map(|a| a.layout.clone()).collect(),
    };
    manifest.validate().map_err(|e| ContainerError::Config(e.to_string()))?;
    Ok((atlases, manifest))
}

/// Extracts every placed view; the images must match the manifest's atlas layouts.
pub fn unpack_atlases(images: &[RgbImage], manifest: &Manifest) -> Result<Vec<(CameraParams, RgbImage)>, ContainerError> {
    manifest.validate()?;
    if images.len() != manifest.atlases.len() {
        return Err(ContainerError::Layout(format!("{} atlas images for {} layouts", images.len(), manifest.atlases.len())));
    }
    let mut out = Vec::new();
    for (img, layout) in images.iter().zip(&manifest.atlases) {
        if img.dims() != (layout.width as usize, layout.height as usize) {
            return Err(ContainerError::Layout(format!(
                "atlas {} image is {:?}, layout says {}x{}",
                layout.id,
                img.dims(),
                layout.width,
                layout.height
            )));
        }
        for p in &layout.placements {
            let cam = *manifest.camera(p.view_id).expect("validated");
            out.push((cam, img.crop(p.x as usize, p.y as usize, p.w as usize, p.h as usize)));
        }
    }
    Ok(out)
}

pub fn mux(manifest: &Manifest, payloads: &[Vec<u8>]) -> Result<Vec<u8>, ContainerError> {
    if payloads.is_empty() {
        return Err(ContainerError::Config("empty payload list".into()));
    }
    if payloads.len() != manifest.atlases.len() {
        return Err(ContainerError::Config(format!(
            "{} payloads for {} atlases",
            payloads.len(),
            manifest.atlases.len()
        )));
    }
    if payloads.len() > u16::MAX as usize {
        return Err(ContainerError::Config("too many atlases".into()));
    }
    manifest.validate().map_err(|e| ContainerError::Config(e.to_string()))?;
    let json = manifest.to_json();
    let mut out = Vec::with_capacity(stream_size(json.len(), payloads.iter().map(Vec::len)));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(manifest.rate_point.index());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(payloads.len() as u16).to_le_bytes());
    for p in payloads {
        let len = u32::try_from(p.len()).map_err(|_| ContainerError::Config("payload over 4 GiB".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Exact muxed size for a manifest of `manifest_len` bytes and the given payload sizes.
pub fn stream_size(manifest_len: usize, payload_lens: impl IntoIterator<Item = usize>) -> usize {
    PREAMBLE_LEN + manifest_len + 2 + payload_lens.into_iter().map(|l| 4 + l).sum::<usize>()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ContainerError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated {
                what,
                offset: self.pos,
                expected: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parsed stream; `manifest_json` keeps the exact transmitted bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Demuxed {
    pub manifest: Manifest,
    pub manifest_json: Vec<u8>,
    pub payloads: Vec<Vec<u8>>,
}

pub fn demux(bytes: &[u8]) -> Result<Demuxed, ContainerError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic").map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = c.take(1, "version")?[0];
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion { offset: 4, version });
    }
    let rp_byte = c.take(1, "rate point")?[0];
    let rate_point = RatePoint::from_index(rp_byte).ok_or(ContainerError::LengthMismatch {
        offset: 5,
        what: format!("rate point {rp_byte} outside 0..=4"),
    })?;
    let mlen = c.u32("manifest length")? as usize;
    let moff = c.pos;
    let json = c.take(mlen, "manifest")?;
    let manifest = Manifest::from_json(json).map_err(|reason| ContainerError::Manifest { offset: moff, reason })?;
    if manifest.rate_point != rate_point {
        return Err(ContainerError::Manifest {
            offset: moff,
            reason: format!("manifest rate point {} disagrees with header {rate_point}", manifest.rate_point),
        });
    }
    if manifest.version != VERSION as u32 {
        return Err(ContainerError::Manifest {
            offset: moff,
            reason: format!("manifest version {}", manifest.version),
        });
    }
    manifest.validate().map_err(|e| ContainerError::Manifest {
        offset: moff,
        reason: e.to_string(),
    })?;
    let count_off = c.pos;
    let b = c.take(2, "atlas count")?;
    let count = u16::from_le_bytes([b[0], b[1]]) as usize;
    if count != manifest.atlases.len() || count == 0 {
        return Err(ContainerError::LengthMismatch {
            offset: count_off,
            what: format!("header declares {count} atlases, manifest lists {}", manifest.atlases.len()),
        });
    }
    let mut payloads = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32("payload length")? as usize;
        payloads.push(c.take(len, "payload")?.to_vec());
    }
    if c.pos != bytes.len() {
        return Err(ContainerError::LengthMismatch {
            offset: c.pos,
            what: format!("{} trailing bytes after the last payload", bytes.len() - c.pos),
        });
    }
    Ok(Demuxed {
        manifest,
        manifest_json: json.to_vec(),
        payloads,
    })
}

/// Ids of the cameras the manifest lists, sorted.
pub fn camera_ids(manifest: &Manifest) -> BTreeSet<u32> {
    manifest.cameras.iter().map(|c| c.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{Rig, SceneSpec};

    fn views(n: usize, w: usize, h: usize) -> Vec<(CameraParams, RgbImage)> {
        let spec = SceneSpec {
            rig: Rig::Linear9,
            resolution: (w as u32, h as u32),
            ..Default::default()
        };
        spec.cameras()
            .into_iter()
            .take(n)
            .map(|c| {
                let mut img = RgbImage::new(w, h);
                for (i, v) in img.as_raw_mut().iter_mut().enumerate() {
                    *v = (i * 7 + c.id as usize * 31) as u8 | 1;
                }
                (c, img)
            })
            .collect()
    }

    #[test]
    fn four_views_one_full_hd_atlas() {
        let v = views(4, 960, 540);
        let (atlases, m) = pack_atlases(&v, 1).unwrap();
        assert_eq!(atlases.len(), 1);
        assert_eq!(atlases[0].image.dims(), (1920, 1080));
        let origins: Vec<(u32, u32)> = m.atlases[0].placements.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(origins, vec![(0, 0), (960, 0), (0, 540), (960, 540)]);
    }

    #[test]
    fn three_views_leave_zero_cell() {
        let v = views(3, 64, 36);
        let (atlases, m) = pack_atlases(&v, 1).unwrap();
        assert_eq!(atlases[0].image.dims(), (128, 72));
        assert!(atlases[0].image.crop(64, 36, 64, 36).as_raw().iter().all(|&b| b == 0));
        let back = unpack_atlases(&[atlases[0].image.clone()], &m).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back, v);
    }

    #[test]
    fn eight_views_two_atlases_and_padding() {
        let v = views(8, 48, 30);
        let (atlases, m) = pack_atlases(&v, 2).unwrap();
        assert_eq!(atlases.len(), 2);
        // 60 rows round up to 64.
        assert_eq!(atlases[1].image.dims(), (96, 64));
        assert_eq!(m.atlases[1].placements.len(), 4);
        assert!(pack_atlases(&v, 1).is_err());
        let mut mixed = views(2, 48, 30);
        mixed.push(views(3, 64, 30).pop().unwrap());
        assert!(matches!(pack_atlases(&mixed, 1), Err(ContainerError::Config(_))));
    }

    #[test]
    fn unknown_view_and_out_of_bounds_are_parse_errors() {
        let v = views(2, 32, 16);
        let (atlases, m) = pack_atlases(&v, 1).unwrap();
        let imgs = vec![atlases[0].image.clone()];
        let mut bad = m.clone();
        bad.atlases[0].placements[1].view_id = 77;
        let e = unpack_atlases(&imgs, &bad).unwrap_err();
        assert!(e.is_parse(), "{e}");
        let mut oob = m.clone();
        oob.atlases[0].placements[1].x = 40;
        assert!(unpack_atlases(&imgs, &oob).unwrap_err().is_parse());
        let mut overlap = m;
        overlap.atlases[0].placements[1].x = 16;
        assert!(unpack_atlases(&imgs, &overlap).is_err());
    }

    #[test]
    fn mux_layout_and_roundtrip() {
        let v = views(8, 32, 16);
        let (_, mut m) = pack_atlases(&v, 2).unwrap();
        m.rate_point = RatePoint::Rp3;
        let payloads = vec![vec![1u8, 2, 3], vec![9u8; 300]];
        let bytes = mux(&m, &payloads).unwrap();
        let json = m.to_json();
        assert_eq!(&bytes[..4], b"IVB1");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 3);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize, json.len());
        assert_eq!(bytes.len(), stream_size(json.len(), [3, 300]));
        let d = demux(&bytes).unwrap();
        assert_eq!(d.manifest, m);
        assert_eq!(d.manifest_json, json);
        assert_eq!(d.manifest.to_json(), json);
        assert_eq!(d.payloads, payloads);
    }

    #[test]
    fn mux_rejects_bad_payload_lists() {
        let (_, m) = pack_atlases(&views(2, 16, 8), 1).unwrap();
        assert!(matches!(mux(&m, &[]), Err(ContainerError::Config(_))));
        assert!(matches!(mux(&m, &[vec![], vec![]]), Err(ContainerError::Config(_))));
    }

    #[test]
    fn demux_errors_carry_offsets() {
        let (_, m) = pack_atlases(&views(2, 16, 8), 1).unwrap();
        let bytes = mux(&m, &[vec![5u8; 40]]).unwrap();
        assert_eq!(demux(b"IVB2xxxx"), Err(ContainerError::BadMagic));
        let cut = &bytes[..bytes.len() - 10];
        match demux(cut) {
            Err(ContainerError::Truncated {
                what,
                expected,
                available,
                offset,
            }) => {
                assert_eq!(what, "payload");
                assert_eq!((expected, available), (40, 30));
                assert_eq!(offset, bytes.len() - 40);
            }
            other => panic!("{other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(demux(&extra), Err(ContainerError::LengthMismatch { .. })));
        let mut wrong_count = bytes.clone();
        let count_off = PREAMBLE_LEN + m.to_json().len();
        wrong_count[count_off] = 2;
        assert!(matches!(demux(&wrong_count), Err(ContainerError::LengthMismatch { offset, .. }) if offset == count_off));
        let mut wrong_rp = bytes;
        wrong_rp[5] = 4;
        assert!(matches!(demux(&wrong_rp), Err(ContainerError::Manifest { offset: 10, .. })));
    }

    #[test]
    fn include_cameras_keeps_placements() {
        let all = views(9, 16, 8);
        let (_, mut m) = pack_atlases(&all[..4], 1).unwrap();
        m.include_cameras(&all.iter().map(|(c, _)| *c).collect::<Vec<_>>());
        assert_eq!(m.cameras.len(), 9);
        assert_eq!(m.transmitted_ids(), vec![0, 1, 2, 3]);
        m.validate().unwrap();
        let back = Manifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
