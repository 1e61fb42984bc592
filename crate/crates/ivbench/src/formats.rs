//! Binary PPM/PGM/PFM images and the on-disk dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use ivbench_core::camera::CameraParams;
use ivbench_core::image::RgbImage;
use ivbench_core::rasterizer::gsc1;
use ivbench_core::scenegen::{Dataset, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Splits a Netpbm header into `count` whitespace-separated tokens, skipping `#` comments.
/// Returns the tokens and the offset of the first raster byte.
fn netpbm_header(bytes: &[u8], count: usize) -> std::result::Result<(Vec<String>, usize), String> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format!("header ends after {} of {count} fields", tokens.len()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() {
        return Err("missing whitespace after header".into());
    }
    Ok((tokens, pos + 1))
}

fn dims(tokens: &[String]) -> std::result::Result<(usize, usize), String> {
    let w: usize = tokens[1].parse().map_err(|_| format!("bad width {:?}", tokens[1]))?;
    let h: usize = tokens[2].parse().map_err(|_| format!("bad height {:?}", tokens[2]))?;
    if w == 0 || h == 0 {
        return Err(format!("empty image {w}x{h}"));
    }
    Ok((w, h))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let (t, start) = netpbm_header(bytes, 4)?;
    if t[0] != "P6" {
        return Err(format!("magic {:?}, expected P6", t[0]));
    }
    let (w, h) = dims(&t)?;
    if t[3] != "255" {
        return Err(format!("maxval {}, only 255 is supported", t[3]));
    }
    let raster = &bytes[start..];
    if raster.len() != w * h * 3 {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), w * h * 3));
    }
    Ok(RgbImage::from_raw(w, h, raster.to_vec()).expect("length checked"))
}

pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let (t, start) = netpbm_header(bytes, 4)?;
    if t[0] != "P5" {
        return Err(format!("magic {:?}, expected P5", t[0]));
    }
    let (w, h) = dims(&t)?;
    if t[3] != "255" {
        return Err(format!("maxval {}, only 255 is supported", t[3]));
    }
    let raster = &bytes[start..];
    if raster.len() != w * h {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), w * h));
    }
    Ok((w, h, raster.to_vec()))
}

/// Single-channel little-endian PFM. Rows are stored bottom to top.
pub fn encode_pfm(width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in data.chunks(width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f32>), String> {
    let (t, start) = netpbm_header(bytes, 4)?;
    if t[0] != "Pf" {
        return Err(format!("magic {:?}, expected Pf", t[0]));
    }
    let (w, h) = dims(&t)?;
    let scale: f64 = t[3].parse().map_err(|_| format!("bad scale {:?}", t[3]))?;
    if !(scale < 0.0) {
        return Err("only little-endian PFM (negative scale) is supported".into());
    }
    let raster = &bytes[start..];
    if raster.len() != w * h * 4 {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), w * h * 4));
    }
    let mut data = vec![0f32; w * h];
    for (r, row) in raster.chunks(w * 4).enumerate() {
        let y = h - 1 - r;
        for (x, b) in row.chunks(4).enumerate() {
            data[y * w + x] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    Ok((w, h, data))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read_file(path)?).map_err(|m| HarnessError::parse(path.display().to_string(), m))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_file(path, &encode_ppm(img))
}

pub fn view_file(prefix: &str, id: u32) -> String {
    format!("{prefix}_{id:04}.ppm")
}

/// Writes `view_####.ppm` for each `(id, image)`.
pub fn write_views<'a>(dir: &Path, views: impl IntoIterator<Item = (u32, &'a RgbImage)>) -> Result<()> {
    for (id, img) in views {
        write_ppm(&dir.join(view_file("view", id)), img)?;
    }
    Ok(())
}

/// Reads every `<prefix>_####.ppm` in `dir`, sorted by id.
pub fn read_views(dir: &Path, prefix: &str) -> Result<Vec<(u32, RgbImage)>> {
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut found: Vec<(u32, PathBuf)> = Vec::new();
    for e in entries {
        let path = e.map_err(|e| HarnessError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(id) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('_'))
            .and_then(|r| r.strip_suffix(".ppm"))
            .filter(|d| d.len() == 4 && d.bytes().all(|b| b.is_ascii_digit()))
        else {
            continue;
        };
        found.push((id.parse().expect("four digits"), path));
    }
    found.sort();
    found.into_iter().map(|(id, p)| Ok((id, read_ppm(&p)?))).collect()
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub spec: SceneSpec,
    pub cameras: Vec<CameraParams>,
    /// True when clean references are stored as `truth_####.ppm` next to the noisy `view_####.ppm`.
    pub separate_truth: bool,
}

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const DATASET_SCENE: &str = "scene.gsc1";

/// Writes `manifest.json`, `view_####.ppm`, `scene.gsc1` and, when the sources differ from the
/// clean renders, `truth_####.ppm`.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    let separate_truth = d.views.iter().zip(&d.heldout).any(|(v, (_, t))| v != t);
    let manifest = DatasetManifest {
        spec: d.spec.clone(),
        cameras: d.cameras.clone(),
        separate_truth,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(DATASET_MANIFEST), &json)?;
    write_views(dir, d.cameras.iter().map(|c| c.id).zip(&d.views))?;
    if separate_truth {
        for (cam, img) in &d.heldout {
            write_ppm(&dir.join(view_file("truth", cam.id)), img)?;
        }
    }
    write_file(&dir.join(DATASET_SCENE), &gsc1::encode(&d.scene))
}

/// A dataset read back from disk. The scene stays in GSC1 form (f32-rounded).
#[derive(Debug, Clone)]
pub struct StoredDataset {
    pub manifest: DatasetManifest,
    pub views: Vec<RgbImage>,
    pub truth: Vec<RgbImage>,
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let path = dir.join(DATASET_MANIFEST);
    let manifest: DatasetManifest =
        serde_json::from_slice(&read_file(&path)?).map_err(|e| HarnessError::parse(path.display().to_string(), e))?;
    let load = |prefix: &str| -> Result<Vec<RgbImage>> {
        manifest
            .cameras
            .iter()
            .map(|c| read_ppm(&dir.join(view_file(prefix, c.id))))
            .collect()
    };
    let views = load("view")?;
    let truth = if manifest.separate_truth { load("truth")? } else { views.clone() };
    for (c, v) in manifest.cameras.iter().zip(&views) {
        if (c.intrinsics.width as usize, c.intrinsics.height as usize) != v.dims() {
            return Err(HarnessError::parse(
                dir.display().to_string(),
                format!("view {} is {:?}, camera says {}x{}", c.id, v.dims(), c.intrinsics.width, c.intrinsics.height),
            ));
        }
    }
    Ok(StoredDataset { manifest, views, truth })
}
