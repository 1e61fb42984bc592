//! End-to-end experiment runner: scene -> container -> codec -> pipeline -> metrics.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ivbench_core::camera::CameraParams;
use ivbench_core::codec::{self, spectral_report, RatePoint};
use ivbench_core::container::{self, Manifest};
use ivbench_core::dsde::{self, DepthMap};
use ivbench_core::dsgs::{self, floater_census, RefineTrace};
use ivbench_core::image::RgbImage;
use ivbench_core::metrics::{evaluate, interview_delta};
use ivbench_core::rasterizer::{render, GaussianScene, RasterConfig};
use ivbench_core::scenegen::{generate, split_transmitted, Dataset, SceneKind};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Pipeline};
use crate::error::{HarnessError, Result};
use crate::records::RdRecord;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A muxed bitstream plus the atlas images that went into the codec.
#[derive(Debug, Clone)]
pub struct EncodedStream {
    pub atlas_count: usize,
    pub rate_point: RatePoint,
    pub bytes: Vec<u8>,
    pub atlases: Vec<RgbImage>,
}

/// Transmits the spread subset of `views` for `atlas_count` atlases. The manifest lists every
/// camera so the decoder can synthesize at all original positions.
pub fn encode_stream(cameras: &[CameraParams], views: &[RgbImage], atlas_count: usize, rate_point: RatePoint) -> Result<EncodedStream> {
    if cameras.len() != views.len() {
        return Err(HarnessError::Config(format!("{} cameras for {} views", cameras.len(), views.len())));
    }
    let (tx, _) = split_transmitted(cameras.len(), atlas_count)?;
    let sent: Vec<(CameraParams, RgbImage)> = tx.iter().map(|&i| (cameras[i], views[i].clone())).collect();
    let (atlases, mut manifest) = container::pack_atlases(&sent, atlas_count)?;
    manifest.include_cameras(cameras);
    manifest.rate_point = rate_point;
    let payloads = atlases
        .par_iter()
        .map(|a| codec::encode(&a.image, rate_point).map(|c| c.payload))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let bytes = container::mux(&manifest, &payloads)?;
    Ok(EncodedStream {
        atlas_count,
        rate_point,
        bytes,
        atlases: atlases.into_iter().map(|a| a.image).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct DecodedStream {
    pub manifest: Manifest,
    pub atlases: Vec<RgbImage>,
    /// Transmitted views in placement order.
    pub views: Vec<(CameraParams, RgbImage)>,
}

pub fn decode_stream(bytes: &[u8]) -> Result<DecodedStream> {
    let d = container::demux(bytes)?;
    let atlases = d
        .payloads
        .par_iter()
        .map(|p| codec::decode_payload(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let views = container::unpack_atlases(&atlases, &d.manifest)?;
    Ok(DecodedStream {
        manifest: d.manifest,
        atlases,
        views,
    })
}

/// Decoder-side output of one pipeline.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub images: Vec<RgbImage>,
    pub depths: Option<Vec<DepthMap>>,
    pub scene: Option<GaussianScene>,
    pub trace: Option<RefineTrace>,
}

/// Runs `pipeline` on decoded views and renders every target camera.
/// A DSGS trace that is not non-increasing is an assertion failure.
pub fn synthesize(pipeline: Pipeline, views: &[(CameraParams, RgbImage)], targets: &[CameraParams], cfg: &ExperimentConfig) -> Result<Synthesis> {
    match pipeline {
        Pipeline::Dsde => {
            let depths = dsde::estimate_all(views, &cfg.dsde_config())?;
            let with_depth: Vec<_> = views.iter().cloned().zip(depths.iter().cloned()).map(|((c, i), d)| (c, i, d)).collect();
            let images = targets
                .iter()
                .map(|t| dsde::dibr_synthesize(&with_depth, t))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Synthesis {
                images,
                depths: Some(depths),
                scene: None,
                trace: None,
            })
        }
        Pipeline::Dsgs => {
            let pc = cfg.predictor_config();
            let (scene, trace) = dsgs::predict(views, &pc)?;
            if !trace.is_non_increasing() {
                return Err(HarnessError::Assertion("DSGS refinement trace increased".into()));
            }
            let dims: Vec<_> = views.iter().map(|(_, v)| v.dims()).collect();
            if scene.len() > pc.splat_bound(&dims) {
                return Err(HarnessError::Assertion(format!("{} splats exceed the subsampling bound", scene.len())));
            }
            let rc = RasterConfig::default();
            let images = targets
                .iter()
                .map(|t| render(&scene, t, &rc).map(|o| o.to_rgb8()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(Synthesis {
                images,
                depths: None,
                scene: Some(scene),
                trace: Some(trace),
            })
        }
    }
}

/// A generated dataset bound to its config; shared by every point of a sweep.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
}

/// One executed point: the record, the digest of the consumed stream and the pipeline output.
#[derive(Debug, Clone)]
pub struct PointRun {
    pub record: RdRecord,
    pub stream_sha256: String,
    pub synthesis: Synthesis,
}

fn elapsed_ms(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = generate(&config.scene_spec())?;
        Ok(Self { config, dataset })
    }

    pub fn encode(&self, atlas_count: usize, rate_point: RatePoint) -> Result<EncodedStream> {
        encode_stream(&self.dataset.cameras, &self.dataset.views, atlas_count, rate_point)
    }

    /// Decodes `stream`, synthesizes at every camera in its manifest and scores against the
    /// pristine references. `size_bytes` is the length of `stream`.
    pub fn run_stream(&self, pipeline: Pipeline, stream: &[u8]) -> Result<PointRun> {
        let t = Instant::now();
        let decoded = decode_stream(stream)?;
        let t_decode = elapsed_ms(t);
        let targets = decoded.manifest.cameras.clone();
        let t = Instant::now();
        let synthesis = synthesize(pipeline, &decoded.views, &targets, &self.config)?;
        let t_synth = elapsed_ms(t);
        let refs: Vec<RgbImage> = targets
            .iter()
            .map(|c| {
                self.dataset
                    .heldout
                    .iter()
                    .find(|(h, _)| h.id == c.id)
                    .map(|(_, img)| img.clone())
                    .ok_or_else(|| HarnessError::Config(format!("no reference for camera {}", c.id)))
            })
            .collect::<Result<_>>()?;
        let ids: Vec<u32> = targets.iter().map(|c| c.id).collect();
        let quality = evaluate(&ids, &synthesis.images, &refs)?;
        let (delta_psnr, delta_ssim) = interview_delta(&quality)?;
        let timing = self.config.timing;
        let record = RdRecord {
            pipeline,
            atlas_count: decoded.manifest.atlases.len().max(1),
            rate_point: decoded.manifest.rate_point,
            size_bytes: stream.len() as u64,
            mean_psnr: quality.mean_psnr(),
            mean_ssim: quality.mean_ssim(),
            quality,
            delta_psnr,
            delta_ssim,
            t_decode_ms: timing.then_some(t_decode),
            t_synth_ms: timing.then_some(t_synth),
        };
        Ok(PointRun {
            record,
            stream_sha256: sha256_hex(stream),
            synthesis,
        })
    }

    pub fn run_point(&self, pipeline: Pipeline, atlas_count: usize, rate_point: RatePoint) -> Result<PointRun> {
        let stream = self.encode(atlas_count, rate_point)?;
        let mut run = self.run_stream(pipeline, &stream.bytes)?;
        run.record.atlas_count = atlas_count;
        Ok(run)
    }
}

pub fn run_point(cfg: &ExperimentConfig, pipeline: Pipeline, atlas_count: usize, rate_point: RatePoint) -> Result<RdRecord> {
    Ok(Experiment::new(cfg.clone())?.run_point(pipeline, atlas_count, rate_point)?.record)
}

#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub pipeline: Pipeline,
    pub atlas_count: usize,
    pub rate_point: RatePoint,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    /// Rows in `atlas_count x rate_point x pipeline` order, as configured.
    pub records: Vec<RdRecord>,
    /// Digest of the stream each record's pipeline consumed, parallel to `records`.
    pub consumed: Vec<String>,
    /// Digest of the stream produced per `(atlas_count, rate_point)`.
    pub produced: BTreeMap<(usize, u8), String>,
    pub failures: Vec<SweepFailure>,
}

impl Experiment {
    /// Full cross product. With `stream_dir`, each stream is written as `a{N}_rp{K}.ivb` and
    /// `size_bytes` is taken from the file's length on disk.
    pub fn sweep(&self, stream_dir: Option<&Path>) -> Result<SweepOutput> {
        let cfg = &self.config;
        let mut out = SweepOutput::default();
        for &atlas_count in &cfg.atlas_counts {
            for &rp in &cfg.rate_points {
                let stream = match self.encode(atlas_count, rp) {
                    Ok(s) => s,
                    Err(e) => {
                        for &pipeline in &cfg.pipelines {
                            out.failures.push(SweepFailure {
                                pipeline,
                                atlas_count,
                                rate_point: rp,
                                message: e.to_string(),
                            });
                        }
                        continue;
                    }
                };
                let on_disk = match stream_dir {
                    Some(dir) => {
                        let path = dir.join(format!("a{atlas_count}_rp{}.ivb", rp.index()));
                        crate::formats::write_file(&path, &stream.bytes)?;
                        Some(std::fs::metadata(&path).map_err(|e| HarnessError::io(&path, e))?.len())
                    }
                    None => None,
                };
                out.produced.insert((atlas_count, rp.index()), sha256_hex(&stream.bytes));
                for &pipeline in &cfg.pipelines {
                    match self.run_stream(pipeline, &stream.bytes) {
                        Ok(mut run) => {
                            run.record.atlas_count = atlas_count;
                            if let Some(len) = on_disk {
                                run.record.size_bytes = len;
                            }
                            out.records.push(run.record);
                            out.consumed.push(run.stream_sha256);
                        }
                        Err(e) => out.failures.push(SweepFailure {
                            pipeline,
                            atlas_count,
                            rate_point: rp,
                            message: e.to_string(),
                        }),
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    Experiment::new(cfg.clone())?.sweep(None)
}

/// One rate point of the regularizer experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerRow {
    pub rate_point: RatePoint,
    pub size_bytes: u64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Mean over atlases of the decoded/original high-frequency energy ratio.
    pub spectral_ratio: f64,
    pub floaters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerReport {
    pub atlas_count: usize,
    pub noise_sigma: f64,
    pub rows: Vec<RegularizerRow>,
}

impl RegularizerReport {
    /// Rate point of the highest mean PSNR; the first one wins ties.
    pub fn argmax(&self) -> RatePoint {
        let mut best = &self.rows[0];
        for r in &self.rows[1..] {
            if r.mean_psnr > best.mean_psnr {
                best = r;
            }
        }
        best.rate_point
    }

    pub fn row(&self, rp: RatePoint) -> Option<&RegularizerRow> {
        self.rows.iter().find(|r| r.rate_point == rp)
    }

    /// Argmax is RP1 or RP2.
    pub fn lossy_peak(&self) -> bool {
        matches!(self.argmax(), RatePoint::Rp1 | RatePoint::Rp2)
    }

    /// `None` when RP0 or RP1 was not run.
    pub fn floaters_drop(&self) -> Option<bool> {
        Some(self.row(RatePoint::Rp1)?.floaters <= self.row(RatePoint::Rp0)?.floaters)
    }

    pub fn verdict(&self) -> String {
        let peak = self.argmax();
        let shape = if peak == RatePoint::Rp0 {
            "quality peaks at the lossless point"
        } else {
            "quality peaks at a lossy point"
        };
        let floaters = match self.floaters_drop() {
            Some(true) => "floaters RP1 <= RP0",
            Some(false) => "floaters RP1 > RP0",
            None => "floaters RP0/RP1 not compared",
        };
        format!("verdict: argmax {peak}; {shape}; {floaters}")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(REPORT_HEADER);
        s.push_str(&format!(
            "regularizer experiment: dsgs, {} atlas(es), noise sigma {}\n",
            self.atlas_count, self.noise_sigma
        ));
        s.push_str("rate_point  size_bytes  mean_psnr  mean_ssim  hf_ratio  floaters\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10}  {:>10}  {:>9.3}  {:>9.4}  {:>8.4}  {:>8}\n",
                r.rate_point.to_string(),
                r.size_bytes,
                r.mean_psnr,
                r.mean_ssim,
                r.spectral_ratio,
                r.floaters
            ));
        }
        s.push_str(&self.verdict());
        s.push('\n');
        s
    }
}

pub const REPORT_HEADER: &str = "# Desk-scale synthetic benchmark: reproduces the evaluation protocol and directional findings only;\n# absolute values of the reference tables are not comparison targets.\n";

/// DSGS over every configured rate point of the first configured atlas count.
pub fn regularizer_experiment(cfg: &ExperimentConfig) -> Result<RegularizerReport> {
    if cfg.scene.kind != SceneKind::NoiseAugmented {
        return Err(HarnessError::Config(format!("regularizer experiment needs a noise_augmented scene, got {:?}", cfg.scene.kind)));
    }
    let exp = Experiment::new(cfg.clone())?;
    let atlas_count = cfg.atlas_counts[0];
    let mut rows = Vec::with_capacity(cfg.rate_points.len());
    for &rp in &cfg.rate_points {
        let stream = exp.encode(atlas_count, rp)?;
        let decoded = decode_stream(&stream.bytes)?;
        let spectral_ratio = stream
            .atlases
            .iter()
            .zip(&decoded.atlases)
            .map(|(a, b)| spectral_report(a, b))
            .collect::<std::result::Result<Vec<_>, _>>()?
            .iter()
            .sum::<f64>()
            / stream.atlases.len() as f64;
        let run = exp.run_stream(Pipeline::Dsgs, &stream.bytes)?;
        let scene = run.synthesis.scene.as_ref().expect("dsgs output has a scene");
        let floaters = floater_census(scene, &decoded.views)?.count;
        rows.push(RegularizerRow {
            rate_point: rp,
            size_bytes: run.record.size_bytes,
            mean_psnr: run.record.mean_psnr,
            mean_ssim: run.record.mean_ssim,
            spectral_ratio,
            floaters,
        });
    }
    Ok(RegularizerReport {
        atlas_count,
        noise_sigma: cfg.scene.noise_sigma,
        rows,
    })
}

/// First DSDE mean-SSIM increase along the rate points, per atlas count.
pub fn dsde_monotone_violation(records: &[RdRecord]) -> Option<String> {
    let mut by_atlas: BTreeMap<usize, Vec<&RdRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.pipeline == Pipeline::Dsde) {
        by_atlas.entry(r.atlas_count).or_default().push(r);
    }
    if by_atlas.is_empty() {
        return Some("no DSDE records to check".into());
    }
    for (n, mut rs) in by_atlas {
        rs.sort_by_key(|r| r.rate_point);
        for w in rs.windows(2) {
            if w[1].mean_ssim > w[0].mean_ssim {
                return Some(format!(
                    "DSDE SSIM rises from {} ({:.5}) to {} ({:.5}) with {n} atlas(es)",
                    w[0].rate_point, w[0].mean_ssim, w[1].rate_point, w[1].mean_ssim
                ));
            }
        }
    }
    None
}

/// First `(atlas_count, rate_point)` where DSGS does not have the smaller inter-view PSNR spread.
pub fn consistency_violation(records: &[RdRecord]) -> Option<String> {
    let mut pairs = 0;
    for g in records.iter().filter(|r| r.pipeline == Pipeline::Dsgs) {
        let Some(d) = records
            .iter()
            .find(|r| r.pipeline == Pipeline::Dsde && r.atlas_count == g.atlas_count && r.rate_point == g.rate_point)
        else {
            continue;
        };
        pairs += 1;
        if !(g.delta_psnr < d.delta_psnr) {
            return Some(format!(
                "DSGS delta PSNR {:.3} dB >= DSDE {:.3} dB at {} with {} atlas(es)",
                g.delta_psnr, d.delta_psnr, g.rate_point, g.atlas_count
            ));
        }
    }
    (pairs == 0).then(|| "no DSDE/DSGS record pairs to compare".into())
}
