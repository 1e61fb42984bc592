//! Rate-distortion records and the sweep CSV (one row per evaluation view).

use ivbench_core::codec::RatePoint;
use ivbench_core::metrics::{QualityVector, ViewQuality};
use serde::{Deserialize, Serialize};

use crate::config::Pipeline;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RdRecord {
    pub pipeline: Pipeline,
    pub atlas_count: usize,
    pub rate_point: RatePoint,
    /// Exact bitstream length.
    pub size_bytes: u64,
    pub quality: QualityVector,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
    pub t_decode_ms: Option<f64>,
    pub t_synth_ms: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "pipeline",
    "atlas_count",
    "rate_point",
    "size_bytes",
    "view_id",
    "psnr_db",
    "ssim",
    "mean_psnr",
    "mean_ssim",
    "delta_psnr",
    "delta_ssim",
    "t_decode_ms",
    "t_synth_ms",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    pipeline: Pipeline,
    atlas_count: usize,
    rate_point: String,
    size_bytes: u64,
    view_id: u32,
    psnr_db: f64,
    ssim: f64,
    mean_psnr: f64,
    mean_ssim: f64,
    delta_psnr: f64,
    delta_ssim: f64,
    t_decode_ms: Option<f64>,
    t_synth_ms: Option<f64>,
}

/// Serializes records in order; floats use the shortest exact decimal form.
pub fn to_csv(records: &[RdRecord]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    let mut wrote_any = false;
    for r in records {
        for v in &r.quality.views {
            w.serialize(Row {
                pipeline: r.pipeline,
                atlas_count: r.atlas_count,
                rate_point: r.rate_point.to_string(),
                size_bytes: r.size_bytes,
                view_id: v.view_id,
                psnr_db: v.psnr_db,
                ssim: v.ssim,
                mean_psnr: r.mean_psnr,
                mean_ssim: r.mean_ssim,
                delta_psnr: r.delta_psnr,
                delta_ssim: r.delta_ssim,
                t_decode_ms: r.t_decode_ms,
                t_synth_ms: r.t_synth_ms,
            })
            .expect("in-memory CSV write");
            wrote_any = true;
        }
    }
    if !wrote_any {
        w.write_record(CSV_COLUMNS).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("flush to Vec")).expect("CSV is UTF-8")
}

/// Groups consecutive rows with equal `(pipeline, atlas_count, rate_point)` back into records.
pub fn from_csv(text: &str) -> Result<Vec<RdRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rd.headers().map_err(|e| HarnessError::parse("csv header", e))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(HarnessError::parse("csv header", format!("expected columns {}", CSV_COLUMNS.join(","))));
    }
    let mut out: Vec<RdRecord> = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| HarnessError::parse(format!("csv line {line}"), e))?;
        let rate_point: RatePoint = row.rate_point.parse().map_err(|e| HarnessError::parse(format!("csv line {line}"), e))?;
        let view = ViewQuality {
            view_id: row.view_id,
            psnr_db: row.psnr_db,
            ssim: row.ssim,
        };
        if let Some(last) = out.last_mut() {
            if last.pipeline == row.pipeline && last.atlas_count == row.atlas_count && last.rate_point == rate_point {
                let same = last.size_bytes == row.size_bytes
                    && last.mean_psnr.to_bits() == row.mean_psnr.to_bits()
                    && last.mean_ssim.to_bits() == row.mean_ssim.to_bits()
                    && last.delta_psnr.to_bits() == row.delta_psnr.to_bits()
                    && last.delta_ssim.to_bits() == row.delta_ssim.to_bits()
                    && last.t_decode_ms == row.t_decode_ms
                    && last.t_synth_ms == row.t_synth_ms;
                if !same {
                    return Err(HarnessError::parse(format!("csv line {line}"), "record-level columns differ within one record"));
                }
                last.quality.views.push(view);
                continue;
            }
        }
        out.push(RdRecord {
            pipeline: row.pipeline,
            atlas_count: row.atlas_count,
            rate_point,
            size_bytes: row.size_bytes,
            quality: QualityVector { views: vec![view] },
            mean_psnr: row.mean_psnr,
            mean_ssim: row.mean_ssim,
            delta_psnr: row.delta_psnr,
            delta_ssim: row.delta_ssim,
            t_decode_ms: row.t_decode_ms,
            t_synth_ms: row.t_synth_ms,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pipeline: Pipeline, rp: RatePoint, timing: bool) -> RdRecord {
        let quality = QualityVector {
            views: vec![
                ViewQuality { view_id: 0, psnr_db: 31.25, ssim: 0.9 },
                ViewQuality { view_id: 1, psnr_db: 0.1 + 0.2, ssim: 1.0 / 3.0 },
            ],
        };
        RdRecord {
            pipeline,
            atlas_count: 1,
            rate_point: rp,
            size_bytes: 1234,
            mean_psnr: quality.mean_psnr(),
            mean_ssim: quality.mean_ssim(),
            quality,
            delta_psnr: 30.95,
            delta_ssim: 0.5666666666666667,
            t_decode_ms: timing.then_some(12.5),
            t_synth_ms: timing.then_some(980.125),
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        for timing in [false, true] {
            let recs = vec![
                record(Pipeline::Dsde, RatePoint::Rp0, timing),
                record(Pipeline::Dsgs, RatePoint::Rp0, timing),
                record(Pipeline::Dsde, RatePoint::Rp3, timing),
            ];
            let text = to_csv(&recs);
            assert!(text.starts_with(&CSV_COLUMNS.join(",")));
            assert_eq!(text.lines().count(), 1 + 6);
            assert_eq!(from_csv(&text).unwrap(), recs);
        }
    }

    #[test]
    fn rejects_malformed_csv() {
        assert!(from_csv("a,b\n1,2\n").is_err());
        let good = to_csv(&[record(Pipeline::Dsde, RatePoint::Rp1, false)]);
        let bad = good.replace("RP1", "RP9");
        assert!(matches!(from_csv(&bad), Err(HarnessError::Parse { .. })));
        let mut lines: Vec<String> = good.lines().map(String::from).collect();
        lines[2] = lines[2].replace(",1234,", ",999,");
        assert!(from_csv(&lines.join("\n")).is_err());
    }

    #[test]
    fn empty_csv_has_header_only() {
        let text = to_csv(&[]);
        assert_eq!(text.trim_end(), CSV_COLUMNS.join(","));
        assert!(from_csv(&text).unwrap().is_empty());
    }
}
