//! Anchor-vs-test comparison: Bjontegaard deltas, inter-view delta table and column marks.

use std::collections::BTreeSet;

use ivbench_core::codec::RatePoint;
use ivbench_core::metrics::{bd_quality, bd_rate, RdCurve};

use crate::error::{HarnessError, Result};
use crate::harness::REPORT_HEADER;
use crate::records::RdRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Best,
    Second,
    None,
}

/// Best and second-best entries of a column. Equal values share a mark; the second mark
/// goes to the next distinct value.
pub fn column_marks(values: &[f64], higher_is_better: bool) -> Vec<Mark> {
    let key = |v: f64| if higher_is_better { v } else { -v };
    let mut distinct: Vec<f64> = values.iter().map(|&v| key(v)).filter(|v| v.is_finite()).collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    values
        .iter()
        .map(|&v| {
            let k = key(v);
            if distinct.first() == Some(&k) {
                Mark::Best
            } else if distinct.get(1) == Some(&k) {
                Mark::Second
            } else {
                Mark::None
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub marks: Vec<Mark>,
}

impl Column {
    fn new(name: &str, values: Vec<f64>, higher_is_better: Option<bool>) -> Self {
        let marks = match higher_is_better {
            Some(h) => column_marks(&values, h),
            None => vec![Mark::None; values.len()],
        };
        Self {
            name: name.into(),
            values,
            marks,
        }
    }

    pub fn best(&self) -> Vec<usize> {
        self.indices(Mark::Best)
    }

    pub fn second(&self) -> Vec<usize> {
        self.indices(Mark::Second)
    }

    fn indices(&self, m: Mark) -> Vec<usize> {
        self.marks.iter().enumerate().filter(|(_, x)| **x == m).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasComparison {
    pub atlas_count: usize,
    pub rate_points: Vec<RatePoint>,
    pub bd_psnr: f64,
    pub bd_ssim: f64,
    /// `None` when the quality ranges do not overlap.
    pub bd_rate_percent: Option<f64>,
    pub columns: Vec<Column>,
}

impl AtlasComparison {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub anchor_label: String,
    pub test_label: String,
    pub per_atlas: Vec<AtlasComparison>,
}

fn label(records: &[RdRecord]) -> String {
    let names: BTreeSet<String> = records.iter().map(|r| r.pipeline.to_string()).collect();
    names.into_iter().collect::<Vec<_>>().join("+")
}

fn curve(name: &str, rows: &[&RdRecord], q: impl Fn(&RdRecord) -> f64) -> Result<RdCurve> {
    RdCurve::new(name, rows.iter().map(|r| (r.size_bytes as f64, q(r))).collect()).map_err(|e| HarnessError::Config(format!("{name}: {e}")))
}

/// Per atlas count: BD-PSNR and BD-SSIM of `test` over `anchor` on the shared rate points,
/// plus a column table with best/second marks.
pub fn compare(anchor: &[RdRecord], test: &[RdRecord]) -> Result<CompareReport> {
    let atlases = |rs: &[RdRecord]| rs.iter().map(|r| r.atlas_count).collect::<BTreeSet<_>>();
    let (aa, ta) = (atlases(anchor), atlases(test));
    if aa.is_empty() || aa != ta {
        return Err(HarnessError::Config(format!("atlas coverage differs: anchor {aa:?}, test {ta:?}")));
    }
    let mut per_atlas = Vec::new();
    for &n in &aa {
        let pick = |rs: &[RdRecord], rp: RatePoint| -> Result<Option<RdRecord>> {
            let hits: Vec<&RdRecord> = rs.iter().filter(|r| r.atlas_count == n && r.rate_point == rp).collect();
            match hits.len() {
                0 => Ok(None),
                1 => Ok(Some(hits[0].clone())),
                _ => Err(HarnessError::Config(format!("{} records for {n} atlas(es) at {rp}", hits.len()))),
            }
        };
        let mut rps = Vec::new();
        let mut a_rows = Vec::new();
        let mut t_rows = Vec::new();
        for rp in RatePoint::ALL {
            if let (Some(a), Some(t)) = (pick(anchor, rp)?, pick(test, rp)?) {
                rps.push(rp);
                a_rows.push(a);
                t_rows.push(t);
            }
        }
        if rps.len() < 4 {
            return Err(HarnessError::Config(format!("{} shared rate points for {n} atlas(es); at least 4 required", rps.len())));
        }
        let a_ref: Vec<&RdRecord> = a_rows.iter().collect();
        let t_ref: Vec<&RdRecord> = t_rows.iter().collect();
        let bd = |q: fn(&RdRecord) -> f64| -> Result<f64> {
            bd_quality(&curve("anchor", &a_ref, q)?, &curve("test", &t_ref, q)?).map_err(|e| HarnessError::Config(e.to_string()))
        };
        let bd_psnr = bd(|r| r.mean_psnr)?;
        let bd_ssim = bd(|r| r.mean_ssim)?;
        let bd_rate_percent = bd_rate(&curve("anchor", &a_ref, |r| r.mean_psnr)?, &curve("test", &t_ref, |r| r.mean_psnr)?).ok();
        let col = |rows: &[RdRecord], f: fn(&RdRecord) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        let columns = vec![
            Column::new("anchor_size_bytes", col(&a_rows, |r| r.size_bytes as f64), None),
            Column::new("test_size_bytes", col(&t_rows, |r| r.size_bytes as f64), None),
            Column::new("anchor_psnr", col(&a_rows, |r| r.mean_psnr), Some(true)),
            Column::new("test_psnr", col(&t_rows, |r| r.mean_psnr), Some(true)),
            Column::new("anchor_ssim", col(&a_rows, |r| r.mean_ssim), Some(true)),
            Column::new("test_ssim", col(&t_rows, |r| r.mean_ssim), Some(true)),
            Column::new("anchor_delta_psnr", col(&a_rows, |r| r.delta_psnr), Some(false)),
            Column::new("test_delta_psnr", col(&t_rows, |r| r.delta_psnr), Some(false)),
            Column::new("anchor_delta_ssim", col(&a_rows, |r| r.delta_ssim), Some(false)),
            Column::new("test_delta_ssim", col(&t_rows, |r| r.delta_ssim), Some(false)),
        ];
        per_atlas.push(AtlasComparison {
            atlas_count: n,
            rate_points: rps,
            bd_psnr,
            bd_ssim,
            bd_rate_percent,
            columns,
        });
    }
    Ok(CompareReport {
        anchor_label: label(anchor),
        test_label: label(test),
        per_atlas,
    })
}

impl CompareReport {
    /// Plain-text report. `(1)` marks the best value of a column, `(2)` the second best.
    pub fn render(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push_str(&format!("anchor: {}  test: {}\n", self.anchor_label, self.test_label));
        for a in &self.per_atlas {
            s.push_str(&format!("\n## {} atlas(es)\n", a.atlas_count));
            s.push_str(&format!("BD-PSNR {:+.4} dB  BD-SSIM {:+.5}", a.bd_psnr, a.bd_ssim));
            match a.bd_rate_percent {
                Some(r) => s.push_str(&format!("  BD-rate {r:+.2} %\n")),
                None => s.push_str("  BD-rate n/a (no quality overlap)\n"),
            }
            s.push_str(&format!("{:<6}", "rp"));
            for c in &a.columns {
                s.push_str(&format!(" {:>20}", c.name));
            }
            s.push('\n');
            for (i, rp) in a.rate_points.iter().enumerate() {
                s.push_str(&format!("{:<6}", rp.to_string()));
                for c in &a.columns {
                    let v = c.values[i];
                    let text = if c.name.ends_with("size_bytes") {
                        format!("{v:.0}")
                    } else if c.name.contains("ssim") {
                        format!("{v:.4}")
                    } else {
                        format!("{v:.3}")
                    };
                    let mark = match c.marks[i] {
                        Mark::Best => " (1)",
                        Mark::Second => " (2)",
                        Mark::None => "",
                    };
                    s.push_str(&format!(" {:>20}", text + mark));
                }
                s.push('\n');
            }
        }
        s
    }
}
