//! Run reports: per-image metrics plus aggregate means, in a line-oriented
//! versioned text format with a fixed key order, so identical runs produce
//! byte-identical files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::CostReport;
use crate::pipeline::PipelineRun;

const SCHEMA: &str = "esod-report v1";

/// Metrics of one processed image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub name: String,
    pub patch_count: usize,
    pub preserved_ratio: f64,
    pub cost: CostReport,
    pub bpr_box: Option<f64>,
    pub bpr_ctr: Option<f64>,
    pub bpr_vacuous: Option<bool>,
    pub mask_precision: Option<f64>,
    pub mask_recall: Option<f64>,
    pub detections: usize,
}

impl ImageReport {
    pub fn from_run(name: impl Into<String>, run: &PipelineRun) -> Self {
        ImageReport {
            name: name.into(),
            patch_count: run.plan.boxes.len(),
            preserved_ratio: run.cost.preserved_patch_ratio,
            cost: run.cost.clone(),
            bpr_box: run.bpr.as_ref().map(|b| b.bpr_box),
            bpr_ctr: run.bpr.as_ref().map(|b| b.bpr_ctr),
            bpr_vacuous: run.bpr.as_ref().map(|b| b.vacuous),
            mask_precision: run.mask_precision,
            mask_recall: run.mask_recall,
            detections: run.detections.len(),
        }
    }
}

/// Means over the per-image entries; `None` where no entry carried the value.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mean_patch_count: Option<f64>,
    pub mean_preserved_ratio: Option<f64>,
    pub mean_bpr_box: Option<f64>,
    pub mean_bpr_ctr: Option<f64>,
    pub mean_mask_precision: Option<f64>,
    pub mean_mask_recall: Option<f64>,
    pub mean_detections: Option<f64>,
    pub mean_sliced_total_macs: Option<f64>,
    pub mean_dense_total_macs: Option<f64>,
    /// Mean of per-image sliced/(dense) neck+head MAC ratios.
    pub mean_neck_head_ratio: Option<f64>,
}

/// A full run: ordered per-image entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub entries: Vec<ImageReport>,
}

fn mean_of<T, F: Fn(&T) -> Option<f64>>(items: &[T], f: F) -> Option<f64> {
    let values: Vec<f64> = items.iter().filter_map(f).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

impl RunReport {
    pub fn aggregate(&self) -> Aggregate {
        let e = &self.entries;
        Aggregate {
            count: e.len(),
            mean_patch_count: mean_of(e, |r| Some(r.patch_count as f64)),
            mean_preserved_ratio: mean_of(e, |r| Some(r.preserved_ratio)),
            mean_bpr_box: mean_of(e, |r| r.bpr_box),
            mean_bpr_ctr: mean_of(e, |r| r.bpr_ctr),
            mean_mask_precision: mean_of(e, |r| r.mask_precision),
            mean_mask_recall: mean_of(e, |r| r.mask_recall),
            mean_detections: mean_of(e, |r| Some(r.detections as f64)),
            mean_sliced_total_macs: mean_of(e, |r| Some(r.cost.sliced_total as f64)),
            mean_dense_total_macs: mean_of(e, |r| Some(r.cost.dense_total as f64)),
            mean_neck_head_ratio: mean_of(e, |r| {
                let dense = r.cost.neck_head_dense();
                if dense == 0 {
                    None
                } else {
                    Some(r.cost.neck_head_sliced() as f64 / dense as f64)
                }
            }),
        }
    }

    pub fn to_text(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "null".to_string(), |f| format!("{f}"))
        }
        let mut out = String::new();
        out.push_str(SCHEMA);
        out.push('\n');
        out.push_str(&format!("images {}\n", self.entries.len()));
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("image {} {}\n", i, e.name));
            out.push_str(&format!("patch_count {}\n", e.patch_count));
            out.push_str(&format!("preserved_ratio {}\n", e.preserved_ratio));
            out.push_str(&format!("stem_macs {}\n", e.cost.stem_macs));
            out.push_str(&format!("seeker_macs {}\n", e.cost.seeker_macs));
            out.push_str(&format!("neck_macs {}\n", e.cost.neck_macs));
            out.push_str(&format!("head_macs {}\n", e.cost.head_macs));
            out.push_str(&format!("dense_neck_macs {}\n", e.cost.dense_neck_macs));
            out.push_str(&format!("dense_head_macs {}\n", e.cost.dense_head_macs));
            out.push_str(&format!("sliced_total_macs {}\n", e.cost.sliced_total));
            out.push_str(&format!("dense_total_macs {}\n", e.cost.dense_total));
            out.push_str(&format!("bpr_box {}\n", opt(e.bpr_box)));
            out.push_str(&format!("bpr_ctr {}\n", opt(e.bpr_ctr)));
            out.push_str(&format!(
                "bpr_vacuous {}\n",
                e.bpr_vacuous.map_or_else(|| "null".to_string(), |b| (b as u8).to_string())
            ));
            out.push_str(&format!("mask_precision {}\n", opt(e.mask_precision)));
            out.push_str(&format!("mask_recall {}\n", opt(e.mask_recall)));
            out.push_str(&format!("detections {}\n", e.detections));
            out.push_str("end\n");
        }
        let a = self.aggregate();
        out.push_str("aggregate\n");
        out.push_str(&format!("count {}\n", a.count));
        out.push_str(&format!("mean_patch_count {}\n", opt(a.mean_patch_count)));
        out.push_str(&format!("mean_preserved_ratio {}\n", opt(a.mean_preserved_ratio)));
        out.push_str(&format!("mean_bpr_box {}\n", opt(a.mean_bpr_box)));
        out.push_str(&format!("mean_bpr_ctr {}\n", opt(a.mean_bpr_ctr)));
        out.push_str(&format!("mean_mask_precision {}\n", opt(a.mean_mask_precision)));
        out.push_str(&format!("mean_mask_recall {}\n", opt(a.mean_mask_recall)));
        out.push_str(&format!("mean_detections {}\n", opt(a.mean_detections)));
        out.push_str(&format!("mean_sliced_total_macs {}\n", opt(a.mean_sliced_total_macs)));
        out.push_str(&format!("mean_dense_total_macs {}\n", opt(a.mean_dense_total_macs)));
        out.push_str(&format!("mean_neck_head_ratio {}\n", opt(a.mean_neck_head_ratio)));
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
        let (ln, schema) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty report".to_string()))?;
        if schema != SCHEMA {
            return Err(parse_err(ln, format!("unknown schema {schema:?}")));
        }
        let mut entries = Vec::new();
        let mut current: Option<ImageReport> = None;
        let mut in_aggregate = false;
        for (ln, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if in_aggregate {
                if key == "end" {
                    in_aggregate = false;
                }
                continue; // aggregates are recomputed from entries
            }
            match key {
                "images" => {}
                "aggregate" => in_aggregate = true,
                "image" => {
                    let name = rest.split_once(' ').map(|(_, n)| n).unwrap_or(rest);
                    current = Some(ImageReport {
                        name: name.to_string(),
                        patch_count: 0,
                        preserved_ratio: 0.0,
                        cost: CostReport::default(),
                        bpr_box: None,
                        bpr_ctr: None,
                        bpr_vacuous: None,
                        mask_precision: None,
                        mask_recall: None,
                        detections: 0,
                    });
                }
                "end" => {
                    let entry = current
                        .take()
                        .ok_or_else(|| parse_err(ln, "end outside image block".to_string()))?;
                    entries.push(entry);
                }
                _ => {
                    let entry = current
                        .as_mut()
                        .ok_or_else(|| parse_err(ln, format!("stray key {key:?}")))?;
                    let f = || -> Result<f64> {
                        rest.parse::<f64>().map_err(|e| parse_err(ln, e.to_string()))
                    };
                    let u = || -> Result<u64> {
                        rest.parse::<u64>().map_err(|e| parse_err(ln, e.to_string()))
                    };
                    let of = || -> Result<Option<f64>> {
                        if rest == "null" { Ok(None) } else { f().map(Some) }
                    };
                    match key {
                        "patch_count" => entry.patch_count = u()? as usize,
                        "preserved_ratio" => {
                            entry.preserved_ratio = f()?;
                            entry.cost.preserved_patch_ratio = entry.preserved_ratio;
                        }
                        "stem_macs" => entry.cost.stem_macs = u()?,
                        "seeker_macs" => entry.cost.seeker_macs = u()?,
                        "neck_macs" => entry.cost.neck_macs = u()?,
                        "head_macs" => entry.cost.head_macs = u()?,
                        "dense_neck_macs" => entry.cost.dense_neck_macs = u()?,
                        "dense_head_macs" => entry.cost.dense_head_macs = u()?,
                        "sliced_total_macs" => entry.cost.sliced_total = u()?,
                        "dense_total_macs" => entry.cost.dense_total = u()?,
                        "bpr_box" => entry.bpr_box = of()?,
                        "bpr_ctr" => entry.bpr_ctr = of()?,
                        "bpr_vacuous" => {
                            entry.bpr_vacuous =
                                if rest == "null" { None } else { Some(rest == "1") }
                        }
                        "mask_precision" => entry.mask_precision = of()?,
                        "mask_recall" => entry.mask_recall = of()?,
                        "detections" => entry.detections = u()? as usize,
                        other => return Err(parse_err(ln, format!("unknown key {other:?}"))),
                    }
                }
            }
        }
        Ok(RunReport { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Concatenates several reports in order (for the aggregate subcommand).
    pub fn merged(reports: Vec<RunReport>) -> RunReport {
        RunReport { entries: reports.into_iter().flat_map(|r| r.entries).collect() }
    }
}
