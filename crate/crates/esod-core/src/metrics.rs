//! Recall metrics, mask precision/recall, the MAC cost model and dataset
//! sparsity statistics.
//!
//! Costs are counted in multiply-accumulates (MACs), the convention of the
//! usual FLOPs-counting tools; callers that want "2 ops per MAC" numbers can
//! double them for display. Box/patch intersections are computed in
//! real-valued mask coordinates, no rasterisation involved.

use crate::error::{Error, Result};
use crate::grid::{conv_output_dims, ConvSpec};
use crate::label::BoundingBox;
use crate::pipeline::PipelineConfig;
use crate::seeker::{ObjectnessMask, DW_KERNEL};
use crate::slicer::{CenterSet, PatchPlan};
use crate::sparse::{receptive_field_counts, SparseSampleSet};

/// Ground-truth boxes for one image, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub image_w: usize,
    pub image_h: usize,
    pub boxes: Vec<BoundingBox>,
}

impl SceneAnnotation {
    /// Clips every box to the image rectangle; boxes whose clipped extent
    /// vanishes are dropped.
    pub fn new(image_w: usize, image_h: usize, boxes: Vec<BoundingBox>) -> Result<Self> {
        if image_w == 0 || image_h == 0 {
            return Err(Error::Annotation("image dimensions must be positive".to_string()));
        }
        let (w, h) = (image_w as f64, image_h as f64);
        let mut clipped = Vec::with_capacity(boxes.len());
        for b in boxes {
            let (x1, y1, x2, y2) = b.corners();
            let (x1, y1) = (x1.max(0.0), y1.max(0.0));
            let (x2, y2) = (x2.min(w), y2.min(h));
            if x2 - x1 > 0.0 && y2 - y1 > 0.0 {
                clipped.push(BoundingBox::new(
                    (x1 + x2) / 2.0,
                    (y1 + y2) / 2.0,
                    x2 - x1,
                    y2 - y1,
                    b.category,
                )?);
            }
        }
        Ok(SceneAnnotation { image_w, image_h, boxes: clipped })
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Area of the intersection of two real-valued rectangles.
fn rect_intersection(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let w = a.2.min(b.2) - a.0.max(b.0);
    let h = a.3.min(b.3) - a.1.max(b.1);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

/// Per-object hit flags for the box criterion: more than half of the box area
/// lies inside a single patch (geometry in mask units).
pub fn bpr_box_flags(scene: &SceneAnnotation, plan: &PatchPlan, stride: usize) -> Vec<bool> {
    scene
        .boxes
        .iter()
        .map(|b| {
            let s = b.scaled(1.0 / stride as f64);
            let rect = s.corners();
            let area = s.area();
            plan.boxes.iter().any(|p| {
                let pr = (p.x1 as f64, p.y1 as f64, p.x2 as f64, p.y2 as f64);
                rect_intersection(rect, pr) / area > 0.5
            })
        })
        .collect()
}

/// Per-object hit flags for the center criterion: the ground-truth center,
/// rounded to the nearest mask cell, appears in the center set.
pub fn bpr_ctr_flags(scene: &SceneAnnotation, centers: &CenterSet, stride: usize) -> Vec<bool> {
    scene
        .boxes
        .iter()
        .map(|b| {
            let cx = (b.xc / stride as f64).round();
            let cy = (b.yc / stride as f64).round();
            if cx < 0.0 || cy < 0.0 {
                return false;
            }
            let (cx, cy) = (cx as usize, cy as usize);
            centers.centers.iter().any(|c| c.x == cx && c.y == cy)
        })
        .collect()
}

fn ratio_of(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        1.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    }
}

/// Best-possible recall of a plan for ground-truth boxes.
///
/// An empty scene has no objects to recall; the ratio is reported as the
/// vacuous 1.0 (see [`BprResult::vacuous`]).
pub fn bpr_box(scene: &SceneAnnotation, plan: &PatchPlan, stride: usize) -> f64 {
    ratio_of(&bpr_box_flags(scene, plan, stride))
}

/// Best-possible recall of a center set for ground-truth centers.
pub fn bpr_ctr(scene: &SceneAnnotation, centers: &CenterSet, stride: usize) -> f64 {
    ratio_of(&bpr_ctr_flags(scene, centers, stride))
}

/// Both recall ratios with their per-object flags.
#[derive(Debug, Clone, PartialEq)]
pub struct BprResult {
    pub bpr_box: f64,
    pub bpr_ctr: f64,
    pub box_hits: Vec<bool>,
    pub ctr_hits: Vec<bool>,
    /// True when the scene had no objects and the ratios are vacuous.
    pub vacuous: bool,
}

impl BprResult {
    pub fn compute(
        scene: &SceneAnnotation,
        plan: &PatchPlan,
        centers: &CenterSet,
        stride: usize,
    ) -> Self {
        let box_hits = bpr_box_flags(scene, plan, stride);
        let ctr_hits = bpr_ctr_flags(scene, centers, stride);
        BprResult {
            bpr_box: ratio_of(&box_hits),
            bpr_ctr: ratio_of(&ctr_hits),
            vacuous: scene.is_empty(),
            box_hits,
            ctr_hits,
        }
    }
}

/// Precision/recall of a predicted mask against a label, both binarised at
/// `threshold` (`>=` semantics). Empty denominators report the vacuous 1.0.
pub fn mask_pr(
    pred: &ObjectnessMask,
    label: &crate::label::PseudoMask,
    threshold: f64,
) -> Result<(f64, f64)> {
    if !pred.grid.same_shape(&label.grid) {
        return Err(Error::shape("mask and label shapes differ".to_string()));
    }
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (p, l) in pred.grid.values().iter().zip(label.grid.values()) {
        match (*p >= threshold, *l >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 1.0 } else { tp as f64 / (tp + fne) as f64 };
    Ok((precision, recall))
}

/// MACs of one standard convolution layer at the given output size.
pub fn conv_cost(spec: &ConvSpec, out_h: usize, out_w: usize) -> u64 {
    (spec.kernel_h * spec.kernel_w * spec.in_channels * spec.out_channels * out_h * out_w) as u64
}

/// MACs of a depthwise layer (each channel convolved independently).
pub fn depthwise_cost(channels: usize, kernel: usize, out_h: usize, out_w: usize) -> u64 {
    (kernel * kernel * channels * out_h * out_w) as u64
}

/// Per-stage MAC counts under dense and sliced execution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostReport {
    pub stem_macs: u64,
    pub seeker_macs: u64,
    /// Neck over the extracted patches.
    pub neck_macs: u64,
    /// Head at the sparse samples (receptive fields expanded).
    pub head_macs: u64,
    pub dense_neck_macs: u64,
    pub dense_head_macs: u64,
    /// Extracted patch area over mask area, capped at 1.
    pub preserved_patch_ratio: f64,
    /// stem + seeker + sliced neck + sliced head.
    pub sliced_total: u64,
    /// stem + seeker + dense neck + dense head. Both totals share the
    /// stem+seeker prefix so their difference isolates the slicing effect;
    /// in the degenerate full-coverage case the totals coincide exactly.
    pub dense_total: u64,
}

impl CostReport {
    pub fn neck_head_sliced(&self) -> u64 {
        self.neck_macs + self.head_macs
    }

    pub fn neck_head_dense(&self) -> u64 {
        self.dense_neck_macs + self.dense_head_macs
    }
}

/// Assembles the per-image cost report for a configuration, plan and sample
/// set.
///
/// Stem and seeker always run at full resolution; the neck cost is exactly
/// proportional to the extracted patch area (so it is affine in the patch
/// count at fixed patch size) and the head cost to the number of sample
/// positions after receptive-field expansion.
pub fn pipeline_cost(
    config: &PipelineConfig,
    image_w: usize,
    image_h: usize,
    plan: &PatchPlan,
    samples: &SparseSampleSet,
) -> Result<CostReport> {
    let mut report = CostReport::default();

    let (mut h, mut w) = (image_h, image_w);
    for spec in &config.stem {
        let (oh, ow) = conv_output_dims(spec, h, w)?;
        report.stem_macs += conv_cost(spec, oh, ow);
        (h, w) = (oh, ow);
    }
    let (mask_h, mask_w) = (h, w);

    let c = config.seeker.channels;
    report.seeker_macs = depthwise_cost(c, DW_KERNEL, mask_h, mask_w)
        + conv_cost(&config.seeker.pw, mask_h, mask_w);

    for spec in &config.neck {
        report.dense_neck_macs += conv_cost(spec, mask_h, mask_w);
        report.neck_macs +=
            plan.boxes.len() as u64 * conv_cost(spec, plan.patch_h, plan.patch_w);
    }

    for spec in &config.head {
        report.dense_head_macs += conv_cost(spec, mask_h, mask_w);
    }
    if !samples.is_empty() {
        let counts = receptive_field_counts(&config.head, samples, mask_h, mask_w)?;
        for (spec, positions) in config.head.iter().zip(counts) {
            report.head_macs += positions as u64
                * (spec.kernel_h * spec.kernel_w * spec.in_channels * spec.out_channels) as u64;
        }
    }

    report.preserved_patch_ratio =
        (plan.total_area() as f64 / (mask_h * mask_w) as f64).min(1.0);
    report.sliced_total =
        report.stem_macs + report.seeker_macs + report.neck_macs + report.head_macs;
    report.dense_total =
        report.stem_macs + report.seeker_macs + report.dense_neck_macs + report.dense_head_macs;
    Ok(report)
}

/// Fraction of the `k x k` uniform image cells that intersect no ground-truth
/// box with positive area.
pub fn patch_emptiness(scene: &SceneAnnotation, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::parameter("k must be positive"));
    }
    let (w, h) = (scene.image_w as f64, scene.image_h as f64);
    let rects: Vec<(f64, f64, f64, f64)> = scene.boxes.iter().map(|b| b.corners()).collect();
    let mut empty = 0usize;
    for i in 0..k {
        let y0 = i as f64 * h / k as f64;
        let y1 = (i + 1) as f64 * h / k as f64;
        for j in 0..k {
            let x0 = j as f64 * w / k as f64;
            let x1 = (j + 1) as f64 * w / k as f64;
            let cell = (x0, y0, x1, y1);
            if rects.iter().all(|r| rect_intersection(*r, cell) == 0.0) {
                empty += 1;
            }
        }
    }
    Ok(empty as f64 / (k * k) as f64)
}

/// Fraction of image pixels covered by the union of ground-truth boxes
/// (overlaps counted once), computed exactly by a coordinate sweep.
pub fn pixel_occupancy(scene: &SceneAnnotation) -> f64 {
    if scene.boxes.is_empty() {
        return 0.0;
    }
    let rects: Vec<(f64, f64, f64, f64)> = scene.boxes.iter().map(|b| b.corners()).collect();
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.0, r.2]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();

    let mut union = 0.0;
    for slab in xs.windows(2) {
        let (x0, x1) = (slab[0], slab[1]);
        if x1 <= x0 {
            continue;
        }
        let mid = (x0 + x1) / 2.0;
        let mut intervals: Vec<(f64, f64)> = rects
            .iter()
            .filter(|r| r.0 <= mid && mid < r.2)
            .map(|r| (r.1, r.3))
            .collect();
        intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut covered = 0.0;
        let mut current: Option<(f64, f64)> = None;
        for (y0, y1) in intervals {
            match current {
                Some((_, ref mut ce)) if y0 <= *ce => *ce = ce.max(y1),
                Some((cs, ce)) => {
                    covered += ce - cs;
                    current = Some((y0, y1));
                }
                None => current = Some((y0, y1)),
            }
        }
        if let Some((cs, ce)) = current {
            covered += ce - cs;
        }
        union += covered * (x1 - x0);
    }
    union / (scene.image_w * scene.image_h) as f64
}
