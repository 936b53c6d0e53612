//! End-to-end driver: stem, mask, slicing, per-patch neck, sparse head.
//!
//! The network is a configurable toy: three stride-2 stem layers (total
//! stride 8), a two-layer neck, a two-layer head. Small enough for
//! sub-second desk runs, deep enough that sparse/dense equivalence and cost
//! linearity are non-trivial. The mask driving the slicer either comes from
//! the seeker (`predicted`) or is generated from ground truth (`oracle`),
//! which doubles as the warm-up mechanism and as the upper-bound evaluator
//! for slicing quality.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{conv2d, conv_output_dims, Activation, ConvSpec, FeatureStack};
use crate::label::{gaussian_mask, GaussianSpec, PseudoMask};
use crate::metrics::{mask_pr, pipeline_cost, BprResult, CostReport, SceneAnnotation};
use crate::netpbm;
use crate::seeker::{seek, ObjectnessMask, SeekerParams};
use crate::slicer::{
    activation, extract_patches, local_maxima, slice_greedy, slice_parallel, slice_uniform,
    CenterSet, PatchPlan, Strategy,
};
use crate::sparse::{decode_detections, head_forward_sparse, Detection, SparseSampleSet};

/// Total stem downsampling factor.
pub const STRIDE: usize = 8;

/// Which mask drives slicing and the sparse head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Predicted,
    Oracle,
}

impl MaskSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(MaskSource::Predicted),
            "oracle" => Ok(MaskSource::Oracle),
            other => Err(Error::parameter(format!(
                "unknown mask source {other:?} (expected predicted|oracle)"
            ))),
        }
    }
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskSource::Predicted => "predicted",
            MaskSource::Oracle => "oracle",
        })
    }
}

/// Complete network and slicing configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Stride-8 feature extractor (first layer reads 3 image channels).
    pub stem: Vec<ConvSpec>,
    pub seeker: SeekerParams,
    /// Stride-1 same-padding aggregation layers, run per patch.
    pub neck: Vec<ConvSpec>,
    /// Stride-1 same-padding prediction layers ending in `5 + categories`
    /// channels.
    pub head: Vec<ConvSpec>,
    pub k: usize,
    pub activation_threshold: f64,
    pub tau: f64,
    pub strategy: Strategy,
    pub mask_source: MaskSource,
    pub num_categories: usize,
    pub score_threshold: f64,
}

fn random_conv(
    rng: &mut ChaCha8Rng,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> ConvSpec {
    let scale = (3.0 / (c_in * k * k) as f64).sqrt();
    ConvSpec {
        in_channels: c_in,
        out_channels: c_out,
        kernel_h: k,
        kernel_w: k,
        stride,
        padding,
        weights: (0..c_out * c_in * k * k).map(|_| rng.gen_range(-scale..scale)).collect(),
        bias: vec![0.0; c_out],
    }
}

impl PipelineConfig {
    /// Default toy network with weights drawn deterministically from `seed`.
    pub fn toy(seed: u64, num_categories: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = vec![
            random_conv(&mut rng, 3, 8, 3, 2, 1),
            random_conv(&mut rng, 8, 16, 3, 2, 1),
            random_conv(&mut rng, 16, 32, 3, 2, 1),
        ];
        let seeker = SeekerParams::random(32, &mut rng);
        let neck = vec![
            random_conv(&mut rng, 32, 32, 3, 1, 1),
            random_conv(&mut rng, 32, 32, 3, 1, 1),
        ];
        let head = vec![
            random_conv(&mut rng, 32, 16, 3, 1, 1),
            random_conv(&mut rng, 16, 5 + num_categories, 1, 1, 0),
        ];
        PipelineConfig {
            stem,
            seeker,
            neck,
            head,
            k: 8,
            activation_threshold: 0.5,
            tau: 0.5,
            strategy: Strategy::Greedy,
            mask_source: MaskSource::Oracle,
            num_categories,
            score_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem.is_empty() {
            return Err(Error::parameter("stem must have at least one layer"));
        }
        let total_stride: usize = self.stem.iter().map(|s| s.stride).product();
        if total_stride != STRIDE {
            return Err(Error::parameter(format!(
                "stem strides multiply to {total_stride}, need {STRIDE}"
            )));
        }
        let mut channels = 3;
        for (i, spec) in self.stem.iter().enumerate() {
            spec.validate()?;
            if spec.in_channels != channels {
                return Err(Error::shape(format!("stem layer {i} channel mismatch")));
            }
            channels = spec.out_channels;
        }
        self.seeker.validate()?;
        if self.seeker.channels != channels {
            return Err(Error::shape("seeker channels != stem output channels".to_string()));
        }
        for (i, spec) in self.neck.iter().enumerate() {
            spec.validate()?;
            if !spec.is_same_padding() {
                return Err(Error::parameter(format!("neck layer {i} must be same-padding")));
            }
            if spec.in_channels != channels {
                return Err(Error::shape(format!("neck layer {i} channel mismatch")));
            }
            channels = spec.out_channels;
        }
        for (i, spec) in self.head.iter().enumerate() {
            spec.validate()?;
            if !spec.is_same_padding() {
                return Err(Error::parameter(format!("head layer {i} must be same-padding")));
            }
            if spec.in_channels != channels {
                return Err(Error::shape(format!("head layer {i} channel mismatch")));
            }
            channels = spec.out_channels;
        }
        if channels != 5 + self.num_categories {
            return Err(Error::shape(format!(
                "head output {channels} channels, expected 5 + {}",
                self.num_categories
            )));
        }
        if self.k == 0 {
            return Err(Error::parameter("k must be positive"));
        }
        for (name, v) in [
            ("activation_threshold", self.activation_threshold),
            ("tau", self.tau),
            ("score_threshold", self.score_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::parameter(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        Ok(())
    }

    /// Mask-grid dimensions the stem produces for an image of this size.
    pub fn mask_dims(&self, image_w: usize, image_h: usize) -> Result<(usize, usize)> {
        let (mut h, mut w) = (image_h, image_w);
        for spec in &self.stem {
            (h, w) = conv_output_dims(spec, h, w)?;
        }
        Ok((h, w))
    }
}

/// Runs the stem chain (conv + ReLU per layer).
pub fn stem_forward(image: &FeatureStack, stem: &[ConvSpec]) -> Result<FeatureStack> {
    let mut current = image.clone();
    for spec in stem {
        current = conv2d(&current, spec)?.pointwise(Activation::Relu);
    }
    Ok(current)
}

/// Pads an image (bottom/right, edge replication) to the next size the
/// default stride-2 stem accepts exactly (side = 8m + 1).
pub fn pad_for_default_stem(image: &FeatureStack) -> FeatureStack {
    let next = |n: usize| -> usize {
        if n % STRIDE == 1 {
            n
        } else {
            (n / STRIDE) * STRIDE + 1 + if n % STRIDE > 1 { STRIDE } else { 0 }
        }
    };
    let (h, w) = (next(image.height()), next(image.width()));
    if (h, w) == (image.height(), image.width()) {
        return image.clone();
    }
    let mut out = FeatureStack::zeros(image.channels(), h, w);
    for c in 0..image.channels() {
        for y in 0..h {
            let sy = y.min(image.height() - 1);
            for x in 0..w {
                let sx = x.min(image.width() - 1);
                out.set(c, x, y, image.get(c, sx, sy));
            }
        }
    }
    out
}

/// Everything one image run produces.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub mask: ObjectnessMask,
    pub centers: CenterSet,
    pub plan: PatchPlan,
    pub detections: Vec<Detection>,
    pub cost: CostReport,
    pub bpr: Option<BprResult>,
    pub mask_precision: Option<f64>,
    pub mask_recall: Option<f64>,
}

/// Oracle label for a scene on the mask grid.
pub fn oracle_mask(
    scene: &SceneAnnotation,
    mask_h: usize,
    mask_w: usize,
    tau: f64,
) -> Result<PseudoMask> {
    let boxes: Vec<_> = scene.boxes.iter().map(|b| b.scaled(1.0 / STRIDE as f64)).collect();
    gaussian_mask(&boxes, (mask_h, mask_w), GaussianSpec::new(tau)?)
}

/// Full pipeline pass over one image.
///
/// `scene` is required in oracle mode and enables the recall/mask metrics in
/// predicted mode.
pub fn run_pipeline(
    image: &FeatureStack,
    config: &PipelineConfig,
    scene: Option<&SceneAnnotation>,
) -> Result<PipelineRun> {
    config.validate()?;
    let features = stem_forward(image, &config.stem)?;
    let (mask_h, mask_w) = (features.height(), features.width());

    let label = match scene {
        Some(sc) => Some(oracle_mask(sc, mask_h, mask_w, config.tau)?),
        None => None,
    };
    let mask = match config.mask_source {
        MaskSource::Predicted => seek(&features, &config.seeker)?,
        MaskSource::Oracle => {
            let label = label
                .as_ref()
                .ok_or_else(|| Error::parameter("oracle mask source requires a scene"))?;
            ObjectnessMask::new(label.grid.clone())?
        }
    };

    let act = activation(&mask, config.activation_threshold)?;
    let centers = local_maxima(&mask, &act)?;
    let plan = match config.strategy {
        Strategy::Uniform => slice_uniform(&act, &centers, config.k)?,
        Strategy::Greedy => slice_greedy(&mask, config.k, config.activation_threshold)?,
        Strategy::Parallel => slice_parallel(&mask, config.k, config.activation_threshold)?,
    };

    let patches = extract_patches(&features, &plan)?;

    // assign each center to the first patch that contains it
    let mut patch_samples: Vec<Vec<(usize, usize)>> = vec![Vec::new(); plan.boxes.len()];
    for c in &centers.centers {
        if let Some(idx) = plan.boxes.iter().position(|b| b.contains(c.x, c.y)) {
            let b = &plan.boxes[idx];
            patch_samples[idx].push((c.x - b.x1, c.y - b.y1));
        }
    }

    let mut detections = Vec::new();
    for (idx, locals) in patch_samples.iter().enumerate() {
        if locals.is_empty() {
            continue;
        }
        let mut aggregated = patches[idx].clone();
        for spec in &config.neck {
            aggregated = conv2d(&aggregated, spec)?.pointwise(Activation::Relu);
        }
        let samples = SparseSampleSet::new(locals.iter().copied(), 0);
        let out = head_forward_sparse(&aggregated, &config.head, &samples)?;
        let b = &plan.boxes[idx];
        for mut d in decode_detections(&out, STRIDE, config.score_threshold)? {
            d.xc += (b.x1 * STRIDE) as f64;
            d.yc += (b.y1 * STRIDE) as f64;
            detections.push(d);
        }
    }

    let samples = SparseSampleSet::from_centers(&centers, 0);
    let cost = pipeline_cost(config, image.width(), image.height(), &plan, &samples)?;

    let (bpr, mask_precision, mask_recall) = match (scene, label) {
        (Some(sc), Some(label)) => {
            let bpr = BprResult::compute(sc, &plan, &centers, STRIDE);
            let (p, r) = mask_pr(&mask, &label, config.activation_threshold)?;
            (Some(bpr), Some(p), Some(r))
        }
        _ => (None, None, None),
    };

    Ok(PipelineRun { mask, centers, plan, detections, cost, bpr, mask_precision, mask_recall })
}

fn draw_rect(rgb: &mut [u8], w: usize, h: usize, rect: (i64, i64, i64, i64), color: [u8; 3]) {
    let (x1, y1, x2, y2) = rect;
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            let base = (y as usize * w + x as usize) * 3;
            rgb[base..base + 3].copy_from_slice(&color);
        }
    };
    for x in x1..=x2 {
        put(x, y1);
        put(x, y2);
    }
    for y in y1..=y2 {
        put(x1, y);
        put(x2, y);
    }
}

/// Writes a PPM visualisation: grayscale background, mask brightness
/// overlay, ground-truth boxes in gray, patches in yellow, detections in
/// cyan.
pub fn render_overlay(
    scene: &SceneAnnotation,
    mask: &ObjectnessMask,
    plan: &PatchPlan,
    detections: &[Detection],
    path: &Path,
) -> Result<()> {
    let (w, h) = (scene.image_w, scene.image_h);
    let (mh, mw) = (mask.grid.height(), mask.grid.width());
    let mut rgb = vec![0u8; w * h * 3];
    for y in 0..h {
        let my = (y / STRIDE).min(mh - 1);
        for x in 0..w {
            let mx = (x / STRIDE).min(mw - 1);
            let v = (40.0 + 150.0 * mask.grid.get(mx, my)) as u8;
            let base = (y * w + x) * 3;
            rgb[base] = v;
            rgb[base + 1] = v;
            rgb[base + 2] = v;
        }
    }
    for b in &scene.boxes {
        let (x1, y1, x2, y2) = b.corners();
        draw_rect(&mut rgb, w, h, (x1 as i64, y1 as i64, x2 as i64, y2 as i64), [120, 120, 120]);
    }
    for p in &plan.boxes {
        draw_rect(
            &mut rgb,
            w,
            h,
            (
                (p.x1 * STRIDE) as i64,
                (p.y1 * STRIDE) as i64,
                (p.x2 * STRIDE) as i64 - 1,
                (p.y2 * STRIDE) as i64 - 1,
            ),
            [255, 200, 0],
        );
    }
    for d in detections {
        let (x1, y1) = (d.xc - d.w / 2.0, d.yc - d.h / 2.0);
        let (x2, y2) = (d.xc + d.w / 2.0, d.yc + d.h / 2.0);
        draw_rect(&mut rgb, w, h, (x1 as i64, y1 as i64, x2 as i64, y2 as i64), [80, 200, 255]);
    }
    netpbm::write_ppm(path, w, h, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::synth::{render_scene_image, synth_scene, SynthParams};

    fn small_params() -> SynthParams {
        SynthParams { image_w: 129, image_h: 129, cluster_count_mean: 2.0, ..SynthParams::default() }
    }

    #[test]
    fn toy_config_validates() {
        let config = PipelineConfig::toy(7, 10);
        config.validate().unwrap();
        assert_eq!(config.mask_dims(513, 513).unwrap(), (65, 65));
        assert_eq!(config.mask_dims(129, 129).unwrap(), (17, 17));
    }

    #[test]
    fn oracle_run_has_full_center_recall_on_separated_scene() {
        let params = small_params();
        let scene = synth_scene(&params, 3).unwrap();
        let image = render_scene_image(&scene, params.seed);
        let config = PipelineConfig::toy(11, 10);
        let run = run_pipeline(&image, &config, Some(&scene)).unwrap();
        let bpr = run.bpr.unwrap();
        assert_eq!(bpr.bpr_ctr, 1.0, "oracle mask must recover every center");
        // oracle mask vs oracle label: perfect precision/recall
        assert_eq!((run.mask_precision.unwrap(), run.mask_recall.unwrap()), (1.0, 1.0));
    }

    #[test]
    fn greedy_and_parallel_agree_on_single_cluster() {
        // one object well inside a single uniform cell of the 17x17 mask grid
        let scene = SceneAnnotation::new(
            129,
            129,
            vec![crate::label::BoundingBox::new(60.0, 60.0, 20.0, 20.0, 1).unwrap()],
        )
        .unwrap();
        let image = render_scene_image(&scene, 1);
        let mut config = PipelineConfig::toy(13, 10);
        config.strategy = Strategy::Greedy;
        let greedy = run_pipeline(&image, &config, Some(&scene)).unwrap();
        config.strategy = Strategy::Parallel;
        let parallel = run_pipeline(&image, &config, Some(&scene)).unwrap();
        assert!(!greedy.plan.boxes.is_empty());
        assert_eq!(greedy.plan.boxes, parallel.plan.boxes);
    }

    #[test]
    fn saturated_mask_covers_grid_and_costs_match_dense() {
        // zero seeker output -> constant 0.5 mask -> everything activated
        let mut config = PipelineConfig::toy(17, 4);
        config.mask_source = MaskSource::Predicted;
        config.strategy = Strategy::Uniform;
        config.k = 3; // divides the 9x9 mask exactly, so uniform cells tile it
        config.seeker.pw.weights = vec![0.0; 32];
        config.seeker.pw.bias = vec![0.0];
        let image = FeatureStack::from_values(
            3,
            65,
            65,
            (0..3 * 65 * 65).map(|i| (i % 17) as f64 / 17.0).collect(),
        )
        .unwrap();
        let run = run_pipeline(&image, &config, None).unwrap();
        let (mh, mw) = config.mask_dims(65, 65).unwrap();
        assert_eq!((mh, mw), (9, 9));
        for y in 0..mh {
            for x in 0..mw {
                assert!(run.plan.covers(x, y), "cell ({x},{y}) uncovered");
            }
        }
        assert_eq!(run.cost.preserved_patch_ratio, 1.0);
        assert_eq!(run.cost.neck_macs, run.cost.dense_neck_macs);
    }

    #[test]
    fn oracle_mode_without_scene_is_an_error() {
        let config = PipelineConfig::toy(19, 4);
        let image = FeatureStack::zeros(3, 65, 65);
        assert!(matches!(run_pipeline(&image, &config, None), Err(Error::Parameter(_))));
    }

    #[test]
    fn detections_live_in_image_coordinates() {
        let params = small_params();
        let scene = synth_scene(&params, 1).unwrap();
        let image = render_scene_image(&scene, params.seed);
        let mut config = PipelineConfig::toy(23, 10);
        config.score_threshold = 0.01; // untrained head: accept almost anything
        let run = run_pipeline(&image, &config, Some(&scene)).unwrap();
        for d in &run.detections {
            assert!(d.xc >= 0.0 && d.xc <= 129.0 + STRIDE as f64);
            assert!(d.yc >= 0.0 && d.yc <= 129.0 + STRIDE as f64);
            assert!(d.w > 0.0 && d.h > 0.0);
            assert!(d.score >= 0.01);
        }
        assert!(run.detections.len() <= run.centers.len());
    }

    #[test]
    fn overlay_roundtrips_as_ppm() {
        let params = small_params();
        let scene = synth_scene(&params, 0).unwrap();
        let image = render_scene_image(&scene, params.seed);
        let config = PipelineConfig::toy(29, 10);
        let run = run_pipeline(&image, &config, Some(&scene)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.ppm");
        render_overlay(&scene, &run.mask, &run.plan, &run.detections, &path).unwrap();
        let back = netpbm::read_ppm(&path).unwrap();
        assert_eq!((back.width, back.height), (129, 129));
    }

    #[test]
    fn overlay_outlines_patch_at_scaled_coordinates() {
        let scene = SceneAnnotation { image_w: 64, image_h: 64, boxes: Vec::new() };
        let mask = ObjectnessMask::new(Grid2D::zeros(8, 8)).unwrap();
        let plan = crate::slicer::PatchPlan {
            strategy: Strategy::Greedy,
            k: 4,
            patch_w: 2,
            patch_h: 2,
            boxes: vec![crate::slicer::PatchBox { x1: 2, y1: 3, x2: 4, y2: 5 }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one_patch.ppm");
        render_overlay(&scene, &mask, &plan, &[], &path).unwrap();
        let raster = netpbm::read_ppm(&path).unwrap();
        let px = |x: usize, y: usize| {
            let base = (y * 64 + x) * 3;
            (raster.samples[base], raster.samples[base + 1], raster.samples[base + 2])
        };
        // box [2,4)x[3,5) scales to pixels [16,31]x[24,39]; corners are
        // outline-coloured, the interior and the far background are not
        let yellow = (255, 200, 0);
        assert_eq!(px(16, 24), yellow);
        assert_eq!(px(31, 39), yellow);
        assert_eq!(px(20, 24), yellow, "top edge");
        assert_ne!(px(20, 30), yellow, "interior untouched");
        assert_ne!(px(0, 0), yellow, "background untouched");
    }

    #[test]
    fn padding_reaches_valid_stem_dims() {
        let image = FeatureStack::zeros(3, 128, 200);
        let padded = pad_for_default_stem(&image);
        assert_eq!((padded.height(), padded.width()), (129, 201));
        let config = PipelineConfig::toy(31, 4);
        assert!(config.mask_dims(padded.width(), padded.height()).is_ok());

        let valid = FeatureStack::zeros(3, 129, 129);
        assert_eq!(pad_for_default_stem(&valid), valid);
    }

    #[test]
    fn mask_values_stay_in_range_with_label_grid() {
        let g = Grid2D::constant(4, 4, 0.3);
        assert!(ObjectnessMask::new(g).is_ok());
        let bad = Grid2D::constant(4, 4, 1.5);
        assert!(ObjectnessMask::new(bad).is_err());
    }
}
