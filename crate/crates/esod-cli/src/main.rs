//! `esod`: batch driver for objectness-driven feature slicing.
//!
//! Subcommands: `synth` (generate scenes), `stats` (dataset statistics),
//! `run` (full pipeline), `slice` (mask in, plan out), `report` (aggregate
//! run reports). Configuration comes from an optional `key = value` file;
//! command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use esod_core::grid::FeatureStack;
use esod_core::label::load_mask_pgm;
use esod_core::metrics::{patch_emptiness, pixel_occupancy, SceneAnnotation};
use esod_core::netpbm;
use esod_core::pipeline::{
    oracle_mask, pad_for_default_stem, render_overlay, run_pipeline, MaskSource, PipelineConfig,
};
use esod_core::report::{ImageReport, RunReport};
use esod_core::seeker::ObjectnessMask;
use esod_core::slicer::{
    activation, local_maxima, slice_greedy, slice_parallel, slice_uniform, Strategy,
};
use esod_core::synth::{render_scene_image, synth_scene, SynthParams};
use esod_core::visdrone::{parse_visdrone, write_visdrone};

#[derive(Parser)]
#[command(name = "esod", version, about = "Objectness-driven feature slicing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Key = value configuration file; flags given here win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed for network weights and scene synthesis.
    #[arg(long)]
    seed: Option<u64>,
    /// Patch-grid divisor.
    #[arg(long)]
    k: Option<usize>,
    /// Gaussian label threshold at box corners.
    #[arg(long)]
    tau: Option<f64>,
    /// Mask activation threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Slicing strategy: uniform | greedy | parallel.
    #[arg(long)]
    strategy: Option<String>,
    /// Mask driving the slicer: predicted | oracle.
    #[arg(long = "mask-source")]
    mask_source: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes: annotations, images and oracle masks.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of scenes.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Also write oracle objectness masks as PGM.
        #[arg(long)]
        masks: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset sparsity statistics (synthetic or annotation files).
    Stats {
        #[command(flatten)]
        common: CommonOpts,
        /// Evaluate N synthetic scenes instead of annotation files.
        #[arg(long)]
        synth: Option<usize>,
        /// Annotation files to analyse.
        #[arg(long = "ann", num_args = 1..)]
        ann: Vec<PathBuf>,
        /// Annotation format.
        #[arg(long = "ann-format", default_value = "visdrone")]
        ann_format: String,
        /// Image size WxH the annotations refer to.
        #[arg(long = "image-size")]
        image_size: Option<String>,
    },
    /// Run the pipeline over synthetic scenes or PPM images.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Process N synthetic scenes.
        #[arg(long)]
        synth: Option<usize>,
        /// PPM images to process.
        #[arg(long = "image", num_args = 1..)]
        images: Vec<PathBuf>,
        /// Annotation files paired with --image (same order).
        #[arg(long = "ann", num_args = 1..)]
        ann: Vec<PathBuf>,
        /// Annotation format.
        #[arg(long = "ann-format", default_value = "visdrone")]
        ann_format: String,
        /// Skip overlay rendering.
        #[arg(long = "no-overlays")]
        no_overlays: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Slice a PGM objectness mask into a patch plan.
    Slice {
        #[command(flatten)]
        common: CommonOpts,
        /// Input mask (PGM, values scaled to [0,1]).
        #[arg(long)]
        mask: PathBuf,
        /// Output plan file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge run reports and print the combined aggregate.
    Report {
        /// Report files to merge.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write the merged report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Everything the subcommands need, resolved from defaults, the config file
/// and flag overrides (in that order).
#[derive(Debug, Clone)]
struct Settings {
    seed: u64,
    k: usize,
    tau: f64,
    threshold: f64,
    score_threshold: f64,
    strategy: Strategy,
    mask_source: MaskSource,
    num_categories: usize,
    synth: SynthParams,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 42,
            k: 8,
            tau: 0.5,
            threshold: 0.5,
            score_threshold: 0.5,
            strategy: Strategy::Greedy,
            mask_source: MaskSource::Oracle,
            num_categories: 10,
            synth: SynthParams::default(),
        }
    }
}

impl Settings {
    fn resolve(common: &CommonOpts) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &common.config {
            s.apply_config_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        if let Some(seed) = common.seed {
            s.seed = seed;
        }
        if let Some(k) = common.k {
            s.k = k;
        }
        if let Some(tau) = common.tau {
            s.tau = tau;
        }
        if let Some(threshold) = common.threshold {
            s.threshold = threshold;
        }
        if let Some(strategy) = &common.strategy {
            s.strategy = Strategy::parse(strategy)?;
        }
        if let Some(source) = &common.mask_source {
            s.mask_source = MaskSource::parse(source)?;
        }
        s.synth.seed = s.seed;
        Ok(s)
    }

    fn apply_config_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got {raw:?}", idx + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}: bad value for {key}", idx + 1);
            match key {
                "seed" => self.seed = value.parse().with_context(ctx)?,
                "k" => self.k = value.parse().with_context(ctx)?,
                "tau" => self.tau = value.parse().with_context(ctx)?,
                "threshold" => self.threshold = value.parse().with_context(ctx)?,
                "score_threshold" => self.score_threshold = value.parse().with_context(ctx)?,
                "strategy" => self.strategy = Strategy::parse(value)?,
                "mask_source" => self.mask_source = MaskSource::parse(value)?,
                "num_categories" => self.num_categories = value.parse().with_context(ctx)?,
                "image_w" => self.synth.image_w = value.parse().with_context(ctx)?,
                "image_h" => self.synth.image_h = value.parse().with_context(ctx)?,
                "cluster_count_mean" => {
                    self.synth.cluster_count_mean = value.parse().with_context(ctx)?
                }
                "objects_per_cluster_mean" => {
                    self.synth.objects_per_cluster_mean = value.parse().with_context(ctx)?
                }
                "object_size_min" => {
                    self.synth.object_size_range.0 = value.parse().with_context(ctx)?
                }
                "object_size_max" => {
                    self.synth.object_size_range.1 = value.parse().with_context(ctx)?
                }
                "cluster_spread" => self.synth.cluster_spread = value.parse().with_context(ctx)?,
                "min_separation" => {
                    self.synth.min_center_separation = value.parse().with_context(ctx)?
                }
                "categories" => self.synth.categories = value.parse().with_context(ctx)?,
                other => bail!("line {}: unknown config key {other:?}", idx + 1),
            }
        }
        Ok(())
    }

    fn pipeline_config(&self) -> PipelineConfig {
        let mut config = PipelineConfig::toy(self.seed, self.num_categories);
        config.k = self.k;
        config.tau = self.tau;
        config.activation_threshold = self.threshold;
        config.score_threshold = self.score_threshold;
        config.strategy = self.strategy;
        config.mask_source = self.mask_source;
        config
    }
}

fn parse_image_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("expected WxH, got {s:?}"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn stack_to_ppm(stack: &FeatureStack, path: &Path) -> Result<()> {
    let (w, h) = (stack.width(), stack.height());
    let mut rgb = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (stack.get(c.min(stack.channels() - 1), x, y) * 255.0).round();
                rgb[(y * w + x) * 3 + c] = v.clamp(0.0, 255.0) as u8;
            }
        }
    }
    netpbm::write_ppm(path, w, h, &rgb)?;
    Ok(())
}

fn ppm_to_stack(path: &Path) -> Result<FeatureStack> {
    let raster = netpbm::read_ppm(path)?;
    let (w, h) = (raster.width, raster.height);
    let maxval = raster.maxval as f64;
    let mut stack = FeatureStack::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                stack.set(c, x, y, raster.samples[(y * w + x) * 3 + c] as f64 / maxval);
            }
        }
    }
    Ok(stack)
}

fn cmd_synth(common: &CommonOpts, count: usize, masks: bool, out: &Path) -> Result<()> {
    let settings = Settings::resolve(common)?;
    std::fs::create_dir_all(out)?;
    let config = settings.pipeline_config();
    for i in 0..count {
        let scene = synth_scene(&settings.synth, i)?;
        write_visdrone(&out.join(format!("scene_{i:04}.txt")), &scene)?;
        let image = render_scene_image(&scene, settings.synth.seed);
        stack_to_ppm(&image, &out.join(format!("scene_{i:04}.ppm")))?;
        if masks {
            let (mh, mw) = config.mask_dims(scene.image_w, scene.image_h)?;
            let mask = oracle_mask(&scene, mh, mw, settings.tau)?;
            esod_core::label::save_mask_pgm(
                &out.join(format!("scene_{i:04}.pgm")),
                &mask,
                255,
            )?;
        }
    }
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn scene_stats(scenes: &[SceneAnnotation], k: usize) -> Result<()> {
    let n = scenes.len().max(1) as f64;
    let objects: usize = scenes.iter().map(|s| s.boxes.len()).sum();
    let occupancy: f64 = scenes.iter().map(pixel_occupancy).sum::<f64>() / n;
    let mut emptiness = 0.0;
    for sc in scenes {
        emptiness += patch_emptiness(sc, k)?;
    }
    println!("scenes {}", scenes.len());
    println!("mean_objects {}", objects as f64 / n);
    println!("mean_pixel_occupancy {occupancy}");
    println!("mean_patch_emptiness_k{k} {}", emptiness / n);
    Ok(())
}

fn cmd_stats(
    common: &CommonOpts,
    synth: Option<usize>,
    ann: &[PathBuf],
    ann_format: &str,
    image_size: Option<&str>,
) -> Result<()> {
    let settings = Settings::resolve(common)?;
    if ann_format != "visdrone" {
        bail!("unsupported annotation format {ann_format:?}");
    }
    let scenes: Vec<SceneAnnotation> = if let Some(n) = synth {
        (0..n).map(|i| synth_scene(&settings.synth, i)).collect::<esod_core::Result<_>>()?
    } else {
        if ann.is_empty() {
            bail!("provide --synth N or --ann FILE...");
        }
        let (w, h) = match image_size {
            Some(s) => parse_image_size(s)?,
            None => (settings.synth.image_w, settings.synth.image_h),
        };
        ann.iter()
            .map(|p| parse_visdrone(p, w, h).with_context(|| p.display().to_string()))
            .collect::<Result<_>>()?
    };
    scene_stats(&scenes, settings.k)
}

struct RunInput {
    name: String,
    image: FeatureStack,
    scene: Option<SceneAnnotation>,
}

fn cmd_run(
    common: &CommonOpts,
    synth: Option<usize>,
    images: &[PathBuf],
    ann: &[PathBuf],
    ann_format: &str,
    no_overlays: bool,
    out: &Path,
) -> Result<()> {
    let settings = Settings::resolve(common)?;
    if ann_format != "visdrone" {
        bail!("unsupported annotation format {ann_format:?}");
    }
    std::fs::create_dir_all(out)?;
    let config = settings.pipeline_config();

    let mut inputs: Vec<RunInput> = Vec::new();
    if let Some(n) = synth {
        for i in 0..n {
            let scene = synth_scene(&settings.synth, i)?;
            let image = render_scene_image(&scene, settings.synth.seed);
            inputs.push(RunInput { name: format!("scene_{i:04}"), image, scene: Some(scene) });
        }
    } else {
        if images.is_empty() {
            bail!("provide --synth N or --image FILE...");
        }
        if !ann.is_empty() && ann.len() != images.len() {
            bail!("--ann count must match --image count");
        }
        for (idx, path) in images.iter().enumerate() {
            let image = ppm_to_stack(path).with_context(|| path.display().to_string())?;
            let scene = match ann.get(idx) {
                Some(a) => Some(
                    parse_visdrone(a, image.width(), image.height())
                        .with_context(|| a.display().to_string())?,
                ),
                None => None,
            };
            let name = path.file_stem().map_or_else(
                || format!("image_{idx:04}"),
                |s| s.to_string_lossy().into_owned(),
            );
            inputs.push(RunInput { name, image: pad_for_default_stem(&image), scene });
        }
    }

    let mut report = RunReport::default();
    for (idx, input) in inputs.iter().enumerate() {
        let run = run_pipeline(&input.image, &config, input.scene.as_ref())
            .with_context(|| format!("processing {}", input.name))?;
        run.plan.save(&out.join(format!("plan_{idx:04}.txt")))?;
        let det_lines: String =
            run.detections.iter().map(|d| d.to_line() + "\n").collect();
        std::fs::write(out.join(format!("detections_{idx:04}.txt")), det_lines)?;
        if !no_overlays {
            let scene_for_overlay = input.scene.clone().unwrap_or(SceneAnnotation {
                image_w: input.image.width(),
                image_h: input.image.height(),
                boxes: Vec::new(),
            });
            render_overlay(
                &scene_for_overlay,
                &run.mask,
                &run.plan,
                &run.detections,
                &out.join(format!("overlay_{idx:04}.ppm")),
            )?;
        }
        report.entries.push(ImageReport::from_run(&input.name, &run));
    }
    report.save(&out.join("report.txt"))?;

    let agg = report.aggregate();
    println!("processed {} images -> {}", agg.count, out.join("report.txt").display());
    if let Some(r) = agg.mean_neck_head_ratio {
        println!("mean neck+head MACs vs dense: {r:.4}");
    }
    if let (Some(b), Some(c)) = (agg.mean_bpr_box, agg.mean_bpr_ctr) {
        println!("mean BPR box {b:.4} ctr {c:.4}");
    }
    Ok(())
}

fn cmd_slice(common: &CommonOpts, mask_path: &Path, out: &Path) -> Result<()> {
    let settings = Settings::resolve(common)?;
    let mask = load_mask_pgm(mask_path).with_context(|| mask_path.display().to_string())?;
    let mask = ObjectnessMask::new(mask.grid).map_err(anyhow::Error::from)?;
    let plan = match settings.strategy {
        Strategy::Uniform => {
            let act = activation(&mask, settings.threshold)?;
            let centers = local_maxima(&mask, &act)?;
            slice_uniform(&act, &centers, settings.k)?
        }
        Strategy::Greedy => slice_greedy(&mask, settings.k, settings.threshold)?,
        Strategy::Parallel => slice_parallel(&mask, settings.k, settings.threshold)?,
    };
    plan.save(out)?;
    println!("{} patches ({}x{}) -> {}", plan.boxes.len(), plan.patch_w, plan.patch_h, out.display());
    Ok(())
}

fn cmd_report(files: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports = files
        .iter()
        .map(|p| RunReport::load(p).with_context(|| p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let merged = RunReport::merged(reports);
    if let Some(path) = out {
        merged.save(path)?;
    }
    let agg = merged.aggregate();
    println!("images {}", agg.count);
    let show = |name: &str, v: Option<f64>| match v {
        Some(v) => println!("{name} {v}"),
        None => println!("{name} null"),
    };
    show("mean_patch_count", agg.mean_patch_count);
    show("mean_preserved_ratio", agg.mean_preserved_ratio);
    show("mean_bpr_box", agg.mean_bpr_box);
    show("mean_bpr_ctr", agg.mean_bpr_ctr);
    show("mean_mask_precision", agg.mean_mask_precision);
    show("mean_mask_recall", agg.mean_mask_recall);
    show("mean_sliced_total_macs", agg.mean_sliced_total_macs);
    show("mean_dense_total_macs", agg.mean_dense_total_macs);
    show("mean_neck_head_ratio", agg.mean_neck_head_ratio);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { common, count, masks, out } => cmd_synth(common, *count, *masks, out),
        Command::Stats { common, synth, ann, ann_format, image_size } => {
            cmd_stats(common, *synth, ann, ann_format, image_size.as_deref())
        }
        Command::Run { common, synth, images, ann, ann_format, no_overlays, out } => {
            cmd_run(common, *synth, images, ann, ann_format, *no_overlays, out)
        }
        Command::Slice { common, mask, out } => cmd_slice(common, mask, out),
        Command::Report { files, out } => cmd_report(files, out.as_deref()),
    }
}
