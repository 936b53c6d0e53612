//! Deterministic synthetic scenes with sparse, locally clustered objects.
//!
//! The generator mimics aerial-survey statistics: a handful of clusters per
//! image, each holding a dozen small objects, leaving most of the image
//! empty. Object centers keep a minimum separation so that every object
//! produces its own resolvable peak on the 1/8-resolution mask grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::grid::FeatureStack;
use crate::label::BoundingBox;
use crate::metrics::SceneAnnotation;

/// Generator parameters; output is a pure function of these.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub image_w: usize,
    pub image_h: usize,
    pub cluster_count_mean: f64,
    pub objects_per_cluster_mean: f64,
    /// Uniform object side range, pixels.
    pub object_size_range: (f64, f64),
    /// Std-dev of object centers around their cluster center, pixels.
    pub cluster_spread: f64,
    /// Minimum distance between any two object centers, pixels.
    pub min_center_separation: f64,
    /// Categories drawn uniformly from `1..=categories`.
    pub categories: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 42,
            image_w: 513,
            image_h: 513,
            cluster_count_mean: 3.5,
            objects_per_cluster_mean: 18.0,
            object_size_range: (14.0, 34.0),
            cluster_spread: 24.0,
            min_center_separation: 26.0,
            categories: 10,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::parameter("image dimensions must be positive"));
        }
        let (lo, hi) = self.object_size_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::parameter("object size range must be positive and ordered"));
        }
        if hi > self.image_w as f64 || hi > self.image_h as f64 {
            return Err(Error::parameter("object size exceeds image dimensions"));
        }
        if self.cluster_count_mean <= 0.0 || self.objects_per_cluster_mean <= 0.0 {
            return Err(Error::parameter("cluster means must be positive"));
        }
        if self.cluster_spread <= 0.0 || self.min_center_separation < 0.0 {
            return Err(Error::parameter("spread must be positive, separation non-negative"));
        }
        if self.categories == 0 {
            return Err(Error::parameter("need at least one category"));
        }
        Ok(())
    }
}

/// Generates `n` scenes; scene `i` depends only on `params.seed` and `i`.
pub fn synth_scenes(params: &SynthParams, n: usize) -> Result<Vec<SceneAnnotation>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::parameter("scene count must be positive"));
    }
    (0..n).map(|i| synth_scene(params, i)).collect()
}

/// Generates the `index`-th scene of the stream.
pub fn synth_scene(params: &SynthParams, index: usize) -> Result<SceneAnnotation> {
    params.validate()?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(params.seed.wrapping_add((index as u64).wrapping_mul(0x9E3779B97F4A7C15)));
    let (w, h) = (params.image_w as f64, params.image_h as f64);

    let clusters = Poisson::new(params.cluster_count_mean)
        .map_err(|e| Error::parameter(e.to_string()))?
        .sample(&mut rng) as usize;
    let per_cluster = Poisson::new(params.objects_per_cluster_mean)
        .map_err(|e| Error::parameter(e.to_string()))?;
    let scatter =
        Normal::new(0.0, params.cluster_spread).map_err(|e| Error::parameter(e.to_string()))?;

    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut boxes = Vec::new();
    for _ in 0..clusters {
        let cx = rng.gen_range(0.0..w);
        let cy = rng.gen_range(0.0..h);
        let count = per_cluster.sample(&mut rng) as usize;
        for _ in 0..count {
            let mut placed = None;
            for _ in 0..20 {
                let ox = (cx + scatter.sample(&mut rng)).clamp(0.0, w - 1.0);
                let oy = (cy + scatter.sample(&mut rng)).clamp(0.0, h - 1.0);
                let sep = params.min_center_separation;
                let clear = centers
                    .iter()
                    .all(|&(px, py)| (px - ox).hypot(py - oy) >= sep);
                if clear {
                    placed = Some((ox, oy));
                    break;
                }
            }
            let Some((ox, oy)) = placed else {
                continue; // crowded neighbourhood, drop the object
            };
            let (lo, hi) = params.object_size_range;
            let bw = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let bh = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let category = rng.gen_range(1..=params.categories) as i32;
            centers.push((ox, oy));
            boxes.push(BoundingBox::new(ox, oy, bw, bh, category)?);
        }
    }
    SceneAnnotation::new(params.image_w, params.image_h, boxes)
}

/// Stateless per-pixel hash noise in [0,1).
fn hash_noise(x: usize, y: usize, c: usize, seed: u64) -> f64 {
    let mut v = seed
        ^ (x as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (y as u64).wrapping_mul(0xC2B2AE3D27D4EB4F)
        ^ (c as u64).wrapping_mul(0x165667B19E3779F9);
    v ^= v >> 33;
    v = v.wrapping_mul(0xFF51AFD7ED558CCD);
    v ^= v >> 33;
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Renders a scene as a 3-channel image in [0,1]: textured background with
/// each object drawn as a filled rectangle tinted by its category.
pub fn render_scene_image(scene: &SceneAnnotation, seed: u64) -> FeatureStack {
    let (w, h) = (scene.image_w, scene.image_h);
    let mut stack = FeatureStack::zeros(3, h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                stack.set(c, x, y, 0.12 + 0.08 * hash_noise(x, y, c, seed));
            }
        }
    }
    for b in &scene.boxes {
        let (x1, y1, x2, y2) = b.corners();
        let (x1, y1) = (x1.max(0.0) as usize, y1.max(0.0) as usize);
        let (x2, y2) = ((x2.min(w as f64)).ceil() as usize, (y2.min(h as f64)).ceil() as usize);
        let cat = b.category.max(0) as u64;
        let tint = [
            0.45 + 0.05 * ((cat * 7) % 11) as f64 / 11.0 + 0.25 * hash_noise(cat as usize, 0, 0, seed),
            0.45 + 0.05 * ((cat * 13) % 11) as f64 / 11.0 + 0.25 * hash_noise(cat as usize, 1, 1, seed),
            0.45 + 0.05 * ((cat * 29) % 11) as f64 / 11.0 + 0.25 * hash_noise(cat as usize, 2, 2, seed),
        ];
        for (c, &base) in tint.iter().enumerate() {
            for y in y1..y2.min(h) {
                for x in x1..x2.min(w) {
                    let speckle = 0.08 * hash_noise(x, y, c + 3, seed);
                    stack.set(c, x, y, (base + speckle).min(1.0));
                }
            }
        }
    }
    stack
}
