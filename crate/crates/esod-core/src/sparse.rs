//! Detection-head evaluation restricted to sampled coordinates.
//!
//! A sparse pass produces exactly the values the dense head would produce at
//! the sampled positions. Multi-layer heads get their spatial context through
//! receptive-field back-expansion: the positions needed at each layer are the
//! next layer's positions dilated by that layer's kernel radius, so no
//! approximation is involved.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{conv2d, conv2d_at, sigmoid, Activation, ConvSpec, FeatureStack};
use crate::slicer::CenterSet;

/// Deduplicated sample coordinates in feature-map units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseSampleSet {
    coordinates: Vec<(usize, usize)>,
    pub dilation_radius: usize,
}

impl SparseSampleSet {
    /// Keeps the first occurrence of each coordinate, preserving order.
    pub fn new(coords: impl IntoIterator<Item = (usize, usize)>, dilation_radius: usize) -> Self {
        let mut seen = std::collections::HashSet::new();
        let coordinates = coords.into_iter().filter(|c| seen.insert(*c)).collect();
        SparseSampleSet { coordinates, dilation_radius }
    }

    pub fn from_centers(centers: &CenterSet, dilation_radius: usize) -> Self {
        Self::new(centers.centers.iter().map(|c| (c.x, c.y)), dilation_radius)
    }

    /// Every position of an `h x w` grid, row-major.
    pub fn all_positions(height: usize, width: usize) -> Self {
        let mut coordinates = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                coordinates.push((x, y));
            }
        }
        SparseSampleSet { coordinates, dilation_radius: 0 }
    }

    pub fn coordinates(&self) -> &[(usize, usize)] {
        &self.coordinates
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        for &(x, y) in &self.coordinates {
            if x >= width || y >= height {
                return Err(Error::parameter(format!(
                    "sample ({x},{y}) outside {width}x{height} grid"
                )));
            }
        }
        Ok(())
    }
}

/// Per-coordinate output vectors, aligned with `coordinates`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOutput {
    pub coordinates: Vec<(usize, usize)>,
    pub channels: usize,
    values: Vec<f64>,
}

impl SparseOutput {
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }
}

/// Chebyshev-ball expansion of a coordinate list, clipped in-bounds and
/// deduplicated in deterministic (source, then row-major offset) order.
fn expand_coords(
    coords: &[(usize, usize)],
    radius: usize,
    height: usize,
    width: usize,
) -> Vec<(usize, usize)> {
    if radius == 0 {
        return coords.to_vec();
    }
    let r = radius as isize;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &(x, y) in coords {
        for dy in -r..=r {
            let yy = y as isize + dy;
            if yy < 0 || yy >= height as isize {
                continue;
            }
            for dx in -r..=r {
                let xx = x as isize + dx;
                if xx < 0 || xx >= width as isize {
                    continue;
                }
                let c = (xx as usize, yy as usize);
                if seen.insert(c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

fn require_same_padding(spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if !spec.is_same_padding() {
        return Err(Error::parameter(
            "sparse evaluation requires stride-1 same-padding layers".to_string(),
        ));
    }
    Ok(())
}

/// Evaluates one convolution layer only at the sampled positions (after
/// dilation expansion); each value equals the dense output at that position.
pub fn sparse_conv_at(
    features: &FeatureStack,
    spec: &ConvSpec,
    samples: &SparseSampleSet,
) -> Result<SparseOutput> {
    require_same_padding(spec)?;
    if spec.in_channels != features.channels() {
        return Err(Error::shape(format!(
            "spec expects {} channels, features have {}",
            spec.in_channels,
            features.channels()
        )));
    }
    let (h, w) = (features.height(), features.width());
    samples.check_bounds(h, w)?;
    let coords = expand_coords(samples.coordinates(), samples.dilation_radius, h, w);
    let mut values = Vec::with_capacity(coords.len() * spec.out_channels);
    for &(x, y) in &coords {
        values.extend(conv2d_at(features, spec, x, y));
    }
    Ok(SparseOutput { coordinates: coords, channels: spec.out_channels, values })
}

fn check_chain(features: &FeatureStack, head: &[ConvSpec]) -> Result<()> {
    if head.is_empty() {
        return Err(Error::parameter("head must have at least one layer"));
    }
    let mut channels = features.channels();
    for (i, spec) in head.iter().enumerate() {
        require_same_padding(spec)?;
        if spec.in_channels != channels {
            return Err(Error::shape(format!(
                "head layer {i} expects {} channels, got {channels}",
                spec.in_channels
            )));
        }
        channels = spec.out_channels;
    }
    Ok(())
}

/// Dense reference path: the full conv chain with ReLU between layers (none
/// after the last, which produces logits).
pub fn head_forward_dense(features: &FeatureStack, head: &[ConvSpec]) -> Result<FeatureStack> {
    check_chain(features, head)?;
    let mut current = features.clone();
    for (i, spec) in head.iter().enumerate() {
        current = conv2d(&current, spec)?;
        if i + 1 < head.len() {
            current = current.pointwise(Activation::Relu);
        }
    }
    Ok(current)
}

/// Output positions needed at every layer to produce `samples` at the last
/// one; index 0 is the first layer applied.
pub(crate) fn needed_positions(
    head: &[ConvSpec],
    samples: &SparseSampleSet,
    height: usize,
    width: usize,
) -> Vec<Vec<(usize, usize)>> {
    let n = head.len();
    let mut needed: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    needed[n - 1] = expand_coords(samples.coordinates(), samples.dilation_radius, height, width);
    for i in (0..n - 1).rev() {
        let radius = (head[i + 1].kernel_h - 1) / 2;
        needed[i] = expand_coords(&needed[i + 1], radius, height, width);
    }
    needed
}

/// How many positions each layer must evaluate for a given sample set; feeds
/// the sparse-head cost model.
pub fn receptive_field_counts(
    head: &[ConvSpec],
    samples: &SparseSampleSet,
    height: usize,
    width: usize,
) -> Result<Vec<usize>> {
    if head.is_empty() {
        return Err(Error::parameter("head must have at least one layer"));
    }
    samples.check_bounds(height, width)?;
    Ok(needed_positions(head, samples, height, width).iter().map(Vec::len).collect())
}

/// Sparse head pass: equals [`head_forward_dense`] at the sampled
/// coordinates.
pub fn head_forward_sparse(
    features: &FeatureStack,
    head: &[ConvSpec],
    samples: &SparseSampleSet,
) -> Result<SparseOutput> {
    check_chain(features, head)?;
    let (h, w) = (features.height(), features.width());
    samples.check_bounds(h, w)?;
    if samples.is_empty() {
        return Ok(SparseOutput {
            coordinates: Vec::new(),
            channels: head.last().unwrap().out_channels,
            values: Vec::new(),
        });
    }
    let needed = needed_positions(head, samples, h, w);

    // layer 0 reads the dense features directly
    let mut current: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let last = head.len() - 1;
    for &(x, y) in &needed[0] {
        let mut v = conv2d_at(features, &head[0], x, y);
        if last > 0 {
            for e in &mut v {
                *e = e.max(0.0);
            }
        }
        current.insert((x, y), v);
    }

    for (i, spec) in head.iter().enumerate().skip(1) {
        let pad = spec.padding as isize;
        let mut next: HashMap<(usize, usize), Vec<f64>> =
            HashMap::with_capacity(needed[i].len());
        for &(x, y) in &needed[i] {
            // gather the window once; back-expansion guarantees every
            // in-bounds tap was computed by the previous layer
            let mut taps: Vec<Option<&Vec<f64>>> =
                vec![None; spec.kernel_h * spec.kernel_w];
            for ky in 0..spec.kernel_h {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..spec.kernel_w {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let tap = current
                        .get(&(ix as usize, iy as usize))
                        .expect("receptive-field expansion covers all taps");
                    taps[ky * spec.kernel_w + kx] = Some(tap);
                }
            }
            // accumulate in the dense path's (oc, ic, ky, kx) order so the
            // two paths agree bit for bit
            let mut acc = Vec::with_capacity(spec.out_channels);
            for oc in 0..spec.out_channels {
                let mut sum = spec.bias[oc];
                for ic in 0..spec.in_channels {
                    for ky in 0..spec.kernel_h {
                        for kx in 0..spec.kernel_w {
                            if let Some(tap) = taps[ky * spec.kernel_w + kx] {
                                sum += spec.weights[((oc * spec.in_channels + ic)
                                    * spec.kernel_h
                                    + ky)
                                    * spec.kernel_w
                                    + kx]
                                    * tap[ic];
                            }
                        }
                    }
                }
                acc.push(sum);
            }
            if i < last {
                for e in &mut acc {
                    *e = e.max(0.0);
                }
            }
            next.insert((x, y), acc);
        }
        current = next;
    }

    let coords = needed[last].clone();
    let channels = head[last].out_channels;
    let mut values = Vec::with_capacity(coords.len() * channels);
    for c in &coords {
        values.extend_from_slice(&current[c]);
    }
    Ok(SparseOutput { coordinates: coords, channels, values })
}

/// A decoded object prediction in image units.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub category: usize,
}

impl Detection {
    /// One-line text form: `xc yc w h score category`.
    pub fn to_line(&self) -> String {
        format!("{} {} {} {} {} {}", self.xc, self.yc, self.w, self.h, self.score, self.category)
    }
}

/// Decodes raw head outputs at sampled centers into detections.
///
/// Channel layout: `(objectness-logit, dw, dh, dx, dy, class-logits...)`.
/// The cell offset is bounded by `tanh`, the size exponent clamped to `±4`.
pub fn decode_detections(
    out: &SparseOutput,
    stride: usize,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    if out.channels < 6 {
        return Err(Error::shape(format!(
            "decoder needs 5 box channels plus at least one class, got {}",
            out.channels
        )));
    }
    let mut detections = Vec::new();
    for (i, &(x, y)) in out.coordinates.iter().enumerate() {
        let v = out.vector(i);
        let score = sigmoid(v[0]);
        if score < score_threshold {
            continue;
        }
        let (dw, dh, dx, dy) = (v[1], v[2], v[3], v[4]);
        let category = v[5..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(idx, _)| idx)
            .unwrap();
        detections.push(Detection {
            xc: (x as f64 + 0.5 + dx.tanh()) * stride as f64,
            yc: (y as f64 + 0.5 + dy.tanh()) * stride as f64,
            w: dw.clamp(-4.0, 4.0).exp() * stride as f64,
            h: dh.clamp(-4.0, 4.0).exp() * stride as f64,
            score,
            category,
        });
    }
    Ok(detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureStack {
        let values = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureStack::from_values(c, h, w, values).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> ConvSpec {
        ConvSpec {
            in_channels: c_in,
            out_channels: c_out,
            kernel_h: k,
            kernel_w: k,
            stride: 1,
            padding: (k - 1) / 2,
            weights: (0..c_out * c_in * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn full_sampling_equals_dense_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features = random_stack(&mut rng, 3, 6, 7);
        let spec = random_layer(&mut rng, 3, 4, 3);
        let all = SparseSampleSet::all_positions(6, 7);
        let sparse = sparse_conv_at(&features, &spec, &all).unwrap();
        let dense = conv2d(&features, &spec).unwrap();
        for (i, &(x, y)) in sparse.coordinates.iter().enumerate() {
            for oc in 0..4 {
                assert_eq!(sparse.vector(i)[oc], dense.get(oc, x, y));
            }
        }
    }

    #[test]
    fn single_sample_matches_dense_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let features = random_stack(&mut rng, 5, 8, 8);
        let spec = random_layer(&mut rng, 5, 2, 5);
        let samples = SparseSampleSet::new([(3, 4)], 0);
        let sparse = sparse_conv_at(&features, &spec, &samples).unwrap();
        let dense = conv2d(&features, &spec).unwrap();
        assert_eq!(sparse.len(), 1);
        for oc in 0..2 {
            assert!((sparse.vector(0)[oc] - dense.get(oc, 3, 4)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_samples_empty_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let features = random_stack(&mut rng, 2, 4, 4);
        let spec = random_layer(&mut rng, 2, 2, 3);
        let out = sparse_conv_at(&features, &spec, &SparseSampleSet::new([], 0)).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn out_of_bounds_sample_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let features = random_stack(&mut rng, 2, 4, 4);
        let spec = random_layer(&mut rng, 2, 2, 3);
        let samples = SparseSampleSet::new([(4, 0)], 0);
        assert!(matches!(sparse_conv_at(&features, &spec, &samples), Err(Error::Parameter(_))));
    }

    #[test]
    fn dilation_expands_and_dedups() {
        let samples = SparseSampleSet::new([(1, 1), (2, 1)], 1);
        let coords = expand_coords(samples.coordinates(), 1, 4, 4);
        assert_eq!(coords.len(), 12); // two overlapping 3x3 balls
        let unique: std::collections::HashSet<_> = coords.iter().collect();
        assert_eq!(unique.len(), coords.len());
    }

    #[test]
    fn pointwise_head_trivially_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = random_stack(&mut rng, 3, 5, 5);
        let head = vec![random_layer(&mut rng, 3, 6, 1)];
        let samples = SparseSampleSet::new([(0, 0), (4, 4), (2, 3)], 0);
        let sparse = head_forward_sparse(&features, &head, &samples).unwrap();
        let dense = head_forward_dense(&features, &head).unwrap();
        for (i, &(x, y)) in sparse.coordinates.iter().enumerate() {
            for oc in 0..6 {
                assert_eq!(sparse.vector(i)[oc], dense.get(oc, x, y));
            }
        }
    }

    #[test]
    fn stacked_3x3_layers_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let features = random_stack(&mut rng, 4, 9, 9);
        let head = vec![random_layer(&mut rng, 4, 5, 3), random_layer(&mut rng, 5, 3, 3)];
        let samples = SparseSampleSet::new([(4, 4)], 0);
        let sparse = head_forward_sparse(&features, &head, &samples).unwrap();
        let dense = head_forward_dense(&features, &head).unwrap();
        for oc in 0..3 {
            assert!((sparse.vector(0)[oc] - dense.get(oc, 4, 4)).abs() < 1e-12);
        }
    }

    #[test]
    fn all_positions_bit_identical_to_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let features = random_stack(&mut rng, 3, 6, 6);
        let head = vec![random_layer(&mut rng, 3, 4, 3), random_layer(&mut rng, 4, 7, 1)];
        let samples = SparseSampleSet::all_positions(6, 6);
        let sparse = head_forward_sparse(&features, &head, &samples).unwrap();
        let dense = head_forward_dense(&features, &head).unwrap();
        for (i, &(x, y)) in sparse.coordinates.iter().enumerate() {
            for oc in 0..7 {
                assert_eq!(sparse.vector(i)[oc], dense.get(oc, x, y), "at ({x},{y}) ch {oc}");
            }
        }
    }

    #[test]
    fn receptive_field_counts_grow_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = vec![random_layer(&mut rng, 2, 2, 3), random_layer(&mut rng, 2, 2, 3)];
        let samples = SparseSampleSet::new([(8, 8)], 0);
        let counts = receptive_field_counts(&head, &samples, 17, 17).unwrap();
        assert_eq!(counts, vec![9, 1]);
    }

    #[test]
    fn decode_threshold_and_formula() {
        let out = SparseOutput {
            coordinates: vec![(2, 3), (5, 5)],
            channels: 7,
            values: vec![
                // sample (2,3): strong objectness, neutral box, class 1 wins
                3.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0,
                // sample (5,5): far below threshold
                -10.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5,
            ],
        };
        let dets = decode_detections(&out, 8, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!((d.xc, d.yc), (20.0, 28.0));
        assert_eq!((d.w, d.h), (8.0, 8.0));
        assert_eq!(d.category, 1);
        assert!(d.score >= 0.5);

        let none = SparseOutput {
            coordinates: vec![(0, 0)],
            channels: 7,
            values: vec![-10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        assert!(decode_detections(&none, 8, 0.5).unwrap().is_empty());
    }

    #[test]
    fn decode_rejects_thin_channels() {
        let out = SparseOutput { coordinates: vec![(0, 0)], channels: 5, values: vec![0.0; 5] };
        assert!(matches!(decode_detections(&out, 8, 0.5), Err(Error::Shape(_))));
    }
}
