//! Where the time goes: dense kernels, the three slicing strategies, and
//! sparse vs dense head evaluation.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use esod_core::grid::{conv2d, ConvSpec, FeatureStack};
use esod_core::pipeline::{oracle_mask, run_pipeline, MaskSource, PipelineConfig};
use esod_core::seeker::{seek, ObjectnessMask, SeekerParams};
use esod_core::slicer::{
    activation, local_maxima, slice_greedy, slice_parallel, slice_uniform,
};
use esod_core::sparse::{head_forward_dense, head_forward_sparse, SparseSampleSet};
use esod_core::synth::{render_scene_image, synth_scene, SynthParams};

fn random_stack(seed: u64, c: usize, h: usize, w: usize) -> FeatureStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureStack::from_values(c, h, w, values).unwrap()
}

fn random_layer(seed: u64, c_in: usize, c_out: usize, k: usize) -> ConvSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ConvSpec {
        in_channels: c_in,
        out_channels: c_out,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        padding: (k - 1) / 2,
        weights: (0..c_out * c_in * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: vec![0.0; c_out],
    }
}

fn oracle_mask_fixture() -> ObjectnessMask {
    let scene = synth_scene(&SynthParams::default(), 0).unwrap();
    ObjectnessMask::new(oracle_mask(&scene, 65, 65, 0.5).unwrap().grid).unwrap()
}

fn bench_kernels(c: &mut Criterion) {
    let input = random_stack(1, 16, 32, 32);
    let layer = random_layer(2, 16, 16, 3);
    c.bench_function("conv2d 16x32x32 3x3", |b| {
        b.iter(|| conv2d(&input, &layer).unwrap())
    });

    let features = random_stack(3, 32, 65, 65);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = SeekerParams::random(32, &mut rng);
    c.bench_function("seeker forward 32x65x65", |b| {
        b.iter(|| seek(&features, &params).unwrap())
    });
}

fn bench_slicing(c: &mut Criterion) {
    let mask = oracle_mask_fixture();
    let act = activation(&mask, 0.5).unwrap();
    let centers = local_maxima(&mask, &act).unwrap();
    c.bench_function("slice uniform 65x65 k8", |b| {
        b.iter(|| slice_uniform(&act, &centers, 8).unwrap())
    });
    c.bench_function("slice greedy 65x65 k8", |b| {
        b.iter(|| slice_greedy(&mask, 8, 0.5).unwrap())
    });
    c.bench_function("slice parallel 65x65 k8", |b| {
        b.iter(|| slice_parallel(&mask, 8, 0.5).unwrap())
    });
}

fn bench_head(c: &mut Criterion) {
    let features = random_stack(7, 32, 65, 65);
    let head = vec![random_layer(8, 32, 16, 3), random_layer(9, 16, 15, 1)];
    let mask = oracle_mask_fixture();
    let act = activation(&mask, 0.5).unwrap();
    let centers = local_maxima(&mask, &act).unwrap();
    let samples = SparseSampleSet::from_centers(&centers, 0);
    c.bench_function("head dense 65x65", |b| {
        b.iter(|| head_forward_dense(&features, &head).unwrap())
    });
    c.bench_function(&format!("head sparse {} samples", samples.len()), |b| {
        b.iter(|| head_forward_sparse(&features, &head, &samples).unwrap())
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let params = SynthParams::default();
    let scene = synth_scene(&params, 0).unwrap();
    let image = render_scene_image(&scene, params.seed);
    let mut config = PipelineConfig::toy(42, 10);
    config.mask_source = MaskSource::Oracle;
    c.bench_function("pipeline oracle 513x513", |b| {
        b.iter_batched(
            || (image.clone(), scene.clone()),
            |(image, scene)| run_pipeline(&image, &config, Some(&scene)).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bench_kernels, bench_slicing, bench_head, bench_pipeline);
criterion_main!(benches);
