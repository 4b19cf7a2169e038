//! Microbenchmarks for the kernels that dominate inference time: the bilinear
//! warp (forward and backward), the convolution stack, block matching, and
//! field resizing, plus whole-pipeline frame costs for the two schedules.
//!
//! `cargo bench --bench kernels` for full runs, `-- --quick` for a smoke pass.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use featflow_core::engine::{block_matching_flow, run_inference, Variant};
use featflow_core::nets::{self, FlowTier, ModelBundle};
use featflow_core::synth::{render_snippet, SynthConfig};
use featflow_core::warp::{propagate, propagate_backward, resize_flow, FlowField};
use featflow_core::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const CHANNELS: usize = 32;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, span: Scalar) -> FlowField {
    FlowField::new(Tensor::from_fn(&[2, h, w], |_| rng.random_range(-span..span))).unwrap()
}

fn bench_propagate(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("propagate");
    for side in [16usize, 32] {
        let features = random_tensor(&mut rng, &[CHANNELS, side, side]);
        let scale = random_tensor(&mut rng, &[CHANNELS, side, side]);
        let flow = random_flow(&mut rng, side, side, 3.0);
        let grad = random_tensor(&mut rng, &[CHANNELS, side, side]);
        group.throughput(Throughput::Elements((CHANNELS * side * side) as u64));
        group.bench_with_input(BenchmarkId::new("forward", side), &side, |b, _| {
            b.iter(|| propagate(black_box(&features), black_box(&flow), black_box(&scale)))
        });
        group.bench_with_input(BenchmarkId::new("backward", side), &side, |b, _| {
            b.iter(|| {
                propagate_backward(
                    black_box(&features),
                    black_box(&flow),
                    black_box(&scale),
                    black_box(&grad),
                )
            })
        });
    }
    group.finish();
}

fn bench_feature_net(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bundle = ModelBundle::initialize(3, 24, FlowTier::Full, 5).unwrap();
    let frame = random_tensor(&mut rng, &[3, 48, 48]);
    c.bench_function("feature_net/forward 48x48 w24", |b| {
        b.iter(|| nets::forward(&bundle.feature_spec, &bundle.feature_params, black_box(&frame)))
    });
}

fn bench_block_matching(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = random_tensor(&mut rng, &[3, 48, 48]);
    let current = random_tensor(&mut rng, &[3, 48, 48]);
    let mut group = c.benchmark_group("block_matching");
    group.sample_size(20);
    group.bench_function("48x48 block5 radius3", |b| {
        b.iter(|| block_matching_flow(black_box(&reference), black_box(&current), 5, 3))
    });
    group.finish();
}

fn bench_resize_flow(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let flow = random_flow(&mut rng, 12, 12, 2.0);
    let mut group = c.benchmark_group("resize_flow");
    for target in [24usize, 48] {
        group.throughput(Throughput::Elements((2 * target * target) as u64));
        group.bench_with_input(BenchmarkId::new("12x12_to", target), &target, |b, &t| {
            b.iter(|| resize_flow(black_box(&flow), t, t))
        });
    }
    group.finish();
}

fn bench_schedules(c: &mut Criterion) {
    let cfg = SynthConfig {
        height: 48,
        width: 48,
        classes: 3,
        snippets: 1,
        frames: 10,
        annotation_period: 5,
        seed: 9,
        min_shapes: 2,
        max_shapes: 4,
    };
    let snippet = render_snippet(&cfg, 0);
    let bundle = ModelBundle::initialize(3, 24, FlowTier::Full, 5).unwrap();
    let mut group = c.benchmark_group("inference_10_frames");
    group.sample_size(20);
    group.bench_function("per_frame", |b| {
        b.iter(|| run_inference(&bundle, black_box(&snippet.frames), &Variant::Frame, 1))
    });
    group.bench_function("propagated_l5", |b| {
        b.iter(|| run_inference(&bundle, black_box(&snippet.frames), &Variant::Dff, 5))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_propagate,
    bench_feature_net,
    bench_block_matching,
    bench_resize_flow,
    bench_schedules
);
criterion_main!(benches);
