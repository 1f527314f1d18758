//! Renderer and autoencoder throughput on a one-thread pool versus the global pool.
//!
//! Build with `--no-default-features` to measure the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nbtf::btf::synth::{synth_preset, Preset};
use nbtf::btf::{DirectionPair, GuidanceImage};
use nbtf::eval::evaluate_full;
use nbtf::model::{Checkpoint, ModelConfig};
use nbtf::propagate::propagate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let n = rayon::current_num_threads().max(2);
    let mode = if cfg!(feature = "parallel") { "rayon" } else { "sequential-build" };
    [1, n]
        .into_iter()
        .map(|t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            (format!("{mode}/{t}t"), pool)
        })
        .collect()
}

fn render_points(c: &mut Criterion) {
    let ck = Checkpoint::init(ModelConfig::default(), 0).unwrap();
    let n = 1 << 14;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let latents: Vec<f32> = (0..n * 14).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pairs: Vec<DirectionPair> = (0..n)
        .map(|_| {
            DirectionPair::from_degrees(
                rng.random_range(0.0..80.0),
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..80.0),
                rng.random_range(0.0..360.0),
            )
            .unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("render_points");
    group.sample_size(10);
    group.throughput(Throughput::Elements(n as u64));
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("16k", &label), |b| {
            b.iter(|| pool.install(|| ck.renderer.render_points(&latents, &pairs).unwrap()))
        });
    }
    group.finish();
}

fn encode_and_evaluate(c: &mut Criterion) {
    let ck = Checkpoint::init(ModelConfig::default(), 0).unwrap();
    let ds = synth_preset(Preset::GgxTextured, 64).unwrap();
    let guide = GuidanceImage::from_slice(&ds.slices()[ds.guidance_index()]);
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("propagate_64", &label), |b| {
            b.iter(|| pool.install(|| propagate(&ck, &guide).unwrap()))
        });
        group.bench_function(BenchmarkId::new("evaluate_49x64", &label), |b| {
            b.iter(|| pool.install(|| evaluate_full(&ck, &ds).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, render_points, encode_and_evaluate);
criterion_main!(benches);
