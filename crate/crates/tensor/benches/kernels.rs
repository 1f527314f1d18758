//! Convolution and FFT kernels on a one-thread pool versus the global pool.
//!
//! Build with `--no-default-features` to measure the sequential fallback;
//! both pools then run the same sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nbtf_tensor::conv::{conv2d_backward, conv2d_forward};
use nbtf_tensor::{Conv2dSpec, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

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

fn conv(c: &mut Criterion) {
    let x = random(&[4, 32, 64, 64], 1);
    let dw = random(&[32, 1, 5, 5], 2);
    let pw = random(&[128, 32, 1, 1], 3);
    let dw_spec = Conv2dSpec::circular().with_groups(32);
    let grad = random(&[4, 32, 64, 64], 4);
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("depthwise5x5_fwd", &label), |b| {
            b.iter(|| pool.install(|| conv2d_forward(&x, &dw, None, &dw_spec).unwrap()))
        });
        group.bench_function(BenchmarkId::new("depthwise5x5_bwd", &label), |b| {
            b.iter(|| pool.install(|| conv2d_backward(&x, &dw, &grad, &dw_spec, (true, true, false)).unwrap()))
        });
        group.bench_function(BenchmarkId::new("pointwise32x128_fwd", &label), |b| {
            b.iter(|| pool.install(|| conv2d_forward(&x, &pw, None, &Conv2dSpec::circular()).unwrap()))
        });
    }
    group.finish();
}

fn fft(c: &mut Criterion) {
    let x = random(&[4, 3, 64, 64], 5);
    let mut group = c.benchmark_group("fft2");
    group.sample_size(10);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::new("4x3x64x64", &label), |b| {
            b.iter(|| {
                pool.install(|| {
                    let mut tape = Tape::new();
                    let v = tape.constant(x.clone());
                    tape.fft2(v).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, fft);
criterion_main!(benches);
