//! Parallel vs sequential kernel benchmarks.
//!
//! Requires the `parallel` feature (default), which compiles both kernel
//! forms; results are bit-identical, so this suite is purely about
//! throughput. Sizes bracket the dispatch threshold and the MNIST training
//! shapes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use polynet::blocks::{Block, InitScheme, PolyBlockSpec, ProductNet};
use polynet::tensor::kernels::{map_par, map_seq, matmul_par, matmul_seq, zip_map_par, zip_map_seq};
use polynet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(m, n, p) in &[(32usize, 64usize, 32usize), (128, 784, 64), (512, 784, 64)] {
        let a = values(m * n, 1);
        let b = values(n * p, 2);
        group.throughput(Throughput::Elements((m * n * p) as u64));
        group.bench_with_input(BenchmarkId::new("seq", format!("{m}x{n}x{p}")), &(m, n, p), |bench, _| {
            bench.iter(|| matmul_seq(&a, &b, m, n, p))
        });
        group.bench_with_input(BenchmarkId::new("par", format!("{m}x{n}x{p}")), &(m, n, p), |bench, _| {
            bench.iter(|| matmul_par(&a, &b, m, n, p))
        });
    }
    group.finish();
}

fn bench_elementwise(c: &mut Criterion) {
    let mut group = c.benchmark_group("elementwise");
    for &len in &[1usize << 12, 1 << 16, 1 << 20] {
        let a = values(len, 3);
        let b = values(len, 4);
        group.throughput(Throughput::Elements(len as u64));
        group.bench_with_input(BenchmarkId::new("hadamard_seq", len), &len, |bench, _| {
            bench.iter(|| zip_map_seq(&a, &b, |x, y| x * y))
        });
        group.bench_with_input(BenchmarkId::new("hadamard_par", len), &len, |bench, _| {
            bench.iter(|| zip_map_par(&a, &b, |x, y| x * y))
        });
        group.bench_with_input(BenchmarkId::new("tanh_seq", len), &len, |bench, _| {
            bench.iter(|| map_seq(&a, f64::tanh))
        });
        group.bench_with_input(BenchmarkId::new("tanh_par", len), &len, |bench, _| {
            bench.iter(|| map_par(&a, f64::tanh))
        });
    }
    group.finish();
}

fn bench_batch_forward(c: &mut Criterion) {
    // End-to-end block forward at MNIST-like shapes through the default
    // dispatch (parallel above the size threshold).
    let mut group = c.benchmark_group("batch_forward");
    let b1 = Block::init(PolyBlockSpec::ccp(784, 64, 2, 64), 1, InitScheme::Default).unwrap();
    let b2 = Block::init(PolyBlockSpec::ccp(64, 10, 2, 64), 2, InitScheme::Default).unwrap();
    let net = ProductNet::new(vec![b1, b2]).unwrap();
    for &batch in &[32usize, 128, 512] {
        let z = Tensor::new(vec![batch, 784], values(batch * 784, 7)).unwrap();
        group.throughput(Throughput::Elements(batch as u64));
        group.bench_with_input(BenchmarkId::new("ccp_product", batch), &batch, |bench, _| {
            bench.iter(|| net.forward(&z).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_elementwise, bench_batch_forward);
criterion_main!(benches);
