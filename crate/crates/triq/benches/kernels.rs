//! Kernel throughput: the batched wrapping matmul that dominates secure
//! linear algebra, sequential vs rayon, plus one whole secure block run.
//!
//! Run with `cargo bench -p triq`; build with `--no-default-features` to
//! bench the sequential fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use triq::fxp::HIGH;
use triq::graph::PrecisionMap;
use triq::model::BlockConfig;

fn matmul_inputs(m: usize, k: usize, n: usize) -> (Vec<u64>, Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let a: Vec<u64> = (0..m * k).map(|_| rng.next_u64()).collect();
    let b: Vec<u64> = (0..k * n).map(|_| rng.next_u64()).collect();
    let out = vec![0u64; m * n];
    (a, b, out)
}

fn bench_matmul_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_words");
    for &(m, k, n) in &[(8usize, 768usize, 3072usize), (64, 64, 64), (128, 256, 128)] {
        let (a, b, mut out) = matmul_inputs(m, k, n);
        group.throughput(Throughput::Elements((m * k * n) as u64));
        group.bench_with_input(
            BenchmarkId::new("seq", format!("{m}x{k}x{n}")),
            &(),
            |bch, _| {
                bch.iter(|| {
                    triq::kernels::matmul_batch_seq(&a, 1, &b, 1, &mut out, 1, m, k, n);
                    std::hint::black_box(out[0])
                })
            },
        );
        #[cfg(feature = "parallel")]
        group.bench_with_input(
            BenchmarkId::new("par", format!("{m}x{k}x{n}")),
            &(),
            |bch, _| {
                bch.iter(|| {
                    triq::kernels::matmul_batch_par(&a, 1, &b, 1, &mut out, 1, m, k, n);
                    std::hint::black_box(out[0])
                })
            },
        );
    }
    group.finish();
}

fn bench_secure_block(c: &mut Criterion) {
    let cfg = BlockConfig::default();
    let mut group = c.benchmark_group("secure_block");
    group.sample_size(10);
    group.bench_function("quantized_default_cfg", |bch| {
        bch.iter(|| {
            let b = triq::selftest::bench_block(&cfg, &PrecisionMap::quantized(), "q", 7).unwrap();
            std::hint::black_box(b.stats.total_bytes())
        })
    });
    group.bench_function("uniform64_default_cfg", |bch| {
        bch.iter(|| {
            let b =
                triq::selftest::bench_block(&cfg, &PrecisionMap::uniform(HIGH), "u", 7).unwrap();
            std::hint::black_box(b.stats.total_bytes())
        })
    });
    group.finish();
}

criterion_group!(benches, bench_matmul_kernels, bench_secure_block);
criterion_main!(benches);
