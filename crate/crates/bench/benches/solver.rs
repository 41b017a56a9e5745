use std::hint::black_box;

use coaglab_core::smoluchowski::{solve, SolverConfig};
use coaglab_core::{DensityVector, Kernel};
use criterion::{criterion_group, BenchmarkId, Criterion};

fn rk4(c: &mut Criterion) {
    let mut group = c.benchmark_group("smoluchowski");
    let kernel = Kernel::capped_brownian(1.0, 10.0).unwrap();
    for l in [64usize, 256] {
        let u0 = DensityVector::monodisperse(l);
        let cfg = SolverConfig::fixed(l, 1e-3, vec![1.0]);
        group.bench_with_input(BenchmarkId::new("fixed", l), &cfg, |b, cfg| {
            b.iter(|| black_box(solve(&kernel, &u0, cfg).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, rk4);
