use std::hint::black_box;

use coaglab_core::fluctuation::FluctuationModel;
use coaglab_core::Kernel;
use criterion::{criterion_group, Criterion};

fn routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("fluctuation");
    group.sample_size(10);
    let kernel = Kernel::capped_brownian(1.0, 10.0).unwrap();
    let model = FluctuationModel::new(kernel, 32, 1.0, 1e-3).unwrap();
    group.bench_function("lyapunov", |b| b.iter(|| black_box(model.covariance(&[1.0]).unwrap())));
    let mut g = vec![0.0; 32];
    g[1] = 1.0;
    group.bench_function("dual", |b| b.iter(|| black_box(model.dual(&g, 1.0).unwrap())));
    group.finish();
}

criterion_group!(benches, routes);
