use std::hint::black_box;

use coaglab_core::simulator::run;
use coaglab_core::{Kernel, SimConfig, Strategy};
use criterion::{criterion_group, BenchmarkId, Criterion, Throughput};

fn replica(c: &mut Criterion) {
    let mut group = c.benchmark_group("replica");
    let kernel = Kernel::capped_brownian(1.0, 10.0).unwrap();
    for n in [1_000u64, 10_000] {
        group.throughput(Throughput::Elements(n));
        for strategy in [Strategy::Direct, Strategy::Thinning] {
            let cfg = SimConfig::new(n, kernel.clone(), 1.0, vec![0.5, 1.0], 64).with_strategy(strategy);
            group.bench_with_input(BenchmarkId::new(format!("{strategy:?}"), n), &cfg, |b, cfg| {
                let mut replica = 0;
                b.iter(|| {
                    replica += 1;
                    black_box(run(cfg, 1, replica))
                });
            });
        }
    }
    group.finish();
}

criterion_group!(benches, replica);
