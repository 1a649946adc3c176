use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trackcast::forecast::{window_gradients, ForecastModel, ModelConfig};
use trackcast::par;
use trackcast::trackgen::{make_windows, simulate, TrackScenario};

// Per-window forward/backward over one minibatch: the unit training parallelizes.
fn batch_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch gradients");
    group.sample_size(10);
    for positions in [64, 256] {
        let ds = simulate(&TrackScenario {
            positions,
            inspections: 24,
            ..TrackScenario::default()
        })
        .unwrap();
        let model = ForecastModel::new(ModelConfig::desk(), positions, 0).unwrap();
        let windows = make_windows(ds.inspections(), model.config.tau).unwrap().windows;
        let batch = &windows[..16];

        group.bench_with_input(BenchmarkId::new("rayon", positions), &batch, |b, batch| {
            b.iter(|| par::map(batch, |w| window_gradients(&model, &ds, w).unwrap().0))
        });
        group.bench_with_input(BenchmarkId::new("sequential", positions), &batch, |b, batch| {
            b.iter(|| par::map_seq(batch, |w| window_gradients(&model, &ds, w).unwrap().0))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients);
criterion_main!(benches);
