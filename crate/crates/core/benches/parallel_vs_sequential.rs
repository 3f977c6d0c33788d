use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lcapa_core::gnn::nets::{NetKind, Network};
use lcapa_core::par::Execution;
use lcapa_core::quadrature::{build_grid, channel_matrix, Basis};
use lcapa_core::scene::{sample_scene, SceneParams};
use lcapa_core::train::dataset::{gen_supervised_dataset, DatasetMode, DatasetSpec};
use lcapa_core::train::policy::scenes_with_grams;
use lcapa_core::train::supervised::normalized_mse;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn channels(c: &mut Criterion) {
    let scene = sample_scene(1, &SceneParams::default()).unwrap();
    let grid = build_grid(&scene.aperture, 4096).unwrap();
    let mut g = c.benchmark_group("channel_matrix_m4096");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| channel_matrix(&scene, &grid, exec).unwrap())
        });
    }
    g.finish();
}

fn datasets(c: &mut Criterion) {
    let spec = DatasetSpec::new(2, 64, 256, DatasetMode::Value, SceneParams::default());
    let mut g = c.benchmark_group("value_dataset_64x256");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gen_supervised_dataset(&spec, exec).unwrap())
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = gen_supervised_dataset(
        &DatasetSpec::new(3, 64, 64, DatasetMode::Value, SceneParams::default()),
        Execution::Parallel,
    )
    .unwrap();
    let net = Network::new(NetKind::Value, NetKind::Value.spec(4, 64), ds.normalization(), 1).unwrap();
    let mut g = c.benchmark_group("value_net_nmse_64");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| normalized_mse(&net, &ds.samples, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("test_scene_grams_16x1024");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| scenes_with_grams(4, 16, &SceneParams::default(), 1024, Basis::default(), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, channels, datasets, evaluation);
criterion_main!(benches);
