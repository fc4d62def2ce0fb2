use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use skewmix::dataset_io::{
    make_toy_dataset, partition, ClientDataset, PartitionScheme, PartitionSpec,
};
use skewmix::fed::{run_round, FedClient, FedConfig, ModelKind, ModelParams, Schema, TrainSet};
use skewmix::mixup_dp::{generate_mixups, DpMixConfig};
use skewmix::natural_noise::{generate_batch, init_generator, GeneratorConfig};
use skewmix::par::Parallelism;
use skewmix::rng::rng_from_seed;
use skewmix::Dims;
use std::hint::black_box;

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("rayon", Parallelism::Rayon),
];

fn bench_mixups(c: &mut Criterion) {
    let dims = Dims::CIFAR10;
    let source = ClientDataset::from_examples(0, 2, make_toy_dataset(64, 2, dims, 1));
    let cfg = DpMixConfig::default();
    let mut g = c.benchmark_group("mixups_256_cifar");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_mixups(black_box(&source), 0, &cfg, 256, 7, mode).unwrap())
        });
    }
    g.finish();
}

fn bench_noise(c: &mut Criterion) {
    let state = init_generator(&GeneratorConfig::new(Dims::new(32, 32, 3), 3)).unwrap();
    let mut g = c.benchmark_group("natural_noise_64_32x32");
    g.sample_size(20);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_batch(black_box(&state), 64, 11, mode).unwrap())
        });
    }
    g.finish();
}

fn bench_round(c: &mut Criterion) {
    let dims = Dims::new(16, 16, 1);
    let data = make_toy_dataset(60, 10, dims, 5);
    let spec = PartitionSpec {
        scheme: PartitionScheme::ClassSkew(2),
        num_clients: 10,
        seed: 0,
    };
    let parts = partition(&data, 10, &spec).unwrap();
    let schema = Schema::for_kind(ModelKind::Cnn, dims, 10).unwrap();
    let global = ModelParams::init(schema.clone(), &mut rng_from_seed(0));
    let test = TrainSet::from_images(&make_toy_dataset(10, 10, dims, 6));
    let mut g = c.benchmark_group("fedavg_round_cnn_10_clients");
    g.sample_size(10);
    for (name, mode) in MODES {
        let cfg = FedConfig {
            batch_size: 32,
            parallelism: mode,
            ..FedConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || {
                    parts
                        .iter()
                        .map(|p| FedClient::new(p.client_id, p.examples(), &schema, cfg.adam))
                        .collect::<Vec<_>>()
                },
                |mut clients| run_round(black_box(&global), &mut clients, &cfg, 0, &test).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, bench_mixups, bench_noise, bench_round);
criterion_main!(benches);
