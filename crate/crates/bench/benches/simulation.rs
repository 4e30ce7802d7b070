use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use neurofail::boost::{simulate_boost, BoostPolicy, LatencyDistribution, LatencyModel};
use neurofail::empirical::{random_network, soundness_sweep, SweepConfig};
use neurofail::{
    forward_faulty, random_scenario, ActivationSpec, Capacity, FaultDistribution, Selection,
};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    for width in [16, 64, 256] {
        let net = random_network(
            2,
            &[width, width],
            ActivationSpec::sigmoid(1.0).unwrap(),
            1.0,
            1,
        )
        .unwrap();
        let dist = FaultDistribution::neurons(vec![width / 8, width / 8]);
        let scenario = random_scenario(
            &net,
            &dist,
            Capacity::bounded(1.0).unwrap(),
            2,
            &Selection::crash(),
        )
        .unwrap();
        let x = [0.3, 0.7];
        group.bench_with_input(BenchmarkId::new("nominal", width), &width, |b, _| {
            b.iter(|| net.forward(black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("faulty", width), &width, |b, _| {
            b.iter(|| forward_faulty(&net, black_box(&x), &scenario).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let net = random_network(2, &[32, 32], ActivationSpec::tanh(1.0).unwrap(), 0.5, 3).unwrap();
    let dist = FaultDistribution::neurons(vec![3, 2]);
    let config = SweepConfig {
        keep_records: false,
        ..Default::default()
    };
    let mut group = c.benchmark_group("soundness_sweep");
    group.sample_size(20);
    group.bench_function("1000 trials", |b| {
        b.iter(|| soundness_sweep(&net, &dist, 1.0, 1000, black_box(4), &config).unwrap())
    });
    group.finish();
}

fn boost(c: &mut Criterion) {
    let net = random_network(2, &[64, 64], ActivationSpec::sigmoid(1.0).unwrap(), 0.02, 5).unwrap();
    let policy = BoostPolicy::new(&net, vec![4, 4], 0.5, 0.05).unwrap();
    let latency = LatencyModel::new(
        LatencyDistribution::HeavyTail {
            mean: 1.0,
            p_straggler: 0.2,
            straggler_factor: 10.0,
        },
        6,
    )
    .unwrap();
    c.bench_function("simulate_boost", |b| {
        b.iter(|| simulate_boost(&net, black_box(&[0.4, 0.6]), &latency, &policy).unwrap())
    });
}

criterion_group!(benches, forward, sweep, boost);
criterion_main!(benches);
