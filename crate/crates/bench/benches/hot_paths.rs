use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use fedmtl_core::dp::DpConfig;
use fedmtl_core::params::{virtual_average, BlockLayout, ClientParams, GlobalParam};
use fedmtl_core::sim::{run, AggregationDivisor, Method, Sampling, SimConfig};
use fedmtl_core::synthetic::{generate_synthetic, SuiteKind, SyntheticConfig};
use fedmtl_core::tradeoff::TradeoffCurve;

fn bench_params(c: &mut Criterion) {
    let m = 50;
    let layout = Arc::new(BlockLayout::new(vec![8; m], 32).unwrap());
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let data: Vec<f64> = (0..layout.total_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = GlobalParam::from_vec(data, Arc::clone(&layout)).unwrap();
    let clients: Vec<ClientParams> = (0..m)
        .map(|i| {
            let v = w.restrict(i).unwrap();
            ClientParams { task: v.task.clone(), shared: v.shared.clone() }
        })
        .collect();

    c.bench_function("restrict_all_clients", |b| {
        b.iter(|| {
            for i in 0..m {
                black_box(w.restrict(black_box(i)).unwrap());
            }
        })
    });
    c.bench_function("interpolate", |b| {
        let v = w.restrict(0).unwrap();
        b.iter(|| black_box(v.interpolate(&layout).unwrap()))
    });
    c.bench_function("virtual_average_50", |b| {
        b.iter(|| black_box(virtual_average(black_box(&clients), &layout).unwrap()))
    });
}

fn bench_tradeoff(c: &mut Criterion) {
    let g = TradeoffCurve::gaussian(1.0).unwrap();
    c.bench_function("subsample_envelope", |b| {
        b.iter(|| black_box(g.subsample(black_box(0.02)).unwrap()))
    });
}

fn bench_sim(c: &mut Criterion) {
    let cfg = SyntheticConfig {
        kind: SuiteKind::StronglyConvexQuadratic,
        clients: 10,
        task_dim: 4,
        shared_dim: 8,
        eig_range: (1.0, 10.0),
        heterogeneity: 0.5,
        linear_scale: 1.0,
        samples_per_client: 60,
        amplitude: 0.05,
        frequency: 3.0,
    };
    let problem = generate_synthetic(&cfg, 11).unwrap();
    let sim = SimConfig {
        method: Method::DpFedMtl,
        m: 10,
        k: 3,
        t: 100,
        h: 5,
        eta: 0.02,
        dp: DpConfig {
            clip_norm: 10.0,
            sigma: 0.65,
            k: 3,
            m: 10,
            sensitivity_override: None,
        },
        seed: 42,
        record_every: 10,
        sampling: Sampling::Bernoulli,
        divisor: AggregationDivisor::Realized,
        literal_broadcast: false,
        init: None,
        snapshot_every: None,
    };
    c.bench_function("sim_100_steps_10_clients", |b| {
        b.iter(|| black_box(run(&sim, &problem.tasks, &problem.layout).unwrap()))
    });
}

criterion_group!(benches, bench_params, bench_tradeoff, bench_sim);
criterion_main!(benches);
