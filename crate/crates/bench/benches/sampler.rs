use criterion::{criterion_group, criterion_main, Criterion};
use svgp_bench::spot_model;
use svgp_core::mcmc::{
    init_state, run_chain, update_eta, update_gamma_l_joint, update_l_within, update_lambda, update_phi,
};
use svgp_core::SamplerConfig;

fn updates(c: &mut Criterion) {
    let model = spot_model(16, 100);
    let cfg = SamplerConfig::default();
    let mut state = init_state(&model, 1);
    let mut g = c.benchmark_group("update/256x100");
    g.sample_size(20);
    g.bench_function("eta", |b| b.iter(|| update_eta(&mut state, &model, &cfg)));
    g.bench_function("phi", |b| b.iter(|| update_phi(&mut state, &model, &cfg)));
    g.bench_function("lambda", |b| b.iter(|| update_lambda(&mut state, &model, &cfg)));
    g.bench_function("add_delete", |b| b.iter(|| update_gamma_l_joint(&mut state, &model, &cfg).unwrap()));
    g.bench_function("l_within", |b| b.iter(|| update_l_within(&mut state, &model, &cfg).unwrap()));
    g.finish();
}

fn short_chain(c: &mut Criterion) {
    let model = spot_model(8, 30);
    let cfg = SamplerConfig { n_iter: 50, ..Default::default() };
    let mut g = c.benchmark_group("chain");
    g.sample_size(10);
    g.bench_function("64x30x50", |b| b.iter(|| run_chain(&model, &cfg, 0, 3).unwrap()));
    g.finish();
}

criterion_group!(benches, updates, short_chain);
criterion_main!(benches);
