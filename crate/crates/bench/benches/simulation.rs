use criterion::{criterion_group, criterion_main, Criterion};

use splitguard::simulator::{run_with, ScenarioConfig, SimCaches};
use splitguard::Model;

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(20);
    for (name, cfg) in [
        ("honest_10s", ScenarioConfig::baseline()),
        ("demo_9s", ScenarioConfig::demo()),
    ] {
        let model = Model::generate(cfg.model.plan(), cfg.model.weights_seed).unwrap();
        g.bench_function(format!("{name}_cold"), |b| {
            b.iter(|| run_with(&cfg, &model, &mut SimCaches::default()).unwrap())
        });
        let mut warm = SimCaches::default();
        g.bench_function(format!("{name}_warm"), |b| {
            b.iter(|| run_with(&cfg, &model, &mut warm).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, scenarios);
criterion_main!(benches);
