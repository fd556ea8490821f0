use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use dts_core::lab::{AgentKind, EnvSpec, RunSpec};
use dts_core::mdp::{self, StochasticPolicy};
use dts_core::posterior::VisitCounters;
use dts_core::ppi::{self, PpiConfig};

fn bench_gain_bias(c: &mut Criterion) {
    let env = dts_core::envs::make_riverswim(6, 1e-3, 0.99, 7).unwrap();
    let mdp = env.mdp().clone();
    let policy = StochasticPolicy::uniform(mdp.n_states(), mdp.n_actions());
    c.bench_function("solve_gain_bias riverswim6 uniform", |b| {
        b.iter(|| mdp::solve_gain_bias(black_box(&mdp), black_box(&policy)).unwrap())
    });
}

fn bench_run_ppi(c: &mut Criterion) {
    let env = dts_core::envs::make_riverswim(6, 1e-3, 0.99, 7).unwrap();
    let mdp = env.mdp().clone();
    let counters = VisitCounters::new(mdp.n_states(), mdp.n_actions());
    let mu = StochasticPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let cfg = PpiConfig::new(1e-3, 200, 1e-6, 0.99).unwrap();
    c.bench_function("run_ppi riverswim6 empty counters", |b| {
        b.iter(|| ppi::run_ppi(black_box(&mdp), &mu, &counters, &cfg).unwrap())
    });
}

fn bench_dts_run(c: &mut Criterion) {
    let spec = RunSpec {
        agent: AgentKind::Dts,
        env: EnvSpec::RiverSwim(6),
        horizon: 1024,
        seed: 11,
        gamma: 0.99,
        epsilon: 1e-3,
        kl_tolerance: 1e-6,
        r_min: 1e-3,
        alpha0: 1.0,
        ppi_max_iterations: 200,
        strict_per_step: false,
    };
    c.bench_function("execute_run dts riverswim6 T=1024", |b| {
        b.iter_batched(
            || spec.clone(),
            |s| dts_core::lab::execute_run(black_box(&s)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_gain_bias, bench_run_ppi, bench_dts_run);
criterion_main!(benches);
