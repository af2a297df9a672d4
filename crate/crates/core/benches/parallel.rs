use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use effq_core::chain::{
    build_extended_chain_with, coupling_experiment, random_extended_state, stationary_distribution_with,
    CouplingConfig, CouplingStart, MainChain, DEFAULT_BUDGET,
};
use effq_core::dynamics::RunConfig;
use effq_core::experiment::{run_seeds, seed_range, ExperimentConfig};
use effq_core::game::{random_game, RandomGameParams};
use effq_core::solver::solve_q_star;
use effq_core::{Exec, Schedule};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn chain(c: &mut Criterion) {
    // |W| = 3 * 9^3 = 2187 for build; 3 * 16^3 = 12288 for the stationary solve.
    let game = random_game(&RandomGameParams::uniform(2, 3, 3, 1)).unwrap();
    let q = solve_q_star(&game, 1e-10, 100_000).unwrap().q_star;
    let big = random_game(&RandomGameParams::uniform(2, 3, 4, 2)).unwrap();
    let big_q = solve_q_star(&big, 1e-10, 100_000).unwrap().q_star;
    let big_chain = build_extended_chain_with(&big, &big_q, 1.0, DEFAULT_BUDGET, Exec::Sequential).unwrap();

    let mut group = c.benchmark_group("chain");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("build", name), &exec, |b, &exec| {
            b.iter(|| build_extended_chain_with(&game, &q, 0.5, DEFAULT_BUDGET, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("stationary", name), &exec, |b, &exec| {
            b.iter(|| stationary_distribution_with(black_box(&big_chain.matrix), 1e-10, 1_000_000, exec).unwrap())
        });
    }
    group.finish();
}

fn seeds(c: &mut Criterion) {
    let game = random_game(&RandomGameParams::uniform(2, 2, 2, 1)).unwrap();
    let q_star = solve_q_star(&game, 1e-10, 100_000).unwrap().q_star;
    let run = RunConfig::new(Schedule::harmonic(2.0).unwrap(), 0.05, 20_000, 0);
    let cfg = ExperimentConfig::new(run, seed_range(0, 16));

    let mut group = c.benchmark_group("seeds");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("run_16x20k", name), &exec, |b, &exec| {
            b.iter(|| run_seeds(&game, &cfg, Some(&q_star), exec).unwrap())
        });
    }
    group.finish();
}

fn coupling(c: &mut Criterion) {
    let game = random_game(&RandomGameParams::uniform(2, 2, 2, 3)).unwrap();
    let q = solve_q_star(&game, 1e-10, 100_000).unwrap().q_star;
    let cfg = CouplingConfig {
        tau: 0.5,
        epoch_start: 100,
        length: 80,
        kappa: 4,
        main: MainChain::Live(Schedule::harmonic(2.0).unwrap()),
    };
    let mut group = c.benchmark_group("coupling");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("pairs_2000", name), &exec, |b, &exec| {
            b.iter(|| {
                coupling_experiment(
                    &game,
                    &q,
                    &cfg,
                    2000,
                    7,
                    0,
                    |rng| CouplingStart::shared(random_extended_state(&game, rng)),
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, chain, seeds, coupling);
criterion_main!(benches);
