use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pgo_core::{
    dead_reckoning, find_mu_star, gnc_optimize, grid_world, inject_false_loops, sig_d2, CorruptionMode, CorruptionSpec, GridWorldSpec,
    KernelConfig, PgoProblem, ScheduleKind, SolverConfig,
};

fn kernel(c: &mut Criterion) {
    let cfg = KernelConfig::default();
    c.bench_function("sig_d2", |b| b.iter(|| sig_d2(black_box(3.0), black_box(0.4), &cfg)));
    let mut group = c.benchmark_group("find_mu_star");
    for r in [0.3, 3.0, 30.0] {
        group.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, r| b.iter(|| find_mu_star(black_box(*r), &cfg)));
    }
    group.finish();
}

fn schedules(c: &mut Criterion) {
    let world = grid_world(&GridWorldSpec {
        seed: 1,
        noise_sigma: [0.03, 0.03, 0.015],
        ..GridWorldSpec::default()
    })
    .expect("grid world");
    let kcfg = KernelConfig::default();
    let mut group = c.benchmark_group("gnc_300_poses");
    group.sample_size(10);
    for ratio in [0.1, 0.5] {
        let corrupted = inject_false_loops(&world, &CorruptionSpec::new(CorruptionMode::FalseLoops, ratio, 101)).expect("corruption");
        let problem = PgoProblem::new(dead_reckoning(&corrupted).expect("initial estimate")).expect("problem");
        for schedule in [ScheduleKind::Efficient, ScheduleKind::Baseline] {
            let cfg = SolverConfig::with_schedule(schedule);
            group.bench_with_input(BenchmarkId::new(schedule.to_string(), ratio), &problem, |b, p| b.iter(|| gnc_optimize(p, &cfg, &kcfg)));
        }
    }
    group.finish();
}

criterion_group!(benches, kernel, schedules);
criterion_main!(benches);
