use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qns_core::experiments::{epsilon_sweep, identity_battery, library_samples, SweepOptions};
use qns_core::fields::{InitialProfile, PhysParams, PositivityMode};
use qns_core::functionals::{dashboard_series, NormExponents};
use qns_core::integrator::{simulate, Formulation, GridSpec, RunConfig, TimeStep};
use qns_core::par::Execution;

fn config(points: usize, t: f64, dt: f64) -> RunConfig {
    RunConfig {
        grid: GridSpec {
            dim: 1,
            points,
            length: 1.0,
        },
        physics: PhysParams::default().with_nu(0.2),
        initial: InitialProfile::CosineBump {
            mean: 2.0,
            amplitude: 0.5,
            velocity_amplitude: 0.5,
            mode: 1,
        },
        formulation: Formulation::Eq2,
        final_time: t,
        time_step: TimeStep::Fixed { dt },
        galerkin_modes: None,
        cadence: 1,
        positivity: PositivityMode::Strict,
        seed: 0,
        execution: Execution::Sequential,
    }
}

fn bench_dashboard(c: &mut Criterion) {
    let traj = simulate(&config(256, 0.0064, 1e-4)).unwrap().into_result().unwrap();
    assert_eq!(traj.snapshots.len(), 65);
    let params = traj.params;
    let exps = NormExponents::from_k(params.cold_k);
    let mut g = c.benchmark_group("dashboard_series_65x256");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(name, |b| {
            b.iter(|| dashboard_series(black_box(&traj.snapshots), &params, &exps, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let base = config(64, 0.02, 1e-3);
    let mut g = c.benchmark_group("epsilon_sweep_4_members");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let opts = SweepOptions {
            execution: exec,
            ..SweepOptions::default()
        };
        g.bench_function(name, |b| {
            b.iter(|| epsilon_sweep(black_box(&base), &[0.1, 0.03, 0.01], &opts).unwrap())
        });
    }
    g.finish();
}

fn bench_identities(c: &mut Criterion) {
    let samples = library_samples(1024).unwrap();
    let mut g = c.benchmark_group("identity_battery_5x1024");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(name, |b| b.iter(|| identity_battery(black_box(&samples), exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_dashboard, bench_sweep, bench_identities);
criterion_main!(benches);
