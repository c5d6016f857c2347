use proptest::prelude::*;
use qns_core::experiments::{formulation_consistency, pairing_test_functions};
use qns_core::fields::{InitialProfile, PhysParams, PositivityMode};
use qns_core::grid::make_grid;
use qns_core::integrator::{simulate, Formulation, GridSpec, RunConfig, TimeStep};
use qns_core::io::{diagnostics_csv, read_snapshot, write_run_outputs, OutputFormat};
use qns_core::par::Execution;
use qns_core::physics::{quantum_strong_pairing, quantum_weak_form};

fn random_run(form: Formulation, seed: u64, mean: f64, rel_amp: f64, max_mode: u32) -> RunConfig {
    RunConfig {
        grid: GridSpec {
            dim: 1,
            points: 32,
            length: 1.0,
        },
        physics: PhysParams::default().with_delta(1e-3),
        initial: InitialProfile::RandomBandlimited {
            mean,
            amplitude: rel_amp * mean,
            velocity_amplitude: 0.3,
            max_mode,
        },
        formulation: form,
        final_time: 0.02,
        time_step: TimeStep::Fixed { dt: 1e-3 },
        galerkin_modes: None,
        cadence: 1,
        positivity: PositivityMode::Strict,
        seed,
        execution: Execution::Sequential,
    }
}

fn form_strategy() -> impl Strategy<Value = Formulation> {
    prop_oneof![Just(Formulation::Eq2), Just(Formulation::Eqw), Just(Formulation::Eql)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_is_conserved(form in form_strategy(), seed in 0u64..1000, mean in 1.5f64..3.0, rel in 0.05f64..0.3, modes in 1u32..4) {
        let t = simulate(&random_run(form, seed, mean, rel, modes)).unwrap().into_result().unwrap();
        let m0 = t.records[0].mass;
        for r in &t.records {
            prop_assert!(((r.mass - m0) / m0).abs() < 1e-12);
            prop_assert!(r.min_n > 0.0);
        }
    }

    #[test]
    fn constant_states_are_fixed(form in form_strategy(), density in 1.2f64..4.0) {
        let mut c = random_run(form, 0, 2.0, 0.1, 1);
        c.initial = InitialProfile::Constant { density, velocity: vec![] };
        let t = simulate(&c).unwrap().into_result().unwrap();
        let f = t.final_state();
        prop_assert!(f.n.map(|v| v - density).max_abs() <= 1e-12 * density);
        prop_assert!(f.vel.max_abs() <= 1e-12);
    }

    #[test]
    fn weak_and_strong_pairings_agree(a in 0.1f64..0.8, b in -0.5f64..0.5, shift in 1.5f64..3.0) {
        let g = make_grid(1, 128, 1.0).unwrap();
        let n = qns_core::grid::ScalarField::from_fn(&g, |x| {
            let t = 2.0 * std::f64::consts::PI * x[0];
            shift + a * t.cos() + b * (2.0 * t).sin()
        });
        for phi in pairing_test_functions(&g) {
            let w = quantum_weak_form(&n, &phi).unwrap();
            let s = quantum_strong_pairing(&n, &phi).unwrap();
            prop_assert!((w - s).abs() <= 1e-9 * s.abs().max(1.0));
        }
    }
}

#[test]
fn sequential_and_parallel_runs_match_bitwise() {
    let mut c = random_run(Formulation::Eq2, 5, 2.0, 0.2, 3);
    let a = simulate(&c).unwrap();
    c.execution = Execution::Parallel;
    let b = simulate(&c).unwrap();
    assert_eq!(diagnostics_csv(&a.records), diagnostics_csv(&b.records));
}

#[test]
fn full_cap_matches_unprojected_run() {
    let c = random_run(Formulation::Eq2, 9, 2.0, 0.2, 3);
    let mut capped = c.clone();
    capped.galerkin_modes = Some(16);
    let a = simulate(&c).unwrap();
    let b = simulate(&capped).unwrap();
    assert_eq!(a.final_state().n.values(), b.final_state().n.values());
}

#[test]
fn physical_and_effective_systems_agree() {
    let mut c = random_run(Formulation::Eq2, 3, 2.0, 0.2, 2);
    c.physics.delta = 0.0;
    c.final_time = 0.1;
    let gaps = formulation_consistency(&c, &[2e-3, 1e-3, 5e-4], Execution::Parallel).unwrap();
    // The change of variables is exact in time; what remains is spatial filtering.
    assert!(gaps.iter().all(|&g| g < 1e-8), "{gaps:?}");
}

#[test]
fn outputs_reload() {
    let dir = std::env::temp_dir().join(format!("qns-invariants-{}", std::process::id()));
    for dim in [1, 2] {
        let mut c = random_run(Formulation::Eqw, 1, 2.0, 0.2, 2);
        c.grid.dim = dim;
        c.grid.points = 16;
        let t = simulate(&c).unwrap().into_result().unwrap();
        let out = dir.join(format!("d{dim}"));
        write_run_outputs(&t, &out, &[OutputFormat::Csv, OutputFormat::Json]).unwrap();
        let ext = if dim == 1 { "csv" } else { "bin" };
        let back = read_snapshot(&out.join(format!("final.{ext}"))).unwrap();
        let phys = t.final_state().to_physical(&t.params).unwrap();
        assert_eq!(back.n.values(), phys.n.values());
        assert_eq!(back.vel.component(dim - 1).values(), phys.vel.component(dim - 1).values());
        assert_eq!(back.time, phys.time);
    }
    std::fs::remove_dir_all(&dir).unwrap();
}
