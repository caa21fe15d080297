//! End-to-end properties of full closed-loop runs.

use intercon::analysis::{certify_nsps, consensus_metrics, TrackingSeries, SUP_BAND, TERMINAL_WINDOW};
use intercon::linalg::jacobi_eigen;
use intercon::{run, run_ensemble, ExperimentConfig, SimConfig, Simulation};

fn config(overrides: &[&str]) -> SimConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::defaults_with(&o).unwrap().sim
}

#[test]
fn virtual_layer_settles_into_band() {
    let sim = Simulation::new(config(&["noise.power=0.0"])).unwrap();
    let trace = sim.run();
    let alone = sim.run_virtual_layer().unwrap();
    let p_min = jacobi_eigen(&sim.design().p).min();
    let mut worst = 0.0f64;
    for (k, &v_alone) in alone.iter().enumerate() {
        // the auxiliary systems do not depend on the plants
        assert!((trace.v_e(k) - v_alone).abs() <= 1e-9 * v_alone.max(1.0));
        // each agent's error is bounded by its share of V_e
        let lyapunov_bound = (trace.v_e(k) / p_min).sqrt();
        for i in 0..trace.n_agents() {
            let err = trace.virtual_error(k, i).abs();
            assert!(err <= lyapunov_bound * (1.0 + 1e-9) + 1e-12);
            if trace.time(k) >= 10.0 {
                worst = worst.max(err);
            }
        }
    }
    assert!(worst <= 0.15, "virtual tracking error after 10 s: {worst}");
}

#[test]
fn single_member_ensemble_equals_run() {
    let cfg = config(&["run.horizon=1.0"]);
    let single = run(&cfg).unwrap();
    let ens = run_ensemble(&cfg, 1).unwrap();
    assert_eq!(ens.traces.len(), 1);
    assert_eq!(ens.traces[0], single);
    assert_eq!(ens.summary.runs, 1);
    assert_eq!(ens.summary.diverged, 0);
}

#[test]
fn noiseless_ensemble_members_coincide() {
    let ens = run_ensemble(&config(&["run.horizon=1.0", "noise.power=0.0"]), 3).unwrap();
    assert_eq!(ens.traces[0], ens.traces[1]);
    assert_eq!(ens.traces[1], ens.traces[2]);
}

#[test]
fn noisy_members_differ_but_share_initial_state() {
    let ens = run_ensemble(&config(&["run.horizon=0.5"]), 2).unwrap();
    assert_eq!(ens.traces[0].row(0), ens.traces[1].row(0));
    assert_ne!(ens.traces[0], ens.traces[1]);
}

#[test]
fn equilibrium_start_without_disturbance_stays_small() {
    // agents and auxiliary systems start exactly on the leader at rest
    let cfg = config(&[
        "noise.power=0.0",
        "run.horizon=2.0",
        "leader.amplitude=0.0",
        "initial.x0=[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]",
    ]);
    let trace = run(&cfg).unwrap();
    for k in 0..trace.len() {
        for i in 0..4 {
            assert!(trace.tracking_error(k, i).abs() < 1e-12);
        }
    }
}

/// Two disjoint 20-run batches of the reference experiment.
#[test]
fn reference_ensemble_metrics_are_batch_stable() {
    let sim = Simulation::new(config(&[])).unwrap();
    let batch = |members: std::ops::Range<u64>| -> Vec<TrackingSeries> {
        sim.map_members(members, |_, tr| TrackingSeries::from(&tr))
    };
    let a = batch(0..20);
    let b = batch(20..40);
    let ma = consensus_metrics(&a).unwrap();
    let mb = consensus_metrics(&b).unwrap();
    for i in 0..4 {
        let (x, y) = (ma.mean_abs_error[i], mb.mean_abs_error[i]);
        assert!(x.is_finite() && y.is_finite());
        assert!((x - y).abs() <= 0.2 * x.max(y), "agent {i}: {x} vs {y}");
    }

    let window_start = sim.config().run.horizon - TERMINAL_WINDOW;
    let band = |t: f64| if t >= window_start { SUP_BAND } else { f64::INFINITY };
    let cert = certify_nsps(&a, 0.1, band, sim.controller_diagnostics()).unwrap();
    assert!(cert.pass, "min fraction {}", cert.min_fraction);
    assert!(cert.agents.iter().all(|d| d.xi_star > 0.0 && d.varpi_noise.is_finite()));
}
