//! Derives the frozen tracking band used by the closed-loop acceptance check.
//!
//! Run with `cargo test -p intercon-core --release --test calibration -- --ignored --nocapture`.
//! Members 1000..1100 are disjoint from the acceptance members 0..20.

use intercon::analysis::{quantile, TrackingSeries};
use intercon::{ExperimentConfig, Simulation};

#[test]
#[ignore = "100 full closed-loop runs; used once to freeze the band"]
fn calibrate_tracking_band() {
    let cfg = ExperimentConfig::defaults_with(&[]).unwrap().sim;
    let sim = Simulation::new(cfg).unwrap();
    let stats = sim.map_members(1000..1100, |_, tr| {
        let s = TrackingSeries::from(&tr);
        let theta = (1..=tr.n_agents()).flat_map(|i| tr.column(&format!("theta_norm{i}")).unwrap()).fold(0.0, f64::max);
        (s.mean_error_after(15.0), s.sup_error_after(15.0), s.diverged, theta)
    });
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let sups: Vec<f64> = stats.iter().map(|s| s.1).collect();
    println!("diverged: {}", stats.iter().filter(|s| s.2).count());
    println!("max weight norm: {:.4}", stats.iter().map(|s| s.3).fold(0.0, f64::max));
    for q in [0.5, 0.9, 0.95, 1.0] {
        println!("q{q}: final-5s mean {:.6}  sup {:.6}", quantile(&means, q), quantile(&sups, q));
    }
}
