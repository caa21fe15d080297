//! Monte Carlo properties of the colored-noise generator.

use intercon::noise::{second_moment_bound, NoiseParams, NoiseProcess};

/// Time-averaged stationary variance of the held-sample filter, obtained by
/// iterating the joint second moments of (ξ, w) step by step until periodic.
fn stationary_variance_oracle(params: &NoiseParams, dt: f64) -> f64 {
    let per_hold = (params.correlation_time / dt).round() as usize;
    let b = (-dt / params.time_constant).exp();
    let s2 = params.power / params.correlation_time;
    let mut v = 0.0f64;
    let mut avg = 0.0;
    for _period in 0..200 {
        let mut c = 0.0; // fresh w is independent of ξ
        avg = 0.0;
        for _ in 0..per_hold {
            v = b * b * v + 2.0 * b * (1.0 - b) * c + (1.0 - b) * (1.0 - b) * s2;
            c = b * c + (1.0 - b) * s2;
            avg += v / per_hold as f64;
        }
    }
    avg
}

fn path(params: NoiseParams, seed: u64, dt: f64, steps: usize) -> Vec<f64> {
    let mut p = NoiseProcess::new(params, seed).unwrap();
    (0..steps).map(|_| p.step(dt).unwrap()[0]).collect()
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

#[test]
fn empirical_second_moment_matches_discretized_filter() {
    let params = NoiseParams::default();
    let dt = 1e-4;
    let xs = path(params, 23341, dt, 1_000_000);
    let emp = xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64;
    let oracle = stationary_variance_oracle(&params, dt);
    assert!((emp - oracle).abs() <= 0.25 * oracle, "empirical {emp}, oracle {oracle}");
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(mean.abs() < 0.1 * oracle.sqrt(), "mean {mean}");
}

#[test]
fn distinct_seeds_are_uncorrelated() {
    let a = path(NoiseParams::default(), 23341, 1e-3, 100_000);
    let b = path(NoiseParams::default(), 34243, 1e-3, 100_000);
    let (ma, mb) = (a.iter().sum::<f64>() / 1e5, b.iter().sum::<f64>() / 1e5);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / 1e5;
    let rho = cov / (variance(&a) * variance(&b)).sqrt();
    assert!(rho.abs() < 0.1, "cross-correlation {rho}");
}

#[test]
fn windowed_variance_is_stationary() {
    let xs = path(NoiseParams::default(), 34241, 1e-3, 400_000);
    let n = xs.len();
    let early = variance(&xs[n / 4..n / 2]);
    let late = variance(&xs[3 * n / 4..]);
    assert!((early - late).abs() <= 0.2 * late, "{early} vs {late}");
}

#[test]
fn second_moment_estimate_is_batch_stable() {
    let params = NoiseParams::default();
    let a = second_moment_bound(&params, 20.0, 1e-3, 50, 1).unwrap();
    let b = second_moment_bound(&params, 20.0, 1e-3, 50, 2).unwrap();
    assert!(a > 0.0 && a.is_finite());
    assert!((a - b).abs() <= 0.1 * a.max(b), "{a} vs {b}");
}

#[test]
fn second_moment_scales_with_power() {
    let base = NoiseParams::default();
    let doubled = NoiseParams { power: 2.0, ..base };
    let a = second_moment_bound(&base, 20.0, 1e-3, 50, 7).unwrap();
    let b = second_moment_bound(&doubled, 20.0, 1e-3, 50, 8).unwrap();
    assert!((b / a - 2.0).abs() <= 0.15 * 2.0, "ratio {}", b / a);
}

#[test]
fn ensemble_below_ten_is_rejected() {
    assert!(second_moment_bound(&NoiseParams::default(), 1.0, 1e-3, 9, 1).is_err());
}

#[test]
fn recursion_oracle_agrees_with_closed_form() {
    // τ = t_c: variance at the draw instants is s²(1 − a)/(1 + a) with a = e^{-1};
    // averaging b²V₀ + (1 − b)²s² over the hold gives the time mean.
    let params = NoiseParams::default();
    let s2 = 10.0;
    let a = (-1.0f64).exp();
    let v0 = s2 * (1.0 - a) / (1.0 + a);
    let mean_b2 = 0.5 * (1.0 - (-2.0f64).exp());
    let mean_one_minus_b_sq = 1.0 - 2.0 * (1.0 - a) + mean_b2;
    let closed = mean_b2 * v0 + mean_one_minus_b_sq * s2;
    let oracle = stationary_variance_oracle(&params, 1e-5);
    assert!((oracle - closed).abs() < 1e-3 * closed, "{oracle} vs {closed}");
}
