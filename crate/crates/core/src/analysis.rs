//! Post-processing of traces and ensembles.
//!
//! * ON/OFF and global Lyapunov envelopes for V_e along a trace.
//! * Empirical "practically stable in probability" certification: the
//!   fraction of runs whose tracking error stays inside a band.
//! * Terminal tracking-consensus statistics.

use std::io::Write;

use serde::Serialize;

use crate::controller::ControllerDiagnostics;
use crate::design::DesignOutput;
use crate::engine::SimTrace;
use crate::error::{Error, Result};
use crate::schedule::ModeSchedule;

/// Relative slack on every envelope comparison.
pub const ENVELOPE_TOL: f64 = 0.05;
/// Length of the terminal window over which tracking is judged, s.
pub const TERMINAL_WINDOW: f64 = 5.0;
// The three constants below were frozen from 100 closed-loop runs of the
// reference configuration (ensemble members 1000..1100, disjoint from the
// members used for acceptance) with `tests/calibration.rs`.

/// 95th percentile of a run's terminal statistic: the largest over agents of
/// the time-mean of |z_i − z_r| over the terminal window (median 0.1003).
pub const TRACKING_BAND: f64 = 0.1117;
/// 95th percentile of max_i sup |z_i − z_r| over the terminal window (median 0.2823).
pub const SUP_BAND: f64 = 0.3846;
/// Bound on any agent's adaptive-weight norm; the calibration maximum was 4.13.
pub const WEIGHT_NORM_BOUND: f64 = 10.0;
/// Minimum ensemble size for the probability certificate.
pub const MIN_ENSEMBLE: usize = 20;

/// Constants of the global bound V_e(t) ≤ π*·exp(−Λt/T) + ε*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalEnvelope {
    pub v0: f64,
    pub lambda: f64,
    pub t_max: f64,
    pub kappa: f64,
    pub pi1: f64,
    pub pi2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub pi_star: f64,
    pub eps_star: f64,
}

impl GlobalEnvelope {
    /// Builds the constants from V_e(t₀), Λ > 0, T and the design rates.
    pub fn new(v0: f64, lambda: f64, t_max: f64, c_beta: f64, delta_alpha: f64, delta_beta: f64) -> Self {
        let growth = (delta_beta * t_max).exp();
        let kappa = (c_beta / delta_beta + c_beta / delta_alpha) * growth - c_beta / delta_beta;
        let geom = kappa / (1.0 - lambda.exp());
        let pi1 = v0 * (-lambda).exp() + geom;
        let eps1 = -geom + kappa + c_beta / delta_alpha;
        let pi2 = growth * pi1;
        let eps2 = growth * eps1 + kappa;
        Self { v0, lambda, t_max, kappa, pi1, pi2, eps1, eps2, pi_star: pi1.max(pi2), eps_star: eps1.max(eps2) }
    }

    pub fn bound(&self, t: f64) -> f64 {
        self.pi_star * (-self.lambda * t / self.t_max).exp() + self.eps_star
    }
}

/// ON-mode bound from the value at the start of the ON window.
pub fn on_bound(v_start: f64, elapsed: f64, c_beta: f64, delta_alpha: f64) -> f64 {
    let d = (-delta_alpha * elapsed).exp();
    v_start * d + c_beta / delta_alpha * (1.0 - d)
}

/// OFF-mode bound from the value at the start of the OFF window.
pub fn off_bound(v_start: f64, elapsed: f64, c_beta: f64, delta_beta: f64) -> f64 {
    let g = (delta_beta * elapsed).exp();
    v_start * g + c_beta / delta_beta * (g - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodMargin {
    pub kappa: usize,
    /// min over the ON window of bound·(1 + tol) − V_e.
    pub on_margin: f64,
    /// Same for the OFF window; +∞ when the window is empty or outside the trace.
    pub off_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub samples: usize,
    pub tolerance: f64,
    pub periods: Vec<PeriodMargin>,
    pub on_violations: usize,
    pub off_violations: usize,
    pub global_violations: usize,
    pub worst_on_margin: f64,
    pub worst_off_margin: f64,
    pub worst_global_margin: f64,
    /// `None` when the schedule's Λ is not positive.
    pub global: Option<GlobalEnvelope>,
}

impl EnvelopeReport {
    pub fn violations(&self) -> usize {
        self.on_violations + self.off_violations + self.global_violations
    }
}

/// Checks V_e samples on the uniform grid `k·dt` against all three envelopes.
pub fn check_envelope_series(
    v_e: &[f64],
    dt: f64,
    design: &DesignOutput,
    schedule: &ModeSchedule,
    tol: f64,
) -> EnvelopeReport {
    let (ca, da, db) = (design.c_beta, design.delta_alpha, design.delta_beta);
    let tick = |t: f64| (t / dt).round() as usize;
    let mut report = EnvelopeReport {
        samples: v_e.len(),
        tolerance: tol,
        periods: Vec::new(),
        on_violations: 0,
        off_violations: 0,
        global_violations: 0,
        worst_on_margin: f64::INFINITY,
        worst_off_margin: f64::INFINITY,
        worst_global_margin: f64::INFINITY,
        global: None,
    };
    if v_e.is_empty() {
        return report;
    }
    let slack = |bound: f64| bound * (1.0 + tol) + 1e-12 * bound.abs().max(1.0);

    for (kappa, p) in schedule.periods().iter().enumerate() {
        let (k_on, k_off, k_next) = (tick(p.tau_on), tick(p.tau_off), tick(p.tau_next));
        if k_on >= v_e.len() {
            break;
        }
        let mut margin = PeriodMargin { kappa, on_margin: f64::INFINITY, off_margin: f64::INFINITY };
        let v_on = v_e[k_on];
        for k in k_on..k_off.min(v_e.len()) {
            let m = slack(on_bound(v_on, (k - k_on) as f64 * dt, ca, da)) - v_e[k];
            margin.on_margin = margin.on_margin.min(m);
            if m < 0.0 {
                report.on_violations += 1;
            }
        }
        if k_off < v_e.len() {
            let v_off = v_e[k_off];
            // the OFF bound also holds at the closing boundary τ^[κ+1]
            for k in k_off..=k_next.min(v_e.len() - 1) {
                if k_next == k_off {
                    break;
                }
                let m = slack(off_bound(v_off, (k - k_off) as f64 * dt, ca, db)) - v_e[k];
                margin.off_margin = margin.off_margin.min(m);
                if m < 0.0 {
                    report.off_violations += 1;
                }
            }
        }
        report.worst_on_margin = report.worst_on_margin.min(margin.on_margin);
        report.worst_off_margin = report.worst_off_margin.min(margin.off_margin);
        report.periods.push(margin);
    }

    let cert = schedule.certify(da, db);
    if cert.lambda > 0.0 {
        let env = GlobalEnvelope::new(v_e[0], cert.lambda, cert.t_max, ca, da, db);
        for (k, v) in v_e.iter().enumerate() {
            let m = slack(env.bound(k as f64 * dt)) - v;
            report.worst_global_margin = report.worst_global_margin.min(m);
            if m < 0.0 {
                report.global_violations += 1;
            }
        }
        report.global = Some(env);
    }
    report
}

pub fn check_envelopes(trace: &SimTrace, design: &DesignOutput, schedule: &ModeSchedule) -> EnvelopeReport {
    check_envelope_series(&trace.v_e_series(), trace.dt, design, schedule, ENVELOPE_TOL)
}

/// Tracking errors and disturbance energy of one run, agent-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSeries {
    pub times: Vec<f64>,
    /// |z_i − z_r| per agent per grid time.
    pub abs_error: Vec<Vec<f64>>,
    /// ‖ξ_i‖² per agent per grid time (may be empty).
    pub xi_sq: Vec<Vec<f64>>,
    pub diverged: bool,
}

impl From<&SimTrace> for TrackingSeries {
    fn from(tr: &SimTrace) -> Self {
        let len = tr.len();
        let n_agents = tr.n_agents();
        let xi_cols: Vec<Vec<usize>> = (0..n_agents)
            .map(|i| (0..).map_while(|k| tr.column_index(&format!("xi{}_{}", i + 1, k + 1))).collect())
            .collect();
        Self {
            times: tr.times(),
            abs_error: (0..n_agents).map(|i| (0..len).map(|k| tr.tracking_error(k, i).abs()).collect()).collect(),
            xi_sq: xi_cols
                .iter()
                .map(|cols| (0..len).map(|k| cols.iter().map(|&c| tr.row(k)[c].powi(2)).sum()).collect())
                .collect(),
            diverged: tr.divergence.is_some(),
        }
    }
}

impl TrackingSeries {
    pub fn n_agents(&self) -> usize {
        self.abs_error.len()
    }

    /// max_i sup_{t ≥ from} |z_i − z_r|; +∞ for diverged runs.
    pub fn sup_error_after(&self, from: f64) -> f64 {
        if self.diverged {
            return f64::INFINITY;
        }
        let start = self.times.partition_point(|&t| t < from - 1e-12);
        self.abs_error.iter().flat_map(|s| s[start..].iter().copied()).fold(0.0, f64::max)
    }

    /// max_i of the time-mean of |z_i − z_r| over t ≥ from; +∞ for diverged runs.
    pub fn mean_error_after(&self, from: f64) -> f64 {
        if self.diverged {
            return f64::INFINITY;
        }
        let start = self.times.partition_point(|&t| t < from - 1e-12);
        let len = (self.times.len() - start).max(1) as f64;
        self.abs_error.iter().map(|s| s[start..].iter().sum::<f64>() / len).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentNoiseDiagnostics {
    /// Empirical ξ*: max over time of E_p‖ξ_i‖².
    pub xi_star: f64,
    pub l_a: f64,
    pub c_gamma: f64,
    /// The observable part l^[a]·ξ* of ϖ_i (l^[b] depends on unknown ideal weights).
    pub varpi_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub l0: f64,
    pub times: Vec<f64>,
    /// Fraction of runs with every agent inside the band, per grid time.
    pub fraction_inside: Vec<f64>,
    pub min_fraction: f64,
    pub pass: bool,
    pub agents: Vec<AgentNoiseDiagnostics>,
    /// E_p|z_i − z_r| at the last grid time.
    pub terminal_mean_abs_error: Vec<f64>,
}

/// Empirical probability certificate: passes iff at every grid time at least
/// `1 − l0` of the runs keep all agents within `band(t)`. Diverged runs count
/// as outside everywhere.
pub fn certify_nsps<F>(
    ensemble: &[TrackingSeries],
    l0: f64,
    band: F,
    controller: &ControllerDiagnostics,
) -> Result<StabilityReport>
where
    F: Fn(f64) -> f64,
{
    if ensemble.len() < MIN_ENSEMBLE {
        return Err(Error::Validation(format!(
            "probability certificate needs >= {MIN_ENSEMBLE} runs, got {}",
            ensemble.len()
        )));
    }
    if !(0.0..1.0).contains(&l0) {
        return Err(Error::Validation(format!("l0 must lie in [0, 1), got {l0}")));
    }
    let reference = ensemble.iter().max_by_key(|s| s.times.len()).expect("non-empty");
    let times = reference.times.clone();
    let runs = ensemble.len() as f64;
    let n_agents = reference.n_agents();

    let fraction_inside: Vec<f64> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let b = band(t);
            let inside = ensemble
                .iter()
                .filter(|s| !s.diverged && k < s.times.len() && s.abs_error.iter().all(|e| e[k] <= b))
                .count();
            inside as f64 / runs
        })
        .collect();
    let min_fraction = fraction_inside.iter().copied().fold(1.0, f64::min);

    let ok: Vec<&TrackingSeries> = ensemble.iter().filter(|s| !s.diverged).collect();
    let denom = ok.len().max(1) as f64;
    let agents = (0..n_agents)
        .map(|i| {
            let xi_star = (0..times.len())
                .map(|k| ok.iter().filter_map(|s| s.xi_sq.get(i).and_then(|x| x.get(k))).sum::<f64>() / denom)
                .fold(0.0, f64::max);
            AgentNoiseDiagnostics {
                xi_star,
                l_a: controller.l_a,
                c_gamma: controller.c_gamma,
                varpi_noise: controller.l_a * xi_star,
            }
        })
        .collect();
    let terminal_mean_abs_error = (0..n_agents)
        .map(|i| ok.iter().map(|s| s.abs_error[i].last().copied().unwrap_or(0.0)).sum::<f64>() / denom)
        .collect();

    Ok(StabilityReport {
        runs: ensemble.len(),
        l0,
        times,
        pass: min_fraction >= 1.0 - l0,
        fraction_inside,
        min_fraction,
        agents,
        terminal_mean_abs_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusMetrics {
    pub window_start: f64,
    pub runs: usize,
    /// Ensemble average of the time-mean of |z_i − z_r| over the window.
    pub mean_abs_error: Vec<f64>,
    /// Ensemble average of the time-max of |z_i − z_r| over the window.
    pub max_abs_error: Vec<f64>,
    /// Estimate of ε_{i,v}: sup over the window of E_p|z_i − z_r|.
    pub eps_v: Vec<f64>,
}

/// Terminal statistics over the final 25 % of the horizon (non-diverged runs).
pub fn consensus_metrics(ensemble: &[TrackingSeries]) -> Result<ConsensusMetrics> {
    let ok: Vec<&TrackingSeries> = ensemble.iter().filter(|s| !s.diverged).collect();
    let first = ok.first().ok_or_else(|| Error::Validation("no non-diverged runs".into()))?;
    let horizon = *first.times.last().ok_or_else(|| Error::Validation("empty trace".into()))?;
    let window_start = 0.75 * horizon;
    let start = first.times.partition_point(|&t| t < window_start - 1e-12);
    let len = first.times.len();
    if start >= len {
        return Err(Error::Validation("final-quartile window is empty".into()));
    }
    let n_agents = first.n_agents();
    let runs = ok.len() as f64;
    let mut mean = vec![0.0; n_agents];
    let mut max = vec![0.0; n_agents];
    let mut eps_v = vec![0.0f64; n_agents];
    for i in 0..n_agents {
        for s in &ok {
            let w = &s.abs_error[i][start..len];
            mean[i] += w.iter().sum::<f64>() / w.len() as f64 / runs;
            max[i] += w.iter().copied().fold(0.0, f64::max) / runs;
        }
        for k in start..len {
            let e = ok.iter().map(|s| s.abs_error[i][k]).sum::<f64>() / runs;
            eps_v[i] = eps_v[i].max(e);
        }
    }
    Ok(ConsensusMetrics { window_start, runs: ok.len(), mean_abs_error: mean, max_abs_error: max, eps_v })
}

/// Nearest-rank quantile (q in (0, 1]) of finite values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Writes the per-time certification curve as CSV.
pub fn write_stability_csv<W: Write>(report: &StabilityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "fraction_inside"])?;
    for (t, f) in report.times.iter().zip(&report.fraction_inside) {
        w.write_record([t.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
