//! Intermittent ON/OFF communication timeline.
//!
//! Period κ is ON on `[tau_on, tau_off)` and OFF on `[tau_off, tau_next)`;
//! `tau_next` of one period is `tau_on` of the next and the first period
//! starts at 0.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack below which Λ^[κ] counts as zero (the strict boundary case).
pub const LAMBDA_REL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub tau_on: f64,
    pub tau_off: f64,
    pub tau_next: f64,
}

impl Period {
    pub fn on_duration(&self) -> f64 {
        self.tau_off - self.tau_on
    }

    pub fn off_duration(&self) -> f64 {
        self.tau_next - self.tau_off
    }

    pub fn length(&self) -> f64 {
        self.tau_next - self.tau_on
    }
}

/// How OFF durations are drawn relative to the admissible budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffDuration {
    /// OFF = off_fraction · max_off_ratio · ON, every period.
    #[default]
    Fixed,
    /// OFF fraction drawn uniformly from [0, off_fraction] per period.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    pub on_min: f64,
    pub on_max: f64,
    pub off_fraction: f64,
    #[serde(default)]
    pub off_duration: OffDuration,
    pub seed: u64,
    /// Boundaries are rounded to multiples of this step; 0 disables snapping.
    pub grid: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { on_min: 0.5, on_max: 2.0, off_fraction: 0.9, off_duration: OffDuration::Fixed, seed: 1, grid: 1e-3 }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.on_min > 0.0 && self.on_max >= self.on_min && self.on_max.is_finite()) {
            return Err(Error::Validation(format!(
                "ON range must satisfy 0 < on_min <= on_max, got [{}, {}]",
                self.on_min, self.on_max
            )));
        }
        if !(0.0..=1.0).contains(&self.off_fraction) {
            return Err(Error::Validation(format!("off_fraction must lie in [0, 1], got {}", self.off_fraction)));
        }
        if !(self.grid >= 0.0 && self.grid.is_finite()) {
            return Err(Error::Validation(format!("schedule grid must be >= 0, got {}", self.grid)));
        }
        if self.grid > 0.0 && self.on_min < self.grid {
            return Err(Error::Validation("on_min shorter than the schedule grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    periods: Vec<Period>,
    horizon: f64,
}

fn snap(t: f64, grid: f64) -> f64 {
    if grid > 0.0 {
        (t / grid).round() * grid
    } else {
        t
    }
}

impl ModeSchedule {
    /// Validates and wraps an explicit list of periods.
    pub fn from_periods(periods: Vec<Period>, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Validation(format!("horizon must be >= 0, got {horizon}")));
        }
        if periods.is_empty() {
            return Err(Error::Validation("schedule needs at least one period".into()));
        }
        if periods[0].tau_on != 0.0 {
            return Err(Error::Validation("first period must start at t = 0".into()));
        }
        for (k, p) in periods.iter().enumerate() {
            if !(p.tau_on < p.tau_off && p.tau_off <= p.tau_next) {
                return Err(Error::Validation(format!("period {k} is not ordered: {p:?}")));
            }
            if let Some(next) = periods.get(k + 1) {
                if next.tau_on != p.tau_next {
                    return Err(Error::Validation(format!("gap between periods {k} and {}", k + 1)));
                }
            }
        }
        let end = periods.last().map(|p| p.tau_next).unwrap_or(0.0);
        if end < horizon {
            return Err(Error::Validation(format!("schedule ends at {end} before horizon {horizon}")));
        }
        Ok(Self { periods, horizon })
    }

    /// Always-ON schedule.
    pub fn always_on(horizon: f64) -> Self {
        let end = horizon.max(1.0);
        Self { periods: vec![Period { tau_on: 0.0, tau_off: end, tau_next: end }], horizon }
    }

    /// Draws ON durations uniformly from `[on_min, on_max]` and sizes each OFF
    /// window from the admissible ratio until the horizon is covered.
    pub fn generate(params: &ScheduleParams, max_off_ratio: f64, horizon: f64) -> Result<Self> {
        params.validate()?;
        if !(max_off_ratio >= 0.0 && max_off_ratio.is_finite()) {
            return Err(Error::Validation(format!("max_off_ratio must be >= 0, got {max_off_ratio}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut periods = Vec::new();
        let mut t = 0.0;
        loop {
            let on = if params.on_max > params.on_min {
                rng.random_range(params.on_min..=params.on_max)
            } else {
                params.on_min
            };
            let fraction = match params.off_duration {
                OffDuration::Fixed => params.off_fraction,
                OffDuration::Uniform => params.off_fraction * rng.random::<f64>(),
            };
            let tau_off = snap(t + on, params.grid);
            let tau_next = snap(tau_off + fraction * max_off_ratio * (tau_off - t), params.grid);
            periods.push(Period { tau_on: t, tau_off, tau_next });
            t = tau_next;
            if t >= horizon {
                break;
            }
        }
        Self::from_periods(periods, horizon)
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Longest period length observed (the dwell bound T).
    pub fn t_max(&self) -> f64 {
        self.periods.iter().map(Period::length).fold(0.0, f64::max)
    }

    /// Index of the period containing `t` (no horizon check).
    pub fn period_index(&self, t: f64) -> usize {
        self.periods.partition_point(|p| p.tau_next <= t).min(self.periods.len() - 1)
    }

    pub fn mode_at(&self, t: f64) -> Result<Mode> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        let p = &self.periods[self.period_index(t)];
        Ok(if t < p.tau_off { Mode::On } else { Mode::Off })
    }

    /// Per-period Λ^[κ] = δ_α·ON − δ_β·OFF and the global minimum.
    pub fn certify(&self, delta_alpha: f64, delta_beta: f64) -> ScheduleCertificate {
        let periods: Vec<PeriodCertificate> = self
            .periods
            .iter()
            .enumerate()
            .map(|(kappa, p)| {
                let gain = delta_alpha * p.on_duration();
                let lambda = gain - delta_beta * p.off_duration();
                PeriodCertificate { kappa, lambda, feasible: lambda > LAMBDA_REL_EPS * gain }
            })
            .collect();
        let lambda = periods.iter().map(|c| c.lambda).fold(f64::INFINITY, f64::min);
        let feasible = periods.iter().all(|c| c.feasible);
        ScheduleCertificate { periods, lambda, t_max: self.t_max(), feasible }
    }

    /// One row per period: kappa, tau_on, tau_off, tau_next, lambda.
    pub fn write_csv<W: Write>(&self, cert: &ScheduleCertificate, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kappa", "tau_on", "tau_off", "tau_next", "lambda", "feasible"])?;
        for (p, c) in self.periods.iter().zip(&cert.periods) {
            w.write_record([
                c.kappa.to_string(),
                p.tau_on.to_string(),
                p.tau_off.to_string(),
                p.tau_next.to_string(),
                c.lambda.to_string(),
                c.feasible.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodCertificate {
    pub kappa: usize,
    pub lambda: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCertificate {
    pub periods: Vec<PeriodCertificate>,
    /// min over κ of Λ^[κ].
    pub lambda: f64,
    pub t_max: f64,
    pub feasible: bool,
}
