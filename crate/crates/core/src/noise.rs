//! Colored disturbance: first-order low-pass filter driven by held Gaussian
//! white noise.
//!
//! The white stage is piecewise constant, redrawn every `correlation_time`
//! from N(0, power / correlation_time). The filter
//! `time_constant · ξ̇ = −ξ + w` is advanced with its exact exponential
//! update, which is exact while `w` is held.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Disturbance dimension m.
    pub dim: usize,
    /// Filter time constant, s.
    pub time_constant: f64,
    /// White-noise power (variance · s).
    pub power: f64,
    /// Hold period of the white-noise stage, s.
    pub correlation_time: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { dim: 1, time_constant: 0.1, power: 1.0, correlation_time: 0.1 }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("noise dimension must be >= 1".into()));
        }
        if !(self.time_constant > 0.0 && self.correlation_time > 0.0) {
            return Err(Error::Validation("noise time constant and correlation time must be > 0".into()));
        }
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(Error::Validation(format!("noise power must be >= 0, got {}", self.power)));
        }
        Ok(())
    }

    /// Per-sample standard deviation of the held white noise.
    pub fn white_std(&self) -> f64 {
        (self.power / self.correlation_time).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct NoiseProcess {
    params: NoiseParams,
    rng: ChaCha8Rng,
    xi: DVector<f64>,
    w: DVector<f64>,
    /// Time since the last white-noise draw; `None` before the first draw.
    held_for: Option<f64>,
}

impl NoiseProcess {
    pub fn new(params: NoiseParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            xi: DVector::zeros(params.dim),
            w: DVector::zeros(params.dim),
            held_for: None,
        })
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn held_white(&self) -> &DVector<f64> {
        &self.w
    }

    /// Redraws the white sample if its hold period has elapsed. Call at the
    /// start of every step, before [`Self::value_after`] or [`Self::advance`].
    pub fn begin_step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Validation(format!("dt must be > 0, got {dt}")));
        }
        let tc = self.params.correlation_time;
        if dt > tc * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, tc });
        }
        let due = match self.held_for {
            None => true,
            Some(h) => h >= tc * (1.0 - 1e-9),
        };
        if due {
            let std = self.params.white_std();
            for k in 0..self.params.dim {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                self.w[k] = std * z;
            }
            self.held_for = Some(0.0);
        }
        Ok(())
    }

    /// ξ at `offset` seconds into the current step (exact under the held w).
    pub fn value_after(&self, offset: f64) -> DVector<f64> {
        let decay = (-offset / self.params.time_constant).exp();
        &self.xi * decay + &self.w * (1.0 - decay)
    }

    /// Completes the current step.
    pub fn advance(&mut self, dt: f64) {
        self.xi = self.value_after(dt);
        self.held_for = self.held_for.map(|h| h + dt);
    }

    /// One full step; returns the new ξ.
    pub fn step(&mut self, dt: f64) -> Result<&DVector<f64>> {
        self.begin_step(dt)?;
        self.advance(dt);
        Ok(&self.xi)
    }
}

/// Empirical ξ* = max over time of the ensemble mean of ‖ξ(t)‖².
pub fn second_moment_bound(params: &NoiseParams, horizon: f64, dt: f64, ensemble: usize, seed: u64) -> Result<f64> {
    if ensemble < 10 {
        return Err(Error::Validation(format!("ensemble must have >= 10 members, got {ensemble}")));
    }
    params.validate()?;
    let steps = (horizon / dt).round() as usize;
    let sums = (0..ensemble as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut p = NoiseProcess::new(*params, rng::derive(seed, r + 1))?;
            let mut out = Vec::with_capacity(steps);
            for _ in 0..steps {
                out.push(p.step(dt)?.norm_squared());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0.0f64;
    for k in 0..steps {
        let mean = sums.iter().map(|s| s[k]).sum::<f64>() / ensemble as f64;
        best = best.max(mean);
    }
    Ok(best)
}
