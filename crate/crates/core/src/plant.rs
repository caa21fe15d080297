//! Uncertain strict-feedback agents
//!
//! ```text
//! ẋ_q = x_{q+1} + f_q(x̄_q) + g_q(x̄_q)ᵀξ,   q < n
//! ẋ_n = u       + f_n(x̄_n) + g_n(x̄_n)ᵀξ
//! ```
//!
//! with output z = x₁. The drift terms are unknown to the controller; the
//! noise gains are known to it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::rk4_step;

/// Magnitude beyond which a state component counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Plant nonlinearities. `q` is 0-based; implementations read only `x[..=q]`.
pub trait AgentModel: Send + Sync {
    fn order(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, agent: usize, q: usize, x: &DVector<f64>) -> f64;
    fn noise_gain(&self, agent: usize, q: usize, x: &DVector<f64>) -> DVector<f64>;
}

/// Second-order heterogeneous example with scalar disturbance:
///
/// f₁ = 0.5·i·x₁ sin x₁ cos x₁, f₂ = 0.9·i·x₁ sin x₂ cos 0.3x₁,
/// g₁ = 0.5·x₁ sin x₁,           g₂ = 0.5·x₁ sin x₁ cos x₂,
///
/// where i is the 1-based agent number.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeterogeneousExample;

impl AgentModel for HeterogeneousExample {
    fn order(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, agent: usize, q: usize, x: &DVector<f64>) -> f64 {
        let i = (agent + 1) as f64;
        let x1 = x[0];
        match q {
            0 => 0.5 * i * x1 * x1.sin() * x1.cos(),
            1 => 0.9 * i * x1 * x[1].sin() * (0.3 * x1).cos(),
            _ => unreachable!("second-order model"),
        }
    }

    fn noise_gain(&self, _agent: usize, q: usize, x: &DVector<f64>) -> DVector<f64> {
        let x1 = x[0];
        let g = match q {
            0 => 0.5 * x1 * x1.sin(),
            1 => 0.5 * x1 * x1.sin() * x[1].cos(),
            _ => unreachable!("second-order model"),
        };
        DVector::from_element(1, g)
    }
}

/// Pure integrator chain: f ≡ 0, g ≡ 0.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorChain {
    pub order: usize,
    pub noise_dim: usize,
}

impl AgentModel for IntegratorChain {
    fn order(&self) -> usize {
        self.order
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, _agent: usize, _q: usize, _x: &DVector<f64>) -> f64 {
        0.0
    }

    fn noise_gain(&self, _agent: usize, _q: usize, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.noise_dim)
    }
}

/// Config-selectable plant models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    HeterogeneousExample,
    IntegratorChain,
}

impl ModelKind {
    pub fn build(self, order: usize, noise_dim: usize) -> Result<Box<dyn AgentModel>> {
        match self {
            ModelKind::HeterogeneousExample => {
                if order != 2 || noise_dim != 1 {
                    return Err(Error::Validation(format!(
                        "heterogeneous_example is second-order with m = 1 (got n = {order}, m = {noise_dim})"
                    )));
                }
                Ok(Box::new(HeterogeneousExample))
            }
            ModelKind::IntegratorChain => Ok(Box::new(IntegratorChain { order, noise_dim })),
        }
    }
}

/// Right-hand side of the agent dynamics.
pub fn plant_derivative(
    model: &dyn AgentModel,
    agent: usize,
    x: &DVector<f64>,
    u: f64,
    xi: &DVector<f64>,
) -> DVector<f64> {
    let n = model.order();
    DVector::from_iterator(
        n,
        (0..n).map(|q| {
            let next = if q + 1 < n { x[q + 1] } else { u };
            next + model.drift(agent, q, x) + model.noise_gain(agent, q, x).dot(xi)
        }),
    )
}

/// Rejects non-finite or runaway states, naming the offending component.
pub fn check_state(x: &DVector<f64>, agent: usize, t: f64) -> Result<()> {
    match x.iter().position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        None => Ok(()),
        Some(q) => Err(Error::Divergence { t, what: format!("x[{}] of agent {agent} = {}", q + 1, x[q]) }),
    }
}

/// One RK4 step with u and ξ held.
pub fn plant_step(
    model: &dyn AgentModel,
    agent: usize,
    x: &DVector<f64>,
    u: f64,
    xi: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be > 0, got {dt}")));
    }
    let next = rk4_step(x, dt, |_, y| plant_derivative(model, agent, y, u, xi));
    check_state(&next, agent, f64::NAN)?;
    Ok(next)
}
