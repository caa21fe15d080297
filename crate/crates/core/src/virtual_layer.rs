//! Per-agent auxiliary linear systems η̇ᵢ = Aηᵢ + BKζᵢ, coupled through the
//! intermittent distributed signal ζᵢ, and the leader reference.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::integrate::rk4_step;
use crate::schedule::Mode;

/// Smooth leader signal with closed-form derivatives.
pub trait LeaderRef: Send + Sync {
    /// d^order z_r / dt^order at `t`.
    fn derivative(&self, t: f64, order: usize) -> f64;

    /// [z_r, z_r', …, z_r^(n−1)].
    fn stacked(&self, t: f64, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|l| self.derivative(t, l)))
    }
}

/// z_r(t) = amplitude · sin(frequency · t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SineLeader {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for SineLeader {
    fn default() -> Self {
        Self { amplitude: 1.0, frequency: 0.5 }
    }
}

impl LeaderRef for SineLeader {
    fn derivative(&self, t: f64, order: usize) -> f64 {
        let phase = self.frequency * t + order as f64 * std::f64::consts::FRAC_PI_2;
        self.amplitude * self.frequency.powi(order as i32) * phase.sin()
    }
}

/// Checks |z_r^(l)| ≤ c_z for l = 1..=n on a grid of spacing `step` over [0, horizon].
pub fn check_derivative_bound(leader: &dyn LeaderRef, n: usize, c_z: f64, horizon: f64, step: f64) -> Result<()> {
    let samples = (horizon / step).ceil() as usize;
    for k in 0..=samples {
        let t = k as f64 * step;
        for l in 1..=n {
            let d = leader.derivative(t, l);
            if d.abs() > c_z {
                return Err(Error::Validation(format!(
                    "leader derivative of order {l} reaches {d:.4} at t = {t:.3}, above c_z = {c_z}"
                )));
            }
        }
    }
    Ok(())
}

/// Graph, gain and chain order shared by all auxiliary systems.
#[derive(Debug, Clone)]
pub struct VirtualLayer {
    graph: Graph,
    k: RowDVector<f64>,
    order: usize,
}

impl VirtualLayer {
    pub fn new(graph: Graph, k: RowDVector<f64>) -> Self {
        let order = k.len();
        Self { graph, k, order }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn gain(&self) -> &RowDVector<f64> {
        &self.k
    }

    /// ζᵢ = Σⱼ aᵢⱼ(ηⱼ − ηᵢ) + bᵢ(z̄_r − ηᵢ) while ON, zero while OFF.
    pub fn zeta(&self, i: usize, etas: &[DVector<f64>], zbar: &DVector<f64>, mode: Mode) -> DVector<f64> {
        if mode == Mode::Off {
            return DVector::zeros(self.order);
        }
        let mut z = (zbar - &etas[i]) * self.graph.pinning()[i];
        for (j, a) in self.graph.neighbors(i) {
            z += (&etas[j] - &etas[i]) * a;
        }
        z
    }

    pub fn zetas(&self, etas: &[DVector<f64>], zbar: &DVector<f64>, mode: Mode) -> Vec<DVector<f64>> {
        (0..etas.len()).map(|i| self.zeta(i, etas, zbar, mode)).collect()
    }

    /// η̇ = Aη + BKζ for the chain A, B = e_n.
    pub fn eta_derivative(&self, eta: &DVector<f64>, zeta: &DVector<f64>) -> DVector<f64> {
        let n = self.order;
        let mut d = DVector::zeros(n);
        for q in 0..n - 1 {
            d[q] = eta[q + 1];
        }
        d[n - 1] = self.k.dot(&zeta.transpose());
        d
    }

    /// One step of every auxiliary system with ζ held over the step.
    pub fn virtual_step(&self, etas: &[DVector<f64>], zetas: &[DVector<f64>], dt: f64) -> Result<Vec<DVector<f64>>> {
        etas.iter()
            .zip(zetas)
            .enumerate()
            .map(|(i, (eta, zeta))| {
                let next = rk4_step(eta, dt, |_, y| self.eta_derivative(y, zeta));
                if next.iter().all(|v| v.is_finite()) {
                    Ok(next)
                } else {
                    Err(Error::Divergence { t: f64::NAN, what: format!("virtual state of agent {i}") })
                }
            })
            .collect()
    }
}

/// V_e = Σᵢ (ηᵢ − z̄_r)ᵀ P (ηᵢ − z̄_r).
pub fn lyapunov_ve(etas: &[DVector<f64>], zbar: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    etas.iter()
        .map(|eta| {
            let s = eta - zbar;
            (s.transpose() * p * &s)[(0, 0)]
        })
        .sum()
}
