//! Adaptive backstepping controller with Gaussian RBF approximators.
//!
//! Error coordinates `e₁ = z − η₁`, `e_q = x_q − α_{q−1}`; each level q uses
//!
//! ```text
//! α_q = −(𝒦_q + ρ_q²/2 · ‖g_q‖²)·e_q − θ̂_qᵀφ_q      (u for the last level)
//! θ̂̇_q = γ_q(e_q·φ_q − σ_q·θ̂_q)
//! ```
//!
//! Levels are 0-based in code.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::plant::AgentModel;

/// Uniform lattice of Gaussian centres over `[lo, hi]` in every input dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfGrid {
    pub lo: f64,
    pub hi: f64,
    pub per_dim: usize,
}

impl Default for RbfGrid {
    fn default() -> Self {
        Self { lo: -3.0, hi: 3.0, per_dim: 5 }
    }
}

impl RbfGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) || self.per_dim < 2 {
            return Err(Error::Validation("RBF grid needs hi > lo and at least 2 centres per dimension".into()));
        }
        Ok(())
    }

    /// Lattice spacing, also used as the Gaussian width.
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.per_dim - 1) as f64
    }
}

/// Gaussian RBF network φ_j(z) = exp(−‖z − c_j‖² / width²) over a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfNetwork {
    input_dim: usize,
    axis: Vec<f64>,
    width: f64,
    pub weights: DVector<f64>,
}

impl RbfNetwork {
    pub fn new(input_dim: usize, grid: &RbfGrid) -> Result<Self> {
        grid.validate()?;
        if input_dim == 0 {
            return Err(Error::Validation("RBF input dimension must be >= 1".into()));
        }
        let h = grid.spacing();
        let axis: Vec<f64> = (0..grid.per_dim).map(|k| grid.lo + k as f64 * h).collect();
        let size = grid
            .per_dim
            .checked_pow(input_dim as u32)
            .filter(|s| *s <= 1 << 22)
            .ok_or_else(|| Error::Validation(format!("RBF lattice too large: {}^{input_dim}", grid.per_dim)))?;
        Ok(Self { input_dim, axis, width: h, weights: DVector::zeros(size) })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Centre `j` of the lattice, first input dimension varying slowest.
    pub fn center(&self, mut j: usize) -> Vec<f64> {
        let p = self.axis.len();
        let mut c = vec![0.0; self.input_dim];
        for d in (0..self.input_dim).rev() {
            c[d] = self.axis[j % p];
            j /= p;
        }
        c
    }

    /// Basis vector φ(z); the Gaussian factorises over dimensions.
    pub fn basis(&self, z: &[f64]) -> DVector<f64> {
        assert_eq!(z.len(), self.input_dim, "RBF input has wrong dimension");
        let inv_w2 = 1.0 / (self.width * self.width);
        let per = self.axis.len();
        let mut phi = Vec::with_capacity(self.weights.len());
        phi.push(1.0);
        let mut factors = vec![0.0; per];
        for &zd in z {
            for (f, c) in factors.iter_mut().zip(&self.axis) {
                *f = (-(zd - c) * (zd - c) * inv_w2).exp();
            }
            // expand in place from the back so earlier entries stay readable
            let old = phi.len();
            phi.resize(old * per, 0.0);
            for a in (0..old).rev() {
                let v = phi[a];
                for (b, f) in factors.iter().enumerate() {
                    phi[a * per + b] = v * f;
                }
            }
        }
        DVector::from_vec(phi)
    }

    pub fn output(&self, phi: &DVector<f64>) -> f64 {
        self.weights.dot(phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    /// Feedback gain 𝒦.
    pub gain: f64,
    /// Young's-inequality weight ρ on the noise-gain damping term.
    pub rho: f64,
    /// σ-modification leakage.
    pub sigma: f64,
    /// Adaptation rate γ.
    pub gamma: f64,
    #[serde(default)]
    pub rbf: RbfGrid,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self { gain: 15.0, rho: 1.0, sigma: 0.5, gamma: 10.0, rbf: RbfGrid::default() }
    }
}

/// Constants from the closed-loop Lyapunov analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerDiagnostics {
    /// Δ_q per level.
    pub deltas: Vec<f64>,
    /// Decay rate c_γ.
    pub c_gamma: f64,
    /// l^[a] = Σ 1/(2ρ_q²).
    pub l_a: f64,
}

impl ControllerParams {
    /// Checks positivity and the Δ conditions for an order-`n` chain.
    pub fn validate(&self, n: usize) -> Result<ControllerDiagnostics> {
        for (name, v) in [("gain", self.gain), ("rho", self.rho), ("sigma", self.sigma), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("controller {name} must be > 0, got {v}")));
            }
        }
        self.rbf.validate()?;
        let rho2 = self.rho * self.rho;
        let deltas: Vec<f64> =
            (0..n).map(|q| if q + 1 < n { self.gain - rho2 } else { self.gain - 0.5 * rho2 }).collect();
        let mut rates = vec![2.0 * deltas[0]];
        if deltas[0] <= 0.0 {
            return Err(Error::Validation(format!("Delta_1 = {} must be > 0", deltas[0])));
        }
        for (q, d) in deltas.iter().enumerate().skip(1) {
            let margin = d - 1.0 / (2.0 * rho2);
            if margin <= 0.0 {
                return Err(Error::Validation(format!("Delta_{} - 1/(2 rho^2) = {margin} must be > 0", q + 1)));
            }
            rates.push(2.0 * margin);
        }
        rates.push(self.gamma / self.sigma);
        Ok(ControllerDiagnostics {
            deltas,
            c_gamma: rates.into_iter().fold(f64::INFINITY, f64::min),
            l_a: n as f64 / (2.0 * rho2),
        })
    }
}

/// `e₁ = x₁ − η₁`, `e_q = x_q − α_{q−1}`.
pub fn errors(x: &DVector<f64>, eta1: f64, alphas: &[f64]) -> DVector<f64> {
    let n = x.len();
    DVector::from_iterator(n, (0..n).map(|q| if q == 0 { x[0] - eta1 } else { x[q] - alphas[q - 1] }))
}

/// Control law shared by every level; `nn` is θ̂ᵀφ.
fn level_law(e: f64, g_norm2: f64, nn: f64, params: &ControllerParams) -> f64 {
    -(params.gain + 0.5 * params.rho * params.rho * g_norm2) * e - nn
}

/// Virtual input α_q for levels below the top.
pub fn virtual_input(e: f64, g: &DVector<f64>, net: &RbfNetwork, phi: &DVector<f64>, params: &ControllerParams) -> f64 {
    level_law(e, g.norm_squared(), net.output(phi), params)
}

/// Actual input u at the top level.
pub fn actual_input(e: f64, g: &DVector<f64>, net: &RbfNetwork, phi: &DVector<f64>, params: &ControllerParams) -> f64 {
    level_law(e, g.norm_squared(), net.output(phi), params)
}

/// θ̂̇ = γ(e·φ − σ·θ̂).
pub fn weight_derivative(
    weights: &DVector<f64>,
    e: f64,
    phi: &DVector<f64>,
    params: &ControllerParams,
) -> DVector<f64> {
    (phi * e - weights * params.sigma) * params.gamma
}

/// One RK4 step of the adaptation law with e and φ held.
pub fn adapt_step(net: &mut RbfNetwork, e: f64, phi: &DVector<f64>, dt: f64, params: &ControllerParams) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be > 0, got {dt}")));
    }
    let next = rk4_step(&net.weights, dt, |_, w| weight_derivative(w, e, phi, params));
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence { t: f64::NAN, what: "adaptive weights".into() });
    }
    net.weights = next;
    Ok(())
}

/// Approximator input for level q (0-based).
///
/// Level 0 sees (x₁, η₁, η₂); level q ≥ 1 sees (x₁..x_{q+1}, e_q, η₁..η_{q+2}),
/// i.e. the arguments of f_q and of the derivative of the previous virtual input.
pub fn nn_input(q: usize, x: &DVector<f64>, eta: &DVector<f64>, e: &DVector<f64>) -> Vec<f64> {
    let n = x.len();
    let eta_top = (q + 2).min(n);
    let mut z = Vec::with_capacity(2 * n + 1);
    if q == 0 {
        z.push(x[0]);
    } else {
        z.extend(x.iter().take(q + 1));
        z.push(e[q - 1]);
    }
    z.extend(eta.iter().take(eta_top));
    z
}

pub fn nn_input_dim(q: usize, n: usize) -> usize {
    let eta_top = (q + 2).min(n);
    if q == 0 {
        1 + eta_top
    } else {
        q + 2 + eta_top
    }
}

/// Everything computed for one agent at one instant.
#[derive(Debug, Clone)]
pub struct ControlEval {
    pub e: DVector<f64>,
    /// α₁..α_{n−1}.
    pub alphas: Vec<f64>,
    pub u: f64,
    pub phis: Vec<DVector<f64>>,
}

/// Per-agent controller: one approximator per level.
#[derive(Debug, Clone)]
pub struct AgentController {
    params: ControllerParams,
    pub nets: Vec<RbfNetwork>,
}

impl AgentController {
    pub fn new(n: usize, params: ControllerParams) -> Result<Self> {
        params.validate(n)?;
        let nets = (0..n).map(|q| RbfNetwork::new(nn_input_dim(q, n), &params.rbf)).collect::<Result<Vec<_>>>()?;
        Ok(Self { params, nets })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn weight_count(&self) -> usize {
        self.nets.iter().map(RbfNetwork::len).sum()
    }

    /// Runs the backstepping recursion with the given weights (one slice per level).
    pub fn evaluate_with(
        &self,
        weights: &[&[f64]],
        model: &dyn AgentModel,
        agent: usize,
        x: &DVector<f64>,
        eta: &DVector<f64>,
    ) -> ControlEval {
        let n = x.len();
        let mut e = DVector::zeros(n);
        let mut alphas = Vec::with_capacity(n.saturating_sub(1));
        let mut phis = Vec::with_capacity(n);
        let mut u = 0.0;
        e[0] = x[0] - eta[0];
        for q in 0..n {
            let phi = self.nets[q].basis(&nn_input(q, x, eta, &e));
            let nn: f64 = weights[q].iter().zip(phi.iter()).map(|(w, p)| w * p).sum();
            let g2 = model.noise_gain(agent, q, x).norm_squared();
            let v = level_law(e[q], g2, nn, &self.params);
            if q + 1 < n {
                alphas.push(v);
                e[q + 1] = x[q + 1] - v;
            } else {
                u = v;
            }
            phis.push(phi);
        }
        ControlEval { e, alphas, u, phis }
    }

    pub fn evaluate(&self, model: &dyn AgentModel, agent: usize, x: &DVector<f64>, eta: &DVector<f64>) -> ControlEval {
        let w: Vec<&[f64]> = self.nets.iter().map(|n| n.weights.as_slice()).collect();
        self.evaluate_with(&w, model, agent, x, eta)
    }

    /// Euclidean norm of all weight estimates.
    pub fn weight_norm(&self) -> f64 {
        self.nets.iter().map(|n| n.weights.norm_squared()).sum::<f64>().sqrt()
    }
}
