//! Independent re-implementation of the controller formulas, used as a test
//! oracle. Nothing here calls into the library's controller module.

#![allow(dead_code)]

use rand::Rng;

pub const LO: f64 = -3.0;
pub const HI: f64 = 3.0;
pub const PER_DIM: usize = 5;

/// Gaussian RBF activations by explicit enumeration of the lattice centres.
/// The first input dimension is the most significant index digit.
pub fn basis(z: &[f64]) -> Vec<f64> {
    let spacing = (HI - LO) / (PER_DIM - 1) as f64;
    let width = spacing;
    let count = PER_DIM.pow(z.len() as u32);
    (0..count)
        .map(|j| {
            let mut rem = j;
            let mut d2 = 0.0;
            for d in (0..z.len()).rev() {
                let c = LO + (rem % PER_DIM) as f64 * spacing;
                rem /= PER_DIM;
                d2 += (z[d] - c) * (z[d] - c);
            }
            (-d2 / (width * width)).exp()
        })
        .collect()
}

pub struct Gains {
    pub k: f64,
    pub rho: f64,
    pub sigma: f64,
    pub gamma: f64,
}

/// Noise gains of the second-order example.
pub fn g(q: usize, x1: f64, x2: f64) -> f64 {
    match q {
        0 => 0.5 * x1 * x1.sin(),
        _ => 0.5 * x1 * x1.sin() * x2.cos(),
    }
}

pub struct Oracle {
    pub e: [f64; 2],
    pub alpha1: f64,
    pub u: f64,
    pub phi: [Vec<f64>; 2],
    pub theta_dot: [Vec<f64>; 2],
}

/// Second-order backstepping step: e₁ = x₁ − η₁, α₁, e₂ = x₂ − α₁, u and
/// both adaptation rates, written straight from the control-law formulas.
pub fn second_order(x: [f64; 2], eta: [f64; 2], theta: [&[f64]; 2], p: &Gains) -> Oracle {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let e1 = x[0] - eta[0];
    let phi1 = basis(&[x[0], eta[0], eta[1]]);
    let g1 = g(0, x[0], x[1]);
    let alpha1 = -(p.k + p.rho * p.rho / 2.0 * g1 * g1) * e1 - dot(theta[0], &phi1);
    let e2 = x[1] - alpha1;
    let phi2 = basis(&[x[0], x[1], e1, eta[0], eta[1]]);
    let g2 = g(1, x[0], x[1]);
    let u = -(p.k + p.rho * p.rho / 2.0 * g2 * g2) * e2 - dot(theta[1], &phi2);
    let rate = |e: f64, phi: &[f64], th: &[f64]| -> Vec<f64> {
        phi.iter().zip(th).map(|(f, t)| p.gamma * (e * f - p.sigma * t)).collect()
    };
    let theta_dot = [rate(e1, &phi1, theta[0]), rate(e2, &phi2, theta[1])];
    Oracle { e: [e1, e2], alpha1, u, phi: [phi1, phi2], theta_dot }
}

pub fn random_case<R: Rng>(rng: &mut R) -> ([f64; 2], [f64; 2], Vec<f64>, Vec<f64>) {
    let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let eta = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let t1 = (0..125).map(|_| rng.random_range(-2.0..2.0)).collect();
    let t2 = (0..3125).map(|_| rng.random_range(-2.0..2.0)).collect();
    (x, eta, t1, t2)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
