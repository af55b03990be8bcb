//! The two-state benchmark plant with explicitly known kernels.
//!
//! Speeds λ = 1, μ = (2, 1); the kernels are
//! K⁰⁰ = y(y−1), K⁰¹ = e^{x−2ξ} y(y−1), K¹¹ = e^{2(x−ξ)} y(y−1),
//! L₀₁ on the lower segment = −2e^{x−2ξ}, L₁₁ = −2e^{2(x−ξ)}, all other L zero
//! (superscripts are segment indices, zero-based).

use std::sync::Arc;

use crate::params::{const1, const2, ContinuumParams, DiscreteParams, Fn1, Fn2};

fn w_fn() -> Fn2 {
    Arc::new(|x: f64, y: f64| x * (x + 1.0) * x.exp() * (y - 0.5))
}

pub fn continuum() -> ContinuumParams {
    let mu: Vec<Fn1> = vec![const1(2.0), const1(1.0)];
    let mut p = ContinuumParams::uncoupled(const2(1.0), mu);
    p.lambda_dx = Some(const2(0.0));
    p.mu_dx = vec![Some(const1(0.0)), Some(const1(0.0))];
    p.sigma = Arc::new(|x, y, e| x.powi(3) * (x + 1.0) * (y - 0.5) * (e - 0.5));
    p.w = vec![w_fn(), w_fn()];
    p.theta = vec![
        Arc::new(|_, y| -3.0 * y * (y - 1.0)),
        Arc::new(|_, y| -2.0 * y * (y - 1.0)),
    ];
    p.q = vec![Arc::new(|y| 8.0 * (y - 0.5)), Arc::new(|y| -8.0 * (y - 2.0))];
    p
}

/// The n+m family sampled at `y = i/n`.
pub fn discrete(n: usize) -> DiscreteParams {
    crate::params::sample_discrete(&continuum(), n)
}

/// Initial data `u^i = q_{i,1} + q_{i,2}` (constant 12) and `v ≡ 1`.
pub fn initial_values(n: usize) -> (Vec<f64>, Vec<f64>) {
    let d = discrete(n);
    (d.q.iter().map(|r| r.iter().sum()).collect(), vec![1.0; 2])
}

/// Closed-form K for row `i`, segment `p` (zero-based; segment 0 is ξ ≥ x/2 for row 0).
pub fn k_exact(i: usize, p: usize, x: f64, xi: f64, y: f64) -> f64 {
    let b = y * (y - 1.0);
    match (i, p) {
        (0, 0) => b,
        (0, 1) => (x - 2.0 * xi).exp() * b,
        (1, 1) => (2.0 * (x - xi)).exp() * b,
        _ => panic!("no segment ({i}, {p})"),
    }
}

/// Closed-form L_{i,j} on segment `p`.
pub fn l_exact(i: usize, j: usize, p: usize, x: f64, xi: f64) -> f64 {
    match (i, j, p) {
        (0, 1, 1) => -2.0 * (x - 2.0 * xi).exp(),
        (1, 1, 1) => -2.0 * (2.0 * (x - xi)).exp(),
        (0, _, 0) | (0, 0, 1) | (1, 0, 1) => 0.0,
        _ => panic!("no segment ({i}, {j}, {p})"),
    }
}
