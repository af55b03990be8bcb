use serde::{Deserialize, Serialize};

use super::coupling::solve_coupling_c;
use super::ContinuumKernelSet;
use crate::params::ContinuumParams;
use crate::quadrature::{trapezoid_weights, uniform};

const X_POINTS: usize = 101;
const Y_POINTS: usize = 2001;
const SIGMA_POINTS: usize = 201;
const MAX_COUPLING_TERMS: usize = 400;
/// Constants below this are roundoff of an exact zero.
const ROUNDOFF: f64 = 1e-12;

/// Constants of the kernel convergence proof and of the Lyapunov design.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    /// min λ.
    pub min_lambda: f64,
    /// min_j min μ_j.
    pub min_mu: f64,
    /// max λ.
    pub max_lambda: f64,
    /// max_j max μ_j.
    pub max_mu: f64,
    /// max_x ‖∫ σ(x, ·, η) dη‖.
    pub sigma: f64,
    /// max_j max_x ‖W_j(x, ·)‖.
    pub w: f64,
    /// Σ_j max_x ‖θ_j(x, ·)‖.
    pub theta: f64,
    /// max_x ‖Ψ(x)‖₁ (largest column sum).
    pub psi: f64,
    /// max_j ‖Q_j‖.
    pub q: f64,
    /// max_j max_y λ(0, y)/μ_j(0) · ‖Q_j‖.
    pub q1: f64,
    /// max |λ_x|.
    pub lambda_dx: f64,
    /// max_j max |μ_j'|.
    pub mu_dx: f64,
    /// Largest boundary datum of L (diagonal and artificial conditions).
    pub boundary: f64,
    /// Half the slack of the speed-ratio condition.
    pub eps: f64,
    pub lambda_eps: f64,
    pub mu_eps: f64,
    /// Envelope constant of the successive-approximation updates.
    pub envelope: f64,
    /// Growth rate of the successive-approximation updates.
    pub rate: f64,
    /// max |L_{i,j}| (entry-wise).
    pub l: f64,
    /// Largest column sum of |L|, the constant of the C⁻ series envelope.
    pub l_col: f64,
    /// sup ‖∫ C⁺ dη‖.
    pub c_plus: f64,
    /// max_j sup ‖C⁻_j‖.
    pub c_minus: f64,
    /// max |G_{i,j}|.
    pub g: f64,
    /// Whether the kernel-dependent entries were evaluated.
    pub with_kernels: bool,
}

fn l2(ws: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    ws.iter().enumerate().map(|(k, w)| w * f(k).powi(2)).sum::<f64>().sqrt()
}

pub fn compute_bounds(p: &ContinuumParams, ks: Option<&ContinuumKernelSet>) -> KernelBounds {
    let m = p.m;
    let xs = uniform(X_POINTS - 1);
    let ys = uniform(Y_POINTS - 1);
    let yw = trapezoid_weights(Y_POINTS, 1.0 / (Y_POINTS - 1) as f64);
    let coarse = uniform(X_POINTS - 1);
    let mut b = KernelBounds { min_lambda: f64::INFINITY, min_mu: f64::INFINITY, ..Default::default() };

    for &x in &xs {
        for &y in &coarse {
            let v = (p.lambda)(x, y);
            b.min_lambda = b.min_lambda.min(v);
            b.max_lambda = b.max_lambda.max(v);
            b.lambda_dx = b.lambda_dx.max(p.lambda_dx_at(x, y).abs());
        }
        for j in 0..m {
            let v = (p.mu[j])(x);
            b.min_mu = b.min_mu.min(v);
            b.max_mu = b.max_mu.max(v);
            b.mu_dx = b.mu_dx.max(p.mu_dx_at(j, x).abs());
            b.w = b.w.max(l2(&yw, |k| (p.w[j])(x, ys[k])));
        }
        let col = (0..m).map(|j| (0..m).map(|i| (p.psi[i][j])(x).abs()).sum::<f64>()).fold(0.0, f64::max);
        b.psi = b.psi.max(col);
    }
    b.theta = (0..m).map(|j| xs.iter().map(|&x| l2(&yw, |k| (p.theta[j])(x, ys[k]))).fold(0.0, f64::max)).sum();

    let ss = uniform(SIGMA_POINTS - 1);
    let sw = trapezoid_weights(SIGMA_POINTS, 1.0 / (SIGMA_POINTS - 1) as f64);
    for &x in &xs {
        let inner: Vec<f64> =
            ss.iter().map(|&y| ss.iter().zip(&sw).map(|(&e, w)| w * (p.sigma)(x, y, e)).sum()).collect();
        b.sigma = b.sigma.max(l2(&sw, |k| inner[k]));
    }
    if b.sigma < ROUNDOFF {
        b.sigma = 0.0;
    }

    for j in 0..m {
        let qn = l2(&yw, |k| (p.q[j])(ys[k]));
        b.q = b.q.max(qn);
        let lam0 = coarse.iter().map(|&y| (p.lambda)(0.0, y)).fold(0.0, f64::max);
        b.q1 = b.q1.max(lam0 / (p.mu[j])(0.0) * qn);
    }

    for i in 0..m {
        for j in 0..m {
            if i != j {
                for &x in &xs {
                    b.boundary = b.boundary.max(((p.psi[i][j])(x) / ((p.mu[i])(x) - (p.mu[j])(x))).abs());
                }
            }
            if j < i {
                for &x in &xs {
                    b.boundary = b.boundary.max(p.l1_at(i, j, x).abs());
                }
            }
        }
    }

    // Speed-ratio slack and the ε-dependent constants.
    let mut ratio: f64 = 0.0;
    for i in 0..m {
        for j in 0..i {
            let num = xs.iter().map(|&x| (p.mu[i])(x)).fold(f64::MIN, f64::max);
            let den = xs.iter().map(|&x| (p.mu[j])(x)).fold(f64::MAX, f64::min);
            ratio = ratio.max(num / den);
        }
    }
    b.eps = 0.5 * (1.0 - ratio);
    let e = b.eps;
    let mu_tab: Vec<Vec<f64>> = (0..m).map(|j| xs.iter().map(|&x| (p.mu[j])(x)).collect()).collect();
    for i in 0..m {
        for (k, _) in xs.iter().enumerate() {
            let denom = mu_tab[i][k] + (1.0 - e) * b.min_lambda;
            b.lambda_eps = b.lambda_eps.max(1.0 / denom);
        }
        for j in 0..m {
            let eij = if i > j { 1.0 } else { -1.0 };
            for &mi in &mu_tab[i] {
                for &mj in &mu_tab[j] {
                    b.mu_eps = b.mu_eps.max(-eij / (mi - (1.0 - e) * mj));
                }
            }
        }
    }
    let mut theta_ratio: f64 = 0.0;
    for j in 0..m {
        for i in 0..m {
            for &x in &xs {
                for &y in &coarse {
                    theta_ratio = theta_ratio.max((p.theta[j])(x, y).abs() / ((p.lambda)(x, y) + (p.mu[i])(x)));
                }
            }
        }
    }
    b.envelope = b.boundary + (1.0 + b.q1) * theta_ratio;
    b.rate = m as f64 * (1.0 + b.q1) * (b.lambda_dx + b.sigma + b.theta) * b.lambda_eps
        + m as f64 * (b.mu_dx + b.w + b.psi) * b.mu_eps;

    if let Some(ks) = ks {
        b.with_kernels = true;
        b.l = ks.l.iter().flatten().flatten().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        b.g = ks.g.iter().flatten().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if b.g < ROUNDOFF {
            b.g = 0.0;
        }
        let cp = match &ks.coupling {
            Some(c) => c.clone(),
            None => solve_coupling_c(ks, p, MAX_COUPLING_TERMS),
        };
        b.l_col = cp.l_col;
        b.c_minus = cp.c_minus_bound(&ks.grid.y.weights);
        b.c_plus = cp.c_plus_bound(&ks.grid.y.weights);
    }
    b
}
