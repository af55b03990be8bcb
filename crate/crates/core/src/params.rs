//! Plant parameters of the continuum (∞+m) and discrete (n+m) systems.
//!
//! Indices are zero-based throughout the crate: `i = 0` is the fastest leftward
//! state and `l = 0` is the first rightward state / first y-cell.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{cell_index, uniform};

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Fn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

pub fn const1(c: f64) -> Fn1 {
    Arc::new(move |_| c)
}

pub fn const2(c: f64) -> Fn2 {
    Arc::new(move |_, _| c)
}

pub fn const3(c: f64) -> Fn3 {
    Arc::new(move |_, _, _| c)
}

const FD_STEP: f64 = 1e-6;

/// Derivative on `[0, 1]` by central differences, one-sided at the ends.
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let lo = (x - FD_STEP).max(0.0);
    let hi = (x + FD_STEP).min(1.0);
    (f(hi) - f(lo)) / (hi - lo)
}

/// Parameters of the ensemble of rightward transport PDEs indexed by `y ∈ [0, 1]`
/// coupled with `m` leftward PDEs.
#[derive(Clone)]
pub struct ContinuumParams {
    pub m: usize,
    /// λ(x, y) > 0.
    pub lambda: Fn2,
    /// ∂λ/∂x; finite differences when absent.
    pub lambda_dx: Option<Fn2>,
    /// μ_j(x), strictly ordered.
    pub mu: Vec<Fn1>,
    pub mu_dx: Vec<Option<Fn1>>,
    /// σ(x, y, η).
    pub sigma: Fn3,
    /// W_j(x, y).
    pub w: Vec<Fn2>,
    /// θ_j(x, y).
    pub theta: Vec<Fn2>,
    /// ψ_{i,j}(x), zero on the diagonal.
    pub psi: Vec<Vec<Fn1>>,
    /// Q_j(y).
    pub q: Vec<Fn1>,
    /// Artificial boundary data l1_{i,j}(ξ) for j < i; `None` selects the constant default.
    pub l1: Vec<Vec<Option<Fn1>>>,
}

impl fmt::Debug for ContinuumParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuumParams").field("m", &self.m).finish_non_exhaustive()
    }
}

impl ContinuumParams {
    /// Uncoupled plant with the given speeds.
    pub fn uncoupled(lambda: Fn2, mu: Vec<Fn1>) -> Self {
        let m = mu.len();
        Self {
            m,
            lambda,
            lambda_dx: None,
            mu,
            mu_dx: vec![None; m],
            sigma: const3(0.0),
            w: vec![const2(0.0); m],
            theta: vec![const2(0.0); m],
            psi: vec![vec![const1(0.0); m]; m],
            q: vec![const1(0.0); m],
            l1: vec![vec![None; m]; m],
        }
    }

    pub fn lambda_dx_at(&self, x: f64, y: f64) -> f64 {
        match &self.lambda_dx {
            Some(d) => d(x, y),
            None => fd_derivative(|s| (self.lambda)(s, y), x),
        }
    }

    pub fn mu_dx_at(&self, j: usize, x: f64) -> f64 {
        match &self.mu_dx[j] {
            Some(d) => d(x),
            None => fd_derivative(|s| (self.mu[j])(s), x),
        }
    }

    /// Artificial boundary value l1_{i,j}(ξ) for j < i.
    pub fn l1_at(&self, i: usize, j: usize, xi: f64) -> f64 {
        match &self.l1[i][j] {
            Some(f) => f(xi),
            None => default_l1(&self.psi, &self.mu, i, j),
        }
    }
}

fn default_l1(psi: &[Vec<Fn1>], mu: &[Fn1], i: usize, j: usize) -> f64 {
    -(psi[i][j])(1.0) / ((mu[i])(1.0) - (mu[j])(1.0))
}

/// Parameters of the n+m system in the 1/n-scaled form: the sums over rightward
/// states carry the factor 1/n.
#[derive(Clone)]
pub struct DiscreteParams {
    pub n: usize,
    pub m: usize,
    /// λ_i(x), length n.
    pub lambda: Vec<Fn1>,
    /// σ_{i,l}(x), n × n.
    pub sigma: Vec<Vec<Fn1>>,
    /// w_{i,j}(x), n × m.
    pub w: Vec<Vec<Fn1>>,
    /// θ_{j,i}(x), m × n.
    pub theta: Vec<Vec<Fn1>>,
    /// q_{i,j}, n × m.
    pub q: Vec<Vec<f64>>,
    pub mu: Vec<Fn1>,
    pub mu_dx: Vec<Option<Fn1>>,
    pub psi: Vec<Vec<Fn1>>,
    pub l1: Vec<Vec<Option<Fn1>>>,
}

impl fmt::Debug for DiscreteParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteParams")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("q", &self.q)
            .finish_non_exhaustive()
    }
}

impl DiscreteParams {
    pub fn uncoupled(lambda: Vec<Fn1>, mu: Vec<Fn1>) -> Self {
        let (n, m) = (lambda.len(), mu.len());
        Self {
            n,
            m,
            lambda,
            sigma: vec![vec![const1(0.0); n]; n],
            w: vec![vec![const1(0.0); m]; n],
            theta: vec![vec![const1(0.0); n]; m],
            q: vec![vec![0.0; m]; n],
            mu,
            mu_dx: vec![None; m],
            psi: vec![vec![const1(0.0); m]; m],
            l1: vec![vec![None; m]; m],
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let bad = |what: &str| Err(Error::Config(format!("{what} has the wrong shape for n={n}, m={m}")));
        if self.lambda.len() != n {
            return bad("lambda");
        }
        if self.sigma.len() != n || self.sigma.iter().any(|r| r.len() != n) {
            return bad("sigma");
        }
        if self.w.len() != n || self.w.iter().any(|r| r.len() != m) {
            return bad("w");
        }
        if self.theta.len() != m || self.theta.iter().any(|r| r.len() != n) {
            return bad("theta");
        }
        if self.q.len() != n || self.q.iter().any(|r| r.len() != m) {
            return bad("q");
        }
        if self.mu.len() != m || self.mu_dx.len() != m {
            return bad("mu");
        }
        if self.psi.len() != m || self.psi.iter().any(|r| r.len() != m) {
            return bad("psi");
        }
        if self.l1.len() != m || self.l1.iter().any(|r| r.len() != m) {
            return bad("l1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: String,
    pub location: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self { pass: violations.is_empty(), violations }
    }
}

pub const DEFAULT_CHECK_POINTS: usize = 101;

pub trait Validate {
    fn validate_on(&self, check_points: usize) -> Result<ValidationReport>;

    fn validate(&self) -> Result<ValidationReport> {
        self.validate_on(DEFAULT_CHECK_POINTS)
    }
}

pub fn validate<P: Validate>(p: &P) -> Result<ValidationReport> {
    p.validate()
}

fn finite(name: &str, v: f64, loc: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} is not finite at {loc:?}")))
    }
}

/// Tracks the worst (most negative) value of a quantity that must stay positive.
struct Worst {
    value: f64,
    location: Vec<f64>,
}

impl Worst {
    fn new() -> Self {
        Self { value: f64::INFINITY, location: vec![] }
    }

    fn push(&mut self, v: f64, loc: &[f64]) {
        if v < self.value {
            self.value = v;
            self.location = loc.to_vec();
        }
    }

    fn report(self, id: &str, out: &mut Vec<Violation>) {
        if self.value <= 0.0 {
            out.push(Violation { assumption: id.into(), location: self.location, value: self.value });
        }
    }
}

/// Checks shared by both parameter kinds: μ positivity, ordering, ψ diagonal, l1 compatibility.
fn validate_leftward(
    mu: &[Fn1],
    psi: &[Vec<Fn1>],
    l1: &[Vec<Option<Fn1>>],
    xs: &[f64],
    out: &mut Vec<Violation>,
) -> Result<()> {
    let m = mu.len();
    let mut tab = vec![vec![0.0; xs.len()]; m];
    for j in 0..m {
        for (k, &x) in xs.iter().enumerate() {
            tab[j][k] = finite(&format!("mu[{j}]"), mu[j](x), &[x])?;
        }
    }
    if m > 0 {
        let mut w = Worst::new();
        for (k, &x) in xs.iter().enumerate() {
            w.push(tab[m - 1][k], &[x]);
        }
        w.report("mu-positive", out);
    }
    for j in 0..m.saturating_sub(1) {
        let (kmin, vmin) = argext(&tab[j], |a, b| a < b);
        let (kmax, vmax) = argext(&tab[j + 1], |a, b| a > b);
        if vmin <= vmax {
            out.push(Violation {
                assumption: format!("mu-ordering[{j},{}]", j + 1),
                location: vec![xs[kmin], xs[kmax]],
                value: vmin - vmax,
            });
        }
    }
    for j in 0..m {
        let mut worst = (0.0f64, 0.0);
        for &x in xs {
            let v = finite(&format!("psi[{j}][{j}]"), psi[j][j](x), &[x])?;
            if v.abs() > worst.0.abs() {
                worst = (v, x);
            }
        }
        if worst.0 != 0.0 {
            out.push(Violation {
                assumption: format!("psi-diagonal[{j}]"),
                location: vec![worst.1],
                value: worst.0,
            });
        }
        for i in 0..m {
            for &x in xs {
                finite(&format!("psi[{i}][{j}]"), psi[i][j](x), &[x])?;
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            if let Some(f) = &l1[i][j] {
                let target = default_l1(psi, mu, i, j);
                let gap = finite(&format!("l1[{i}][{j}]"), f(1.0), &[1.0])? - target;
                if gap.abs() > 1e-9 {
                    out.push(Violation {
                        assumption: format!("l1-compatibility[{i},{j}]"),
                        location: vec![1.0],
                        value: gap,
                    });
                }
            }
        }
    }
    Ok(())
}

fn argext(v: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (k, &x) in v.iter().enumerate() {
        if better(x, best.1) {
            best = (k, x);
        }
    }
    best
}

impl Validate for ContinuumParams {
    fn validate_on(&self, check_points: usize) -> Result<ValidationReport> {
        let pts = uniform(check_points.max(2) - 1);
        let mut out = Vec::new();
        let mut lam = Worst::new();
        for &x in &pts {
            for &y in &pts {
                lam.push(finite("lambda", (self.lambda)(x, y), &[x, y])?, &[x, y]);
                for j in 0..self.m {
                    finite(&format!("w[{j}]"), (self.w[j])(x, y), &[x, y])?;
                    finite(&format!("theta[{j}]"), (self.theta[j])(x, y), &[x, y])?;
                }
            }
        }
        lam.report("lambda-positive", &mut out);
        let coarse = uniform(20);
        for &x in &coarse {
            for &y in &coarse {
                for &e in &coarse {
                    finite("sigma", (self.sigma)(x, y, e), &[x, y, e])?;
                }
            }
        }
        for j in 0..self.m {
            for &y in &pts {
                finite(&format!("q[{j}]"), (self.q[j])(y), &[y])?;
            }
        }
        validate_leftward(&self.mu, &self.psi, &self.l1, &pts, &mut out)?;
        Ok(ValidationReport::from_violations(out))
    }
}

impl Validate for DiscreteParams {
    fn validate_on(&self, check_points: usize) -> Result<ValidationReport> {
        self.check_shapes()?;
        let pts = uniform(check_points.max(2) - 1);
        let mut out = Vec::new();
        for i in 0..self.n {
            let mut lam = Worst::new();
            for &x in &pts {
                lam.push(finite(&format!("lambda[{i}]"), (self.lambda[i])(x), &[x])?, &[x]);
                for l in 0..self.n {
                    finite(&format!("sigma[{i}][{l}]"), (self.sigma[i][l])(x), &[x])?;
                }
                for j in 0..self.m {
                    finite(&format!("w[{i}][{j}]"), (self.w[i][j])(x), &[x])?;
                    finite(&format!("theta[{j}][{i}]"), (self.theta[j][i])(x), &[x])?;
                }
            }
            lam.report(&format!("lambda-positive[{i}]"), &mut out);
            for j in 0..self.m {
                finite(&format!("q[{i}][{j}]"), self.q[i][j], &[])?;
            }
        }
        validate_leftward(&self.mu, &self.psi, &self.l1, &pts, &mut out)?;
        Ok(ValidationReport::from_violations(out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    PiecewiseLinear,
    Spline,
}

/// Linear maps from nodal data at `y = (k+1)/n` to values at arbitrary `y`.
#[derive(Clone, Debug)]
pub struct LiftBasis {
    n: usize,
    mode: Interpolation,
    /// Natural-spline second derivatives as linear maps of the data.
    second: Vec<Vec<f64>>,
}

impl LiftBasis {
    pub fn new(n: usize, mode: Interpolation) -> Self {
        let second = if mode == Interpolation::Spline && n > 2 {
            natural_spline_second_derivatives(n)
        } else {
            vec![vec![0.0; n]; n]
        };
        Self { n, mode, second }
    }

    /// Nonzero (node, weight) pairs with `f(y) = Σ weight · data[node]`.
    pub fn weights(&self, y: f64) -> Vec<(usize, f64)> {
        let n = self.n;
        if n == 1 {
            return vec![(0, 1.0)];
        }
        let s = n as f64 * y - 1.0;
        if s <= 0.0 {
            return vec![(0, 1.0)];
        }
        let k = (s.floor() as usize).min(n - 2);
        let b = s - k as f64;
        let a = 1.0 - b;
        if self.mode == Interpolation::PiecewiseLinear || n == 2 {
            return vec![(k, a), (k + 1, b)];
        }
        let h = 1.0 / n as f64;
        let ca = (a * a * a - a) * h * h / 6.0;
        let cb = (b * b * b - b) * h * h / 6.0;
        let mut w = vec![0.0; n];
        w[k] += a;
        w[k + 1] += b;
        for (q, wq) in w.iter_mut().enumerate() {
            *wq += ca * self.second[k][q] + cb * self.second[k + 1][q];
        }
        w.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect()
    }
}

/// Row k: coefficients mapping data to the natural spline's second derivative at node k.
fn natural_spline_second_derivatives(n: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / n as f64;
    let inner = n - 2;
    let mut out = vec![vec![0.0; n]; n];
    for col in 0..n {
        // Right-hand side for unit data e_col.
        let mut rhs: Vec<f64> = (1..=inner)
            .map(|k| {
                let e = |q: usize| if q == col { 1.0 } else { 0.0 };
                6.0 * (e(k + 1) - 2.0 * e(k) + e(k - 1)) / (h * h)
            })
            .collect();
        // Thomas algorithm for tridiag(1, 4, 1).
        let mut diag = vec![4.0; inner];
        for k in 1..inner {
            let f = 1.0 / diag[k - 1];
            diag[k] -= f;
            rhs[k] -= f * rhs[k - 1];
        }
        for k in (0..inner).rev() {
            let next = if k + 1 < inner { rhs[k + 1] } else { 0.0 };
            rhs[k] = (rhs[k] - next) / diag[k];
        }
        for k in 0..inner {
            out[k + 1][col] = rhs[k];
        }
    }
    out
}

fn combine(fs: &[Fn1], w: &[(usize, f64)], x: f64) -> f64 {
    w.iter().map(|&(k, c)| c * fs[k](x)).sum()
}

/// Continuum parameters interpolating the discrete arrays at the nodes `y = (i+1)/n`.
pub fn lift_discrete(d: &DiscreteParams, interpolation: Interpolation) -> Result<ContinuumParams> {
    d.check_shapes()?;
    let (n, m) = (d.n, d.m);
    let basis = Arc::new(LiftBasis::new(n, interpolation));

    let lam = d.lambda.clone();
    let b = basis.clone();
    let lambda: Fn2 = Arc::new(move |x, y| combine(&lam, &b.weights(y), x));

    let sig = d.sigma.clone();
    let b = basis.clone();
    let sigma: Fn3 = Arc::new(move |x, y, e| {
        let (wy, we) = (b.weights(y), b.weights(e));
        let mut acc = 0.0;
        for &(i, ci) in &wy {
            for &(l, cl) in &we {
                acc += ci * cl * sig[i][l](x);
            }
        }
        acc
    });

    let w = (0..m)
        .map(|j| {
            let col: Vec<Fn1> = (0..n).map(|i| d.w[i][j].clone()).collect();
            let b = basis.clone();
            Arc::new(move |x, y| combine(&col, &b.weights(y), x)) as Fn2
        })
        .collect();
    let theta = (0..m)
        .map(|j| {
            let row = d.theta[j].clone();
            let b = basis.clone();
            Arc::new(move |x, y| combine(&row, &b.weights(y), x)) as Fn2
        })
        .collect();
    let q = (0..m)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| d.q[i][j]).collect();
            let b = basis.clone();
            Arc::new(move |y| b.weights(y).iter().map(|&(k, c)| c * col[k]).sum()) as Fn1
        })
        .collect();

    let p = ContinuumParams {
        m,
        lambda,
        lambda_dx: None,
        mu: d.mu.clone(),
        mu_dx: d.mu_dx.clone(),
        sigma,
        w,
        theta,
        psi: d.psi.clone(),
        q,
        l1: d.l1.clone(),
    };

    let pts = uniform(DEFAULT_CHECK_POINTS - 1);
    let ys = uniform(n.max(1) * 20);
    for &x in &pts {
        for &y in &ys {
            let v = (p.lambda)(x, y);
            if !(v > 0.0) {
                let k = ((n as f64 * y - 1.0).floor().max(0.0) as usize).min(n.saturating_sub(2));
                return Err(Error::Validation(format!(
                    "lifted lambda = {v:.4e} at (x={x:.3}, y={y:.4}) between nodes {k} and {}",
                    k + 1
                )));
            }
        }
    }
    Ok(p)
}

/// Step functions constant on the half-open cells `((i-1)/n, i/n]`.
pub fn make_step_params(d: &DiscreteParams) -> Result<ContinuumParams> {
    d.check_shapes()?;
    let (n, m) = (d.n, d.m);

    let lam = d.lambda.clone();
    let lambda: Fn2 = Arc::new(move |x, y| lam[cell_index(n, y)](x));
    let sig = d.sigma.clone();
    let sigma: Fn3 = Arc::new(move |x, y, e| sig[cell_index(n, y)][cell_index(n, e)](x));
    let w = (0..m)
        .map(|j| {
            let col: Vec<Fn1> = (0..n).map(|i| d.w[i][j].clone()).collect();
            Arc::new(move |x, y| col[cell_index(n, y)](x)) as Fn2
        })
        .collect();
    let theta = (0..m)
        .map(|j| {
            let row = d.theta[j].clone();
            Arc::new(move |x, y| row[cell_index(n, y)](x)) as Fn2
        })
        .collect();
    let q = (0..m)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| d.q[i][j]).collect();
            Arc::new(move |y| col[cell_index(n, y)]) as Fn1
        })
        .collect();
    let lam = d.lambda.clone();
    let lambda_dx: Fn2 = Arc::new(move |x, y| fd_derivative(|s| lam[cell_index(n, y)](s), x));

    Ok(ContinuumParams {
        m,
        lambda,
        lambda_dx: Some(lambda_dx),
        mu: d.mu.clone(),
        mu_dx: d.mu_dx.clone(),
        sigma,
        w,
        theta,
        psi: d.psi.clone(),
        q,
        l1: d.l1.clone(),
    })
}

/// Discrete parameters obtained by sampling continuum ones at `y = (i+1)/n`.
pub fn sample_discrete(p: &ContinuumParams, n: usize) -> DiscreteParams {
    let m = p.m;
    let node = move |i: usize| (i + 1) as f64 / n as f64;
    let lambda = (0..n)
        .map(|i| {
            let f = p.lambda.clone();
            Arc::new(move |x| f(x, node(i))) as Fn1
        })
        .collect();
    let sigma = (0..n)
        .map(|i| {
            (0..n)
                .map(|l| {
                    let f = p.sigma.clone();
                    Arc::new(move |x| f(x, node(i), node(l))) as Fn1
                })
                .collect()
        })
        .collect();
    let w = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let f = p.w[j].clone();
                    Arc::new(move |x| f(x, node(i))) as Fn1
                })
                .collect()
        })
        .collect();
    let theta = (0..m)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let f = p.theta[j].clone();
                    Arc::new(move |x| f(x, node(i))) as Fn1
                })
                .collect()
        })
        .collect();
    let q = (0..n).map(|i| (0..m).map(|j| (p.q[j])(node(i))).collect()).collect();
    DiscreteParams {
        n,
        m,
        lambda,
        sigma,
        w,
        theta,
        q,
        mu: p.mu.clone(),
        mu_dx: p.mu_dx.clone(),
        psi: p.psi.clone(),
        l1: p.l1.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_interpolates_nodes_and_reproduces_lines() {
        let n = 6;
        let b = LiftBasis::new(n, Interpolation::Spline);
        let data: Vec<f64> = (0..n).map(|k| 2.0 * (k + 1) as f64 / n as f64 - 1.0).collect();
        for k in 0..n {
            let y = (k + 1) as f64 / n as f64;
            let v: f64 = b.weights(y).iter().map(|&(q, c)| c * data[q]).sum();
            assert!((v - data[k]).abs() < 1e-12);
        }
        let y = 0.55;
        let v: f64 = b.weights(y).iter().map(|&(q, c)| c * data[q]).sum();
        assert!((v - (2.0 * y - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fd_derivative_one_sided_at_ends() {
        assert!((fd_derivative(|x| x * x, 0.0) - 0.0).abs() < 1e-5);
        assert!((fd_derivative(|x| x * x, 1.0) - 2.0).abs() < 1e-5);
        assert!((fd_derivative(|x| x * x, 0.5) - 1.0).abs() < 1e-8);
    }
}
