//! Closed-loop simulation of the n+m plant, the backstepping transform, norms and the
//! Lyapunov functional.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ContinuumState, FeedbackOperator};
use crate::error::{Error, Result};
use crate::kernel::{mapped_stencil, ContinuumKernelSet, KernelBounds};
use crate::params::{ContinuumParams, DiscreteParams, Fn2};
use crate::quadrature::{locate, trapezoid_weights, uniform};

/// State of the n+m plant on a uniform x-grid: `u[l][k]`, `v[j][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub type StateSnapshot = PlantState;

impl PlantState {
    pub fn zeros(n: usize, m: usize, nx: usize) -> Self {
        Self { t: 0.0, u: vec![vec![0.0; nx]; n], v: vec![vec![0.0; nx]; m] }
    }

    /// Samples `u0(x, (l+1)/n)` and `v0[j](x)` on `nx` uniform nodes.
    pub fn from_fns(n: usize, nx: usize, u0: impl Fn(f64, f64) -> f64, v0: &[&dyn Fn(f64) -> f64]) -> Self {
        let xs = uniform(nx - 1);
        Self {
            t: 0.0,
            u: (0..n).map(|l| xs.iter().map(|&x| u0(x, (l + 1) as f64 / n as f64)).collect()).collect(),
            v: v0.iter().map(|f| xs.iter().map(|&x| f(x)).collect()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn m(&self) -> usize {
        self.v.len()
    }

    pub fn nx(&self) -> usize {
        self.v.first().or(self.u.first()).map_or(0, |r| r.len())
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).flatten().all(|v| v.is_finite())
    }

    fn axpy(&mut self, a: f64, other: &PlantState) {
        for (r, o) in self.u.iter_mut().zip(&other.u).chain(self.v.iter_mut().zip(&other.v)) {
            r.iter_mut().zip(o).for_each(|(x, y)| *x += a * y);
        }
    }
}

/// `‖(u, v)‖_E` with the 1/n weighting of the u-part, by the trapezoid rule.
pub fn e_norm(s: &PlantState) -> f64 {
    let nx = s.nx();
    let w = trapezoid_weights(nx, 1.0 / (nx - 1) as f64);
    let n = s.n().max(1) as f64;
    let mut acc = 0.0;
    for r in &s.u {
        acc += r.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>() / n;
    }
    for r in &s.v {
        acc += r.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
    }
    acc.sqrt()
}

/// `‖(u, v)‖_{E_c}` of a continuum state.
pub fn ec_norm(s: &ContinuumState) -> f64 {
    let nx = s.v.first().or(s.u.first()).map_or(0, |r| r.len());
    let w = trapezoid_weights(nx, 1.0 / (nx - 1) as f64);
    let mut acc = 0.0;
    for (r, wy) in s.u.iter().zip(&s.y.weights) {
        acc += wy * r.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
    }
    for r in &s.v {
        acc += r.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>();
    }
    acc.sqrt()
}

/// A boundary control law `U(t, state)`. Implementations must be affine in `v(·, 1)`.
pub trait Controller: Sync {
    fn control(&self, t: f64, s: &PlantState) -> Vec<f64>;
    fn id(&self) -> String;
}

pub struct ZeroController {
    pub m: usize,
}

impl Controller for ZeroController {
    fn control(&self, _t: f64, _s: &PlantState) -> Vec<f64> {
        vec![0.0; self.m]
    }

    fn id(&self) -> String {
        "open-loop".into()
    }
}

impl Controller for FeedbackOperator {
    fn control(&self, _t: f64, s: &PlantState) -> Vec<f64> {
        self.apply(&s.u, &s.v)
    }

    fn id(&self) -> String {
        format!("feedback(n={}, m={})", self.n, self.m)
    }
}

/// Parameters of the plant tabulated on the simulation grid.
struct Plant {
    n: usize,
    m: usize,
    nx: usize,
    dx: f64,
    lam: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    /// `(1/n) σ_{l,r}(x_k)` at `(k * n + l) * n + r`; `None` when identically zero.
    sig: Option<Vec<f64>>,
    /// `w_{l,j}(x_k)` at `(k * n + l) * m + j`.
    w: Vec<f64>,
    /// `(1/n) θ_{j,l}(x_k)` at `(k * m + j) * n + l`.
    th: Vec<f64>,
    /// `ψ_{j,r}(x_k)` at `(k * m + j) * m + r`.
    psi: Vec<f64>,
    q: Vec<Vec<f64>>,
}

impl Plant {
    fn new(d: &DiscreteParams, nx: usize) -> Result<Self> {
        d.check_shapes()?;
        let (n, m) = (d.n, d.m);
        let xs = uniform(nx - 1);
        let nf = n as f64;
        let lam = d.lambda.iter().map(|f| xs.iter().map(|&x| f(x)).collect()).collect();
        let mu = d.mu.iter().map(|f| xs.iter().map(|&x| f(x)).collect()).collect();
        let mut sig = vec![0.0; nx * n * n];
        let mut w = vec![0.0; nx * n * m];
        let mut th = vec![0.0; nx * m * n];
        let mut psi = vec![0.0; nx * m * m];
        for (k, &x) in xs.iter().enumerate() {
            for l in 0..n {
                for r in 0..n {
                    sig[(k * n + l) * n + r] = (d.sigma[l][r])(x) / nf;
                }
                for j in 0..m {
                    w[(k * n + l) * m + j] = (d.w[l][j])(x);
                    th[(k * m + j) * n + l] = (d.theta[j][l])(x) / nf;
                }
            }
            for j in 0..m {
                for r in 0..m {
                    psi[(k * m + j) * m + r] = (d.psi[j][r])(x);
                }
            }
        }
        let sig = if sig.iter().all(|v| *v == 0.0) { None } else { Some(sig) };
        Ok(Self { n, m, nx, dx: 1.0 / (nx - 1) as f64, lam, mu, sig, w, th, psi, q: d.q.clone() })
    }

    fn max_speed(&self) -> f64 {
        self.lam.iter().chain(&self.mu).flatten().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    /// Sets `u(·, 0) = Q v(·, 0)` and `v(·, 1) = U`, resolving the affine dependence of
    /// `U` on `v(·, 1)`.
    fn enforce(&self, s: &mut PlantState, ctrl: &dyn Controller) -> Vec<f64> {
        let (n, m, last) = (self.n, self.m, self.nx - 1);
        for l in 0..n {
            s.u[l][0] = (0..m).map(|j| self.q[l][j] * s.v[j][0]).sum();
        }
        for j in 0..m {
            s.v[j][last] = 0.0;
        }
        let base = ctrl.control(s.t, s);
        let mut a = vec![vec![0.0; m]; m];
        for j in 0..m {
            s.v[j][last] = 1.0;
            let col = ctrl.control(s.t, s);
            s.v[j][last] = 0.0;
            for i in 0..m {
                a[i][j] = col[i] - base[i];
            }
        }
        let mut mat = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                mat[i][j] = if i == j { 1.0 } else { 0.0 } - a[i][j];
            }
        }
        let u = solve_small(mat, base);
        for j in 0..m {
            s.v[j][last] = u[j];
        }
        u
    }

    fn rhs(&self, s: &PlantState, out: &mut PlantState) {
        let (n, m, nx, dx) = (self.n, self.m, self.nx, self.dx);
        for l in 0..n {
            out.u[l][0] = 0.0;
            for k in 1..nx {
                let mut v = -self.lam[l][k] * (s.u[l][k] - s.u[l][k - 1]) / dx;
                for j in 0..m {
                    v += self.w[(k * n + l) * m + j] * s.v[j][k];
                }
                out.u[l][k] = v;
            }
        }
        if let Some(sig) = &self.sig {
            let mut col = vec![0.0; n];
            for k in 1..nx {
                for (r, c) in col.iter_mut().enumerate() {
                    *c = s.u[r][k];
                }
                for l in 0..n {
                    let row = &sig[(k * n + l) * n..(k * n + l + 1) * n];
                    out.u[l][k] += row.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        for j in 0..m {
            out.v[j][nx - 1] = 0.0;
            for k in 0..nx - 1 {
                let mut v = self.mu[j][k] * (s.v[j][k + 1] - s.v[j][k]) / dx;
                let th = &self.th[(k * m + j) * n..(k * m + j + 1) * n];
                for l in 0..n {
                    v += th[l] * s.u[l][k];
                }
                for r in 0..m {
                    v += self.psi[(k * m + j) * m + r] * s.v[r][k];
                }
                out.v[j][k] = v;
            }
        }
    }
}

/// Gaussian elimination with partial pivoting for a small dense system.
pub(crate) fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    for c in 0..m {
        let piv = (c..m).max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap()).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..m {
            let f = a[r][c] / a[c][c];
            for k in c..m {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub t_end: f64,
    pub nx: usize,
    pub cfl: f64,
    /// Fixed time step overriding the CFL rule.
    pub dt: Option<f64>,
    /// Time between saved snapshots (rounded to whole steps); every step when absent.
    pub save_dt: Option<f64>,
    /// Abort when the E-norm exceeds this multiple of its initial value.
    pub blow_up: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { t_end: 5.0, nx: 256, cfl: 0.5, dt: None, save_dt: Some(0.05), blow_up: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub nx: usize,
    pub dt: f64,
    pub steps: usize,
    pub save_stride: usize,
    pub controller: String,
    pub snapshots: Vec<PlantState>,
    /// Control applied at each saved time.
    pub controls: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub lyapunov: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }
}

/// Time step of the CFL rule for `d` on `nx` nodes.
pub fn cfl_step(d: &DiscreteParams, nx: usize, cfl: f64) -> Result<f64> {
    let plant = Plant::new(d, nx)?;
    Ok(cfl * plant.dx / plant.max_speed())
}

pub fn simulate(d: &DiscreteParams, ctrl: &dyn Controller, init: &PlantState, opts: &SimOptions) -> Result<Trajectory> {
    let nx = opts.nx;
    if nx < 8 {
        return Err(Error::Config(format!("simulation grid needs at least 8 nodes, got {nx}")));
    }
    if init.n() != d.n || init.m() != d.m || init.nx() != nx {
        return Err(Error::Dimension { expected: d.n * nx, got: init.n() * init.nx() });
    }
    if !(opts.t_end >= 0.0) || !(opts.cfl > 0.0) {
        return Err(Error::Config("t_end must be nonnegative and cfl positive".into()));
    }
    let plant = Plant::new(d, nx)?;
    let dt0 = opts.dt.unwrap_or(opts.cfl * plant.dx / plant.max_speed());
    let steps = if opts.t_end == 0.0 { 0 } else { (opts.t_end / dt0 - 1e-9).ceil() as usize };
    let dt = if steps == 0 { dt0 } else { opts.t_end / steps as f64 };
    let stride = opts.save_dt.map_or(1, |s| ((s / dt).round() as usize).max(1));
    info!("simulating n={}, m={}, nx={nx}, dt={dt:.3e}, steps={steps}, controller={}", d.n, d.m, ctrl.id());

    let mut s = init.clone();
    s.t = 0.0;
    let u0 = plant.enforce(&mut s, ctrl);
    let norm0 = e_norm(&s);
    let limit = opts.blow_up * norm0.max(f64::MIN_POSITIVE);
    let mut traj = Trajectory {
        nx,
        dt,
        steps,
        save_stride: stride,
        controller: ctrl.id(),
        snapshots: vec![s.clone()],
        controls: vec![u0],
        norms: vec![norm0],
        lyapunov: None,
    };

    let mut k = [s.clone(), s.clone(), s.clone(), s.clone()];
    let mut stage = s.clone();
    for step in 1..=steps {
        let t0 = s.t;
        for q in 0..4 {
            stage.clone_from(&s);
            let (h, tq) = match q {
                0 => (0.0, t0),
                3 => (dt, t0 + dt),
                _ => (0.5 * dt, t0 + 0.5 * dt),
            };
            if q > 0 {
                let prev = k[q - 1].clone();
                stage.axpy(h, &prev);
            }
            stage.t = tq;
            plant.enforce(&mut stage, ctrl);
            plant.rhs(&stage, &mut k[q]);
        }
        for (q, c) in [1.0, 2.0, 2.0, 1.0].into_iter().enumerate() {
            let kq = k[q].clone();
            s.axpy(dt * c / 6.0, &kq);
        }
        s.t = t0 + dt;
        let u = plant.enforce(&mut s, ctrl);
        let norm = e_norm(&s);
        if !norm.is_finite() || norm > limit {
            return Err(Error::BlowUp { t: s.t, norm, limit });
        }
        if step % stride == 0 || step == steps {
            debug!("t={:.4} E={norm:.4e}", s.t);
            traj.snapshots.push(s.clone());
            traj.controls.push(u);
            traj.norms.push(norm);
        }
    }
    Ok(traj)
}

/// Target state: `alpha = u` and the transformed leftward states `beta[i][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSnapshot {
    pub t: f64,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

/// The continuum transform acting on step-extended n-states, as lower-triangular
/// weight matrices on the simulation grid.
#[derive(Clone, Debug)]
pub struct TransformOperator {
    pub n: usize,
    pub m: usize,
    pub nx: usize,
    /// `tu[i * n + l]`: row-major `nx × nx`, entry `(k, k')` weights `u^l(x_{k'})` in `β^i(x_k)`.
    pub tu: Vec<Vec<f64>>,
    /// `tv[i * m + j]`: likewise for `v^j`.
    pub tv: Vec<Vec<f64>>,
}

/// Trapezoid points on `[lo, hi]` merged with the interior nodes of the uniform grid.
fn merged_points(nx: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    if hi <= lo {
        return vec![];
    }
    let dx = 1.0 / (nx - 1) as f64;
    let mut pts = vec![lo];
    let mut k = (lo / dx).floor() as usize + 1;
    while k < nx && (k as f64) * dx < hi - 1e-14 {
        if (k as f64) * dx > lo + 1e-14 {
            pts.push(k as f64 * dx);
        }
        k += 1;
    }
    pts.push(hi);
    let mut out: Vec<(f64, f64)> = pts.iter().map(|&t| (t, 0.0)).collect();
    for w in 0..pts.len() - 1 {
        let h = 0.5 * (pts[w + 1] - pts[w]);
        out[w].1 += h;
        out[w + 1].1 += h;
    }
    out
}

impl TransformOperator {
    pub fn new(ks: &ContinuumKernelSet, n: usize, nx: usize) -> Self {
        let m = ks.m;
        let ny = ks.ny();
        let mm = ks.grid.y.cell_mean_matrix(n);
        let xs = uniform(nx - 1);
        let rows: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..m * nx)
            .into_par_iter()
            .map(|ik| {
                let (i, k) = (ik / nx, ik % nx);
                let x = xs[k];
                let mut ru = vec![vec![0.0; nx]; n];
                let mut rv = vec![vec![0.0; nx]; m];
                for p in i..m {
                    let (lo, hi) = (ks.map.lower(i, p, x), ks.map.upper(i, p, x));
                    for (t, wq) in merged_points(nx, lo, hi) {
                        let st = mapped_stencil(&ks.map, &ks.grid, i, p, x, t);
                        let (a, s) = locate(nx, t);
                        let mut prof = vec![0.0; ny];
                        for &(nd, w) in &st {
                            if w != 0.0 {
                                let tab = &ks.k[i][p - i][nd * ny..(nd + 1) * ny];
                                prof.iter_mut().zip(tab).for_each(|(o, v)| *o += w * v);
                            }
                        }
                        for l in 0..n {
                            // cell mean times the cell width 1/n gives ∫_{cell} K dy
                            let kv = prof.iter().zip(&mm[l]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                            ru[l][a] += wq * kv * (1.0 - s);
                            if s > 0.0 {
                                ru[l][a + 1] += wq * kv * s;
                            }
                        }
                        for j in 0..m {
                            let lv: f64 = st.iter().map(|&(nd, w)| w * ks.l[i][p - i][j][nd]).sum();
                            rv[j][a] += wq * lv * (1.0 - s);
                            if s > 0.0 {
                                rv[j][a + 1] += wq * lv * s;
                            }
                        }
                    }
                }
                (ru, rv)
            })
            .collect();
        let mut tu = vec![vec![0.0; nx * nx]; m * n];
        let mut tv = vec![vec![0.0; nx * nx]; m * m];
        for (ik, (ru, rv)) in rows.into_iter().enumerate() {
            let (i, k) = (ik / nx, ik % nx);
            for (l, r) in ru.into_iter().enumerate() {
                tu[i * n + l][k * nx..(k + 1) * nx].copy_from_slice(&r);
            }
            for (j, r) in rv.into_iter().enumerate() {
                tv[i * m + j][k * nx..(k + 1) * nx].copy_from_slice(&r);
            }
        }
        Self { n, m, nx, tu, tv }
    }

    /// `β = v − ∫ L v − ∫∫ K u`.
    pub fn apply(&self, s: &PlantState) -> TargetSnapshot {
        let (n, m, nx) = (self.n, self.m, self.nx);
        let beta = (0..m)
            .map(|i| {
                (0..nx)
                    .map(|k| {
                        let row = |mat: &Vec<f64>, f: &Vec<f64>| {
                            mat[k * nx..=k * nx + k].iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
                        };
                        let mut b = s.v[i][k];
                        for j in 0..m {
                            b -= row(&self.tv[i * m + j], &s.v[j]);
                        }
                        for l in 0..n {
                            b -= row(&self.tu[i * n + l], &s.u[l]);
                        }
                        b
                    })
                    .collect()
            })
            .collect();
        TargetSnapshot { t: s.t, alpha: s.u.clone(), beta }
    }

    /// Solves `v − ∫ L v = β + ∫∫ K α` by forward substitution on the grid.
    pub fn invert(&self, target: &TargetSnapshot) -> PlantState {
        let (n, m, nx) = (self.n, self.m, self.nx);
        let mut v = vec![vec![0.0; nx]; m];
        for k in 0..nx {
            let mut rhs = vec![0.0; m];
            let mut mat = vec![vec![0.0; m]; m];
            for i in 0..m {
                let mut r = target.beta[i][k];
                for l in 0..n {
                    let row = &self.tu[i * n + l][k * nx..=k * nx + k];
                    r += row.iter().zip(&target.alpha[l]).map(|(a, b)| a * b).sum::<f64>();
                }
                for j in 0..m {
                    let row = &self.tv[i * m + j][k * nx..=k * nx + k];
                    r += (0..k).map(|kk| row[kk] * v[j][kk]).sum::<f64>();
                    mat[i][j] = if i == j { 1.0 } else { 0.0 } - row[k];
                }
                rhs[i] = r;
            }
            let sol = solve_small(mat, rhs);
            for j in 0..m {
                v[j][k] = sol[j];
            }
        }
        PlantState { t: target.t, u: target.alpha.clone(), v }
    }
}

pub fn apply_transform(ks: &ContinuumKernelSet, s: &PlantState) -> TargetSnapshot {
    TransformOperator::new(ks, s.n(), s.nx()).apply(s)
}

pub fn invert_transform(ks: &ContinuumKernelSet, target: &TargetSnapshot) -> PlantState {
    let nx = target.beta[0].len();
    TransformOperator::new(ks, target.alpha.len(), nx).invert(target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub delta: f64,
    pub d: Vec<f64>,
    pub c_v: f64,
    pub f: Vec<f64>,
    /// The lower bound on δ.
    pub delta_min: f64,
    /// The lower bounds on the D_j.
    pub d_min: Vec<f64>,
    /// Guaranteed decay rate `c_V / max{M_μ, M_λ}` of V.
    pub rate: f64,
}

pub fn choose_lyapunov_params(b: &KernelBounds, m: usize) -> LyapunovParams {
    let mf = m as f64;
    let (ml, mm) = (b.min_lambda, b.min_mu);
    let delta_min = ((2.0 * ml * (b.sigma + b.c_plus) + 2.0) / (ml * ml)).max((b.w.powi(2) + b.c_minus.powi(2) + mf * b.g) / mm);
    let delta = 1.01 * delta_min;
    let c_v = delta - delta_min;
    let qmax = b.q.powi(2).max(1.0);
    let d_min: Vec<f64> = (0..m)
        .map(|j| (1.0 + (m - 1 - j) as f64 * mf * b.g * delta.exp() / (delta * mm)) * qmax)
        .collect();
    let d: Vec<f64> = d_min.iter().map(|v| 1.01 * v).collect();
    let f = (0..m).map(|j| d[j + 1..].iter().sum()).collect();
    let rate = c_v / b.max_mu.max(b.max_lambda);
    LyapunovParams { delta, d, c_v, f, delta_min, d_min, rate }
}

/// `V = ∫ e^{−δx} (1/n) Σ_l α_l²/λ dx + ∫ e^{δx} Σ_j D_j β_j²/μ_j dx`, with λ taken at the
/// cell midpoints.
pub fn lyapunov_value(target: &TargetSnapshot, lp: &LyapunovParams, p: &ContinuumParams) -> f64 {
    let nx = target.beta.first().or(target.alpha.first()).map_or(0, |r| r.len());
    let xs = uniform(nx - 1);
    let w = trapezoid_weights(nx, 1.0 / (nx - 1) as f64);
    let n = target.alpha.len();
    let mut v = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let mut a = 0.0;
        for (l, al) in target.alpha.iter().enumerate() {
            a += al[k] * al[k] / (p.lambda)(x, (l as f64 + 0.5) / n as f64);
        }
        if n > 0 {
            a /= n as f64;
        }
        let b: f64 = target.beta.iter().enumerate().map(|(j, bj)| lp.d[j] * bj[k] * bj[k] / (p.mu[j])(x)).sum();
        v += w[k] * ((-lp.delta * x).exp() * a + (lp.delta * x).exp() * b);
    }
    v
}

/// Monotonicity and exponential fit of V over the saved times from `t_from` on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFit {
    pub t_from: f64,
    pub non_increasing: bool,
    /// Saved times `t_{k+1}` with `V(t_{k+1}) > V(t_k)`.
    pub increases: Vec<f64>,
    /// Least-squares slope of ln V against t.
    pub rate: f64,
    /// Smallest C with `V(t) ≤ C V(t_from) e^{rate (t − t_from)}` on the saved times.
    pub envelope: f64,
}

pub fn fit_lyapunov(times: &[f64], values: &[f64], t_from: f64) -> LyapunovFit {
    let pts: Vec<(f64, f64)> =
        times.iter().zip(values).filter(|(t, _)| **t >= t_from - 1e-9).map(|(&t, &v)| (t, v)).collect();
    let increases = pts.windows(2).filter(|w| w[1].1 > w[0].1).map(|w| w[1].0).collect::<Vec<_>>();
    let logs: Vec<(f64, f64)> = pts.iter().filter(|(_, v)| *v > 0.0).map(|&(t, v)| (t, v.ln())).collect();
    let k = logs.len() as f64;
    let rate = if logs.len() < 2 {
        0.0
    } else {
        let (mt, mv) = (logs.iter().map(|p| p.0).sum::<f64>() / k, logs.iter().map(|p| p.1).sum::<f64>() / k);
        let cov: f64 = logs.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
        let var: f64 = logs.iter().map(|(t, _)| (t - mt).powi(2)).sum();
        cov / var
    };
    let envelope = match pts.first() {
        Some(&(t0, v0)) if v0 > 0.0 => pts.iter().map(|&(t, v)| v / (v0 * (rate * (t - t0)).exp())).fold(0.0, f64::max),
        _ => f64::NAN,
    };
    LyapunovFit { t_from, non_increasing: increases.is_empty(), increases, rate, envelope }
}

/// A smooth random state: low-order cosine series with decaying random coefficients.
pub fn random_smooth_state(n: usize, m: usize, nx: usize, rng: &mut impl Rng) -> PlantState {
    let xs = uniform(nx - 1);
    let row = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        let c: Vec<f64> = (0..4).map(|k| rng.gen_range(-1.0..1.0) / (1.0 + k as f64)).collect();
        xs.iter().map(|&x| c.iter().enumerate().map(|(k, a)| a * (k as f64 * std::f64::consts::PI * x).cos()).sum()).collect()
    };
    PlantState { t: 0.0, u: (0..n).map(|_| row(rng)).collect(), v: (0..m).map(|_| row(rng)).collect() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_ref: usize,
    pub n_list: Vec<usize>,
    /// max over saved times of the E-distance to the sampled reference, per n.
    pub errors: Vec<f64>,
    /// Last over first error.
    pub ratio: f64,
    pub strictly_decreasing: bool,
    /// Whether some n does not divide n_ref and overlap weights were used.
    pub resampled: bool,
    pub nx: usize,
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct StudyOptions {
    pub t_end: f64,
    pub nx: usize,
    pub cfl: f64,
    pub save_dt: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { t_end: 1.0, nx: 256, cfl: 0.5, save_dt: 0.05 }
    }
}

/// `F_n^*` of a step function with `n_ref` cells: the cell means over `n` cells.
fn sample_cells(u: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let nr = u.len();
    let nx = u[0].len();
    (0..n)
        .map(|l| {
            let (a, b) = (l as f64 / n as f64, (l + 1) as f64 / n as f64);
            let mut out = vec![0.0; nx];
            for (r, row) in u.iter().enumerate() {
                let (c, d) = (r as f64 / nr as f64, (r + 1) as f64 / nr as f64);
                let ov = (b.min(d) - a.max(c)).max(0.0) * n as f64;
                if ov > 0.0 {
                    out.iter_mut().zip(row).for_each(|(o, v)| *o += ov * v);
                }
            }
            out
        })
        .collect()
}

/// Open-loop runs of the family at each n and at `n_ref = 4 max(n_list)`, compared in the
/// E-norm after sampling the reference to n cells.
pub fn convergence_study(
    family: &(dyn Fn(usize) -> DiscreteParams + Sync),
    cont: &ContinuumParams,
    u0: &Fn2,
    v0: &[crate::params::Fn1],
    n_list: &[usize],
    opts: &StudyOptions,
) -> Result<ConvergenceReport> {
    if n_list.is_empty() {
        return Err(Error::Config("n_list must not be empty".into()));
    }
    let n_ref = 4 * n_list.iter().max().unwrap();
    let mut all: Vec<usize> = n_list.to_vec();
    all.push(n_ref);
    let params: Vec<DiscreteParams> = all.iter().map(|&n| family(n)).collect();
    for d in &params {
        if d.m != cont.m {
            return Err(Error::Dimension { expected: cont.m, got: d.m });
        }
    }
    let dt = params.iter().map(|d| cfl_step(d, opts.nx, opts.cfl)).collect::<Result<Vec<_>>>()?.into_iter().fold(f64::INFINITY, f64::min);
    let sim = SimOptions { t_end: opts.t_end, nx: opts.nx, cfl: opts.cfl, dt: Some(dt), save_dt: Some(opts.save_dt), blow_up: 1e12 };
    let runs: Vec<Trajectory> = params
        .par_iter()
        .map(|d| {
            let vfs: Vec<&dyn Fn(f64) -> f64> = v0.iter().map(|f| f.as_ref() as &dyn Fn(f64) -> f64).collect();
            let init = PlantState::from_fns(d.n, opts.nx, |x, y| u0(x, y), &vfs);
            simulate(d, &ZeroController { m: d.m }, &init, &sim)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = runs.last().unwrap();
    let resampled = n_list.iter().any(|n| n_ref % n != 0);
    let errors: Vec<f64> = n_list
        .iter()
        .zip(&runs)
        .map(|(&n, run)| {
            run.snapshots
                .iter()
                .zip(&reference.snapshots)
                .map(|(s, r)| {
                    let diff = PlantState {
                        t: s.t,
                        u: s.u.iter().zip(sample_cells(&r.u, n)).map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x - y).collect()).collect(),
                        v: s.v.iter().zip(&r.v).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
                    };
                    e_norm(&diff)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let strictly_decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let ratio = errors[errors.len() - 1] / errors[0];
    Ok(ConvergenceReport { n_ref, n_list: n_list.to_vec(), errors, ratio, strictly_decreasing, resampled, nx: opts.nx, dt })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub n: usize,
    pub m: usize,
    pub nx: usize,
    pub dt: f64,
    pub steps: usize,
    pub save_stride: usize,
    pub controller: String,
    pub kernel_hash: Option<String>,
    pub files: Vec<String>,
}

/// Writes `trajectory.csv`, `controls.csv`, `norms.csv` and `manifest.json`.
pub fn write_trajectory(traj: &Trajectory, dir: &Path, kernel_hash: Option<String>) -> Result<SimManifest> {
    std::fs::create_dir_all(dir)?;
    let s0 = &traj.snapshots[0];
    let (n, m, nx) = (s0.n(), s0.m(), traj.nx);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?);
    write!(f, "t,field,index")?;
    for x in uniform(nx - 1) {
        write!(f, ",{x:.6}")?;
    }
    writeln!(f)?;
    for s in &traj.snapshots {
        for (name, rows) in [("u", &s.u), ("v", &s.v)] {
            for (idx, r) in rows.iter().enumerate() {
                write!(f, "{:.8e},{name},{idx}", s.t)?;
                for v in r {
                    write!(f, ",{v:.10e}")?;
                }
                writeln!(f)?;
            }
        }
    }
    drop(f);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("controls.csv"))?);
    write!(f, "t")?;
    for j in 0..m {
        write!(f, ",U{j}")?;
    }
    writeln!(f)?;
    for (s, u) in traj.snapshots.iter().zip(&traj.controls) {
        write!(f, "{:.8e}", s.t)?;
        for v in u {
            write!(f, ",{v:.10e}")?;
        }
        writeln!(f)?;
    }
    drop(f);
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("norms.csv"))?);
    writeln!(f, "t,e_norm,V")?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        let v = traj.lyapunov.as_ref().map_or(String::new(), |l| format!("{:.10e}", l[k]));
        writeln!(f, "{:.8e},{:.10e},{v}", s.t, traj.norms[k])?;
    }
    drop(f);
    let manifest = SimManifest {
        n,
        m,
        nx,
        dt: traj.dt,
        steps: traj.steps,
        save_stride: traj.save_stride,
        controller: traj.controller.clone(),
        kernel_hash,
        files: vec!["trajectory.csv".into(), "controls.csv".into(), "norms.csv".into()],
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
