//! Feedback gains at x = 1 and the boundary control laws built from them.

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ContinuumKernelSet;
use crate::kernel_nm::NmKernelSet;
use crate::quadrature::{product_weights, YGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// `n ∫_{cell l} K(1, ξ, y) dy`.
    MeanValue,
    /// `K(1, ξ, l/n)`.
    Pointwise,
    /// Cell values of the exact n+m kernels.
    Exact,
}

/// Gain tables at x = 1, one per segment, on the segment's ξ-nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledGains {
    pub n: usize,
    pub m: usize,
    pub mode: GainMode,
    /// `xi[i][p - i]`: ascending ξ-nodes spanning `[ρ_i^{p+1}(1), ρ_i^p(1)]`.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// `k[i][p - i][l]` over the ξ-nodes.
    pub k: Vec<Vec<Vec<Vec<f64>>>>,
    /// `l[i][p - i][j]` over the ξ-nodes.
    pub l: Vec<Vec<Vec<Vec<f64>>>>,
    pub warnings: Vec<String>,
}

/// Pointwise sampling needs kernels continuous in y; otherwise use cell means.
pub fn default_mode(ks: &ContinuumKernelSet) -> GainMode {
    if ks.grid.y.is_continuous() {
        GainMode::Pointwise
    } else {
        GainMode::MeanValue
    }
}

fn segment_nodes(ks: &ContinuumKernelSet) -> Vec<Vec<Vec<f64>>> {
    let g = &ks.grid;
    (0..ks.m).map(|i| (i..ks.m).map(|p| (0..g.nxi).map(|b| ks.xi_node(i, p, g.nx - 1, b)).collect()).collect()).collect()
}

fn l_gains(ks: &ContinuumKernelSet) -> Vec<Vec<Vec<Vec<f64>>>> {
    let g = &ks.grid;
    let a = g.nx - 1;
    ks.l.iter()
        .map(|row| row.iter().map(|seg| seg.iter().map(|t| t[a * g.nxi..(a + 1) * g.nxi].to_vec()).collect()).collect())
        .collect()
}

pub fn sample_gains(ks: &ContinuumKernelSet, n: usize, mode: GainMode) -> Result<SampledGains> {
    if n == 0 {
        return Err(Error::Config("number of gains n must be at least 1".into()));
    }
    let g = &ks.grid;
    let (nxi, ny) = (g.nxi, ks.ny());
    let a = g.nx - 1;
    let mut warnings = Vec::new();
    let k = match mode {
        GainMode::MeanValue => {
            let mm = g.y.cell_mean_matrix(n);
            ks.k.iter()
                .map(|row| {
                    row.iter()
                        .map(|tab| {
                            (0..n)
                                .map(|l| {
                                    (0..nxi)
                                        .map(|b| {
                                            let prof = &tab[(a * nxi + b) * ny..(a * nxi + b + 1) * ny];
                                            prof.iter().zip(&mm[l]).map(|(x, w)| x * w).sum()
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }
        GainMode::Pointwise => {
            if !g.y.is_continuous() {
                let msg = "pointwise gain sampling of kernels that are discontinuous in y".to_string();
                warn!("{msg}");
                warnings.push(msg);
            }
            ks.k.iter()
                .map(|row| {
                    row.iter()
                        .map(|tab| {
                            (0..n)
                                .map(|l| {
                                    let y = (l + 1) as f64 / n as f64;
                                    (0..nxi)
                                        .map(|b| g.y.eval(&tab[(a * nxi + b) * ny..(a * nxi + b + 1) * ny], y))
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }
        GainMode::Exact => return Err(Error::Config("exact gains come from n+m kernels".into())),
    };
    Ok(SampledGains { n, m: ks.m, mode, xi: segment_nodes(ks), k, l: l_gains(ks), warnings })
}

impl SampledGains {
    /// Gains of the exact n+m kernels.
    pub fn exact(nm: &NmKernelSet) -> Self {
        let g = nm.grid();
        let a = g.nx - 1;
        let k = nm
            .k
            .iter()
            .map(|row| row.iter().map(|seg| seg.iter().map(|t| t[a * g.nxi..(a + 1) * g.nxi].to_vec()).collect()).collect())
            .collect();
        Self {
            n: nm.n,
            m: nm.m,
            mode: GainMode::Exact,
            xi: segment_nodes(&nm.lifted),
            k,
            l: l_gains(&nm.lifted),
            warnings: vec![],
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "i,p,kind,index,xi,value")?;
        for i in 0..self.m {
            for p in i..self.m {
                let xs = &self.xi[i][p - i];
                for (l, t) in self.k[i][p - i].iter().enumerate() {
                    for (x, v) in xs.iter().zip(t) {
                        writeln!(f, "{i},{p},k,{l},{x:.10e},{v:.15e}")?;
                    }
                }
                for (j, t) in self.l[i][p - i].iter().enumerate() {
                    for (x, v) in xs.iter().zip(t) {
                        writeln!(f, "{i},{p},l,{j},{x:.10e},{v:.15e}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Linear interpolation of `vals` over ascending, uniformly spaced `xs`.
fn interp(xs: &[f64], vals: &[f64], t: f64) -> f64 {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if hi - lo <= 0.0 {
        return vals[0];
    }
    let s = ((t - lo) / (hi - lo)).clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let a = (s.floor() as usize).min(xs.len() - 2);
    let r = s - a as f64;
    vals[a] * (1.0 - r) + vals[a + 1] * r
}

/// The control law as weights on a uniform x-grid: `U^i = Σ_{l,k} wu u^l_k + Σ_{j,k} wv v^j_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOperator {
    pub n: usize,
    pub m: usize,
    pub nx: usize,
    /// Index `(i * n + l) * nx + k`.
    pub wu: Vec<f64>,
    /// Index `(i * m + j) * nx + k`.
    pub wv: Vec<f64>,
}

impl FeedbackOperator {
    pub fn from_gains(g: &SampledGains, nx: usize) -> Self {
        let (n, m) = (g.n, g.m);
        let mut wu = vec![0.0; m * n * nx];
        let mut wv = vec![0.0; m * m * nx];
        for i in 0..m {
            for p in i..m {
                let xs = &g.xi[i][p - i];
                let (lo, hi) = (xs[0], xs[xs.len() - 1]);
                for l in 0..n {
                    let t = &g.k[i][p - i][l];
                    let out = &mut wu[(i * n + l) * nx..(i * n + l + 1) * nx];
                    product_weights(nx, lo, hi, |s| interp(xs, t, s) / n as f64, out);
                }
                for j in 0..m {
                    let t = &g.l[i][p - i][j];
                    let out = &mut wv[(i * m + j) * nx..(i * m + j + 1) * nx];
                    product_weights(nx, lo, hi, |s| interp(xs, t, s), out);
                }
            }
        }
        Self { n, m, nx, wu, wv }
    }

    pub fn check(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<()> {
        if u.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: u.len() });
        }
        if v.len() != self.m {
            return Err(Error::Dimension { expected: self.m, got: v.len() });
        }
        if let Some(bad) = u.iter().chain(v).find(|r| r.len() != self.nx) {
            return Err(Error::Dimension { expected: self.nx, got: bad.len() });
        }
        Ok(())
    }

    pub fn apply(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<f64> {
        let (n, m, nx) = (self.n, self.m, self.nx);
        let dot = |w: &[f64], x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        (0..m)
            .map(|i| {
                let su: f64 = (0..n).map(|l| dot(&self.wu[(i * n + l) * nx..(i * n + l + 1) * nx], &u[l])).sum();
                let sv: f64 = (0..m).map(|j| dot(&self.wv[(i * m + j) * nx..(i * m + j + 1) * nx], &v[j])).sum();
                su + sv
            })
            .collect()
    }
}

/// A continuum state: `u[c]` is the x-profile at y-node `c` of `y`; `v[j]` the x-profiles.
#[derive(Clone, Debug)]
pub struct ContinuumState {
    pub y: YGrid,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub fn eval_control_continuum(ks: &ContinuumKernelSet, state: &ContinuumState) -> Result<Vec<f64>> {
    let m = ks.m;
    if state.v.len() != m {
        return Err(Error::Dimension { expected: m, got: state.v.len() });
    }
    if state.u.len() != state.y.len() {
        return Err(Error::Dimension { expected: state.y.len(), got: state.u.len() });
    }
    let nx = state.v[0].len();
    let g = &ks.grid;
    let (nxi, ny) = (g.nxi, ks.ny());
    let a = g.nx - 1;
    let xs = segment_nodes(ks);
    let lg = l_gains(ks);
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        for p in i..m {
            let xn = &xs[i][p - i];
            let (lo, hi) = (xn[0], xn[nxi - 1]);
            let tab = &ks.k[i][p - i];
            for (c, (&y, &wy)) in state.y.nodes.iter().zip(&state.y.weights).enumerate() {
                let kv: Vec<f64> =
                    (0..nxi).map(|b| g.y.eval(&tab[(a * nxi + b) * ny..(a * nxi + b + 1) * ny], y)).collect();
                let mut w = vec![0.0; nx];
                product_weights(nx, lo, hi, |s| interp(xn, &kv, s), &mut w);
                *o += wy * w.iter().zip(&state.u[c]).map(|(a, b)| a * b).sum::<f64>();
            }
            for j in 0..m {
                let mut w = vec![0.0; nx];
                product_weights(nx, lo, hi, |s| interp(xn, &lg[i][p - i][j], s), &mut w);
                *o += w.iter().zip(&state.v[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(out)
}

pub fn eval_control_sampled(g: &SampledGains, u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<Vec<f64>> {
    let nx = v.first().map_or(0, |r| r.len());
    let op = FeedbackOperator::from_gains(g, nx);
    op.check(u, v)?;
    Ok(op.apply(u, v))
}

pub fn eval_control_exact(nm: &NmKernelSet, u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<Vec<f64>> {
    eval_control_sampled(&SampledGains::exact(nm), u, v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n: usize,
    /// Per row i: max over ξ of `(1/√n) ‖k̃_i(1,ξ) − k_i(1,ξ)‖`.
    pub k_gap: Vec<f64>,
    /// Per row i: max over ξ of `‖ℓ̃_i(1,ξ) − ℓ_i(1,ξ)‖`.
    pub l_gap: Vec<f64>,
    /// `max k_gap + max l_gap`, the coefficient of the state norm in the control error.
    pub coefficient: f64,
}

pub fn control_gap(g: &SampledGains, nm: &NmKernelSet) -> Result<GapReport> {
    if g.n != nm.n || g.m != nm.m {
        return Err(Error::Dimension { expected: nm.n, got: g.n });
    }
    let (n, m) = (g.n, g.m);
    let mut k_gap = vec![0.0f64; m];
    let mut l_gap = vec![0.0f64; m];
    for i in 0..m {
        for p in i..m {
            for (b, &xi) in g.xi[i][p - i].iter().enumerate() {
                let dk: f64 = (0..n).map(|l| (g.k[i][p - i][l][b] - nm.k_seg(i, l, p, 1.0, xi)).powi(2)).sum();
                k_gap[i] = k_gap[i].max(dk.sqrt() / (n as f64).sqrt());
                let dl: f64 = (0..m).map(|j| (g.l[i][p - i][j][b] - nm.ell_seg(i, j, p, 1.0, xi)).powi(2)).sum();
                l_gap[i] = l_gap[i].max(dl.sqrt());
            }
        }
    }
    let coefficient = k_gap.iter().fold(0.0f64, |a, &b| a.max(b)) + l_gap.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(GapReport { n, k_gap, l_gap, coefficient })
}
