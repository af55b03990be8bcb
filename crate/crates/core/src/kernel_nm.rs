//! Exact n+m kernels through the step-function lift, and their distance to continuum kernels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{solve_kernels_with, ContinuumKernelSet, KernelGrid, SolveOptions};
use crate::params::{make_step_params, DiscreteParams};
use crate::quadrature::{cell_index, YGrid};

/// Minimum number of y-nodes used for the lifted solve.
const MIN_LIFT_NODES: usize = 8;

#[derive(Clone, Debug)]
pub struct NmKernelSet {
    pub n: usize,
    pub m: usize,
    /// `k[i][p - i][l]`: cell value of K on cell `l`, at node `a * nxi + b`.
    pub k: Vec<Vec<Vec<Vec<f64>>>>,
    /// The underlying solve on the step parameters; its L tables are the ℓ kernels.
    pub lifted: ContinuumKernelSet,
}

impl NmKernelSet {
    pub fn grid(&self) -> &KernelGrid {
        &self.lifted.grid
    }

    pub fn ell(&self, i: usize, p: usize, j: usize) -> &[f64] {
        &self.lifted.l[i][p - i][j]
    }

    /// `k_{i,l}^p(x, ξ)` interpolated within segment `p`.
    pub fn k_seg(&self, i: usize, l: usize, p: usize, x: f64, xi: f64) -> f64 {
        let tab = &self.k[i][p - i][l];
        crate::kernel::mapped_stencil(&self.lifted.map, &self.lifted.grid, i, p, x, xi)
            .iter()
            .map(|&(nd, w)| w * tab[nd])
            .sum()
    }

    pub fn k_vec(&self, i: usize, p: usize, x: f64, xi: f64) -> Vec<f64> {
        (0..self.n).map(|l| self.k_seg(i, l, p, x, xi)).collect()
    }

    pub fn ell_seg(&self, i: usize, j: usize, p: usize, x: f64, xi: f64) -> f64 {
        self.lifted.l_seg(i, j, p, x, xi)
    }
}

pub fn solve_nm_kernels(d: &DiscreteParams, nx: usize, nxi: usize, tol: f64, max_iter: usize) -> Result<NmKernelSet> {
    solve_nm_with(d, nx, nxi, &SolveOptions { tol, max_iter, ..SolveOptions::default() })
}

pub fn solve_nm_with(d: &DiscreteParams, nx: usize, nxi: usize, opts: &SolveOptions) -> Result<NmKernelSet> {
    let p = make_step_params(d)?;
    let n = d.n;
    let grid = KernelGrid::with_y(nx, nxi, YGrid::cells(n, MIN_LIFT_NODES));
    let lifted = solve_kernels_with(&p, grid, opts)?;
    let k = lifted.cell_means(n);
    Ok(NmKernelSet { n, m: d.m, k, lifted })
}

/// Residuals of the n+m boundary and continuity conditions at the table nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NmResidual {
    /// `μ_i k_i^i(x,x) + Λ k_i^i(x,x) + Θ_{i,·}`.
    pub k_diagonal: f64,
    /// `(μ_i − μ_j) ℓ_{i,j}^i(x,x) + ψ_{i,j}` for `j ≠ i`.
    pub l_diagonal: f64,
    /// `(1/n) Σ_l q_{l,j} λ_l(0) k_{i,l}^m(x,0) − μ_j(0) ℓ_{i,j}^m(x,0)` for `j ≥ i`.
    pub xi_zero: f64,
    /// `ℓ_{i,j}^p(1,ξ) − l_{i,j}(ξ)` for `j < i`.
    pub artificial: f64,
    pub continuity: f64,
}

impl NmResidual {
    pub fn max(&self) -> f64 {
        [self.k_diagonal, self.l_diagonal, self.xi_zero, self.artificial, self.continuity]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn nm_boundary_residuals(nm: &NmKernelSet, d: &DiscreteParams) -> NmResidual {
    let g = nm.grid();
    let (nx, nxi, n, m) = (g.nx, g.nxi, nm.n, nm.m);
    let idx = |a: usize, b: usize| a * nxi + b;
    let mut r = NmResidual::default();
    for i in 0..m {
        for a in 0..nx {
            let x = g.x(a);
            let mui = (d.mu[i])(x);
            for l in 0..n {
                let kv = nm.k[i][0][l][idx(a, nxi - 1)];
                r.k_diagonal = r.k_diagonal.max((mui * kv + (d.lambda[l])(x) * kv + (d.theta[i][l])(x)).abs());
            }
            for j in (0..m).filter(|&j| j != i) {
                let lv = nm.ell(i, i, j)[idx(a, nxi - 1)];
                r.l_diagonal = r.l_diagonal.max(((mui - (d.mu[j])(x)) * lv + (d.psi[i][j])(x)).abs());
            }
            for j in i..m {
                let kq: f64 = (0..n)
                    .map(|l| d.q[l][j] * (d.lambda[l])(0.0) * nm.k[i][m - 1 - i][l][idx(a, 0)])
                    .sum::<f64>()
                    / n as f64;
                let lv = nm.ell(i, m - 1, j)[idx(a, 0)];
                r.xi_zero = r.xi_zero.max((kq - (d.mu[j])(0.0) * lv).abs());
            }
        }
        for j in 0..i {
            for pp in i..m {
                for b in 0..nxi {
                    let xi = nm.lifted.xi_node(i, pp, nx - 1, b);
                    let target = match &d.l1[i][j] {
                        Some(f) => f(xi),
                        None => -(d.psi[i][j])(1.0) / ((d.mu[i])(1.0) - (d.mu[j])(1.0)),
                    };
                    r.artificial = r.artificial.max((nm.ell(i, pp, j)[idx(nx - 1, b)] - target).abs());
                }
            }
        }
        for pp in i + 1..m {
            for a in 0..nx {
                for l in 0..n {
                    let (above, below) = (&nm.k[i][pp - 1 - i][l], &nm.k[i][pp - i][l]);
                    r.continuity = r.continuity.max((above[idx(a, 0)] - below[idx(a, nxi - 1)]).abs());
                }
                for j in (0..m).filter(|&j| j != pp) {
                    let (above, below) = (nm.ell(i, pp - 1, j), nm.ell(i, pp, j));
                    r.continuity = r.continuity.max((above[idx(a, 0)] - below[idx(a, nxi - 1)]).abs());
                }
            }
        }
    }
    r
}

/// Largest discrepancy between `(1/√n)‖(k_{i,l})_l‖` and the L² norm of the step
/// extension, over all table points.
pub fn isometry_gap(nm: &NmKernelSet) -> f64 {
    let n = nm.n;
    let breaks: Vec<f64> = (0..=n).map(|l| l as f64 / n as f64).collect();
    let mut worst = 0.0f64;
    for row in &nm.k {
        for seg in row {
            for node in 0..seg[0].len() {
                let v: Vec<f64> = seg.iter().map(|t| t[node]).collect();
                let vec_norm = v.iter().map(|c| c * c).sum::<f64>().sqrt() / (n as f64).sqrt();
                let step_norm = crate::quadrature::sq_distance(&breaks, |y| v[cell_index(n, y)], |_| 0.0).sqrt();
                worst = worst.max((vec_norm - step_norm).abs());
            }
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub n: usize,
    /// max over segments and (x, ξ) of `‖K_i^p(x,ξ,·) − Kⁿ_{i,p}(x,ξ,·)‖_{L²}`.
    pub k: f64,
    /// max over segments, (x, ξ) and (i, j) of `|L_{i,j}^p − ℓ_{i,j}^p|`.
    pub l: f64,
    /// `l_pair[i][j]`, the same maximum per pair.
    pub l_pair: Vec<Vec<f64>>,
    /// max over (x, ξ) and i of the Euclidean norm of `(L_{i,j} − ℓ_{i,j})_j`.
    pub l_vector: f64,
    /// `√m · l`, the bound for `l_vector`.
    pub l_vector_bound: f64,
    /// Sampling grid `(nx, nxi)` actually used.
    pub sample_grid: (usize, usize),
    /// Whether one of the kernel sets had to be interpolated to the sampling grid.
    pub resampled: bool,
}

pub fn kernel_distance(cont: &ContinuumKernelSet, nm: &NmKernelSet, n: usize) -> DistanceReport {
    let (gc, gn) = (&cont.grid, nm.grid());
    let coarse = if gc.nodes() <= gn.nodes() { gc } else { gn };
    let (nx, nxi) = (coarse.nx, coarse.nxi);
    let resampled = gc.nx != gn.nx || gc.nxi != gn.nxi;
    let m = cont.m;
    let mut breaks = cont.grid.y.breakpoints();
    breaks.extend((0..=n).map(|l| l as f64 / n as f64));

    let per_point: Vec<(f64, Vec<Vec<f64>>, f64)> = (0..nx)
        .into_par_iter()
        .map(|a| {
            let mut kmax = 0.0f64;
            let mut lp = vec![vec![0.0f64; m]; m];
            let mut lvec = 0.0f64;
            let x = coarse.x(a);
            for i in 0..m {
                for p in i..m {
                    let lo = cont.map.lower(i, p, x);
                    let w = cont.map.upper(i, p, x) - lo;
                    for b in 0..nxi {
                        let xi = lo + coarse.r(b) * w;
                        let prof = cont.k_profile(i, p, x, xi);
                        let kv = nm.k_vec(i, p, x, xi);
                        let d2 = crate::quadrature::sq_distance(
                            &breaks,
                            |y| cont.grid.y.eval(&prof, y),
                            |y| kv[cell_index(n, y)],
                        );
                        kmax = kmax.max(d2.sqrt());
                        let mut sq = 0.0;
                        for j in 0..m {
                            let e = (cont.l_seg(i, j, p, x, xi) - nm.ell_seg(i, j, p, x, xi)).abs();
                            lp[i][j] = lp[i][j].max(e);
                            sq += e * e;
                        }
                        lvec = lvec.max(sq.sqrt());
                    }
                }
            }
            (kmax, lp, lvec)
        })
        .collect();

    let mut rep = DistanceReport {
        n,
        k: 0.0,
        l: 0.0,
        l_pair: vec![vec![0.0; m]; m],
        l_vector: 0.0,
        l_vector_bound: 0.0,
        sample_grid: (nx, nxi),
        resampled,
    };
    for (k, lp, lv) in per_point {
        rep.k = rep.k.max(k);
        rep.l_vector = rep.l_vector.max(lv);
        for i in 0..m {
            for j in 0..m {
                rep.l_pair[i][j] = rep.l_pair[i][j].max(lp[i][j]);
            }
        }
    }
    rep.l = rep.l_pair.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
    rep.l_vector_bound = (m as f64).sqrt() * rep.l;
    rep
}
