//! Continuum backstepping kernels K_i^p(x, ξ, y) and L_{i,j}^p(x, ξ).
//!
//! Each segment is tabulated on a structured grid in mapped coordinates: `nx` uniform
//! x-nodes, `nxi` uniform nodes of the relative position `r ∈ [0, 1]` between the lower
//! and upper boundary curves, and the y-grid. Node `(a, b)` of segment `p` of row `i` sits
//! at `x_a = a/(nx-1)`, `ξ = lo(x_a) + r_b (hi(x_a) - lo(x_a))`.

mod bounds;
mod coupling;
mod io;
mod residual;
mod solve;

pub use bounds::{compute_bounds, KernelBounds};
pub use coupling::{c_plus_at, solve_coupling_c, solve_coupling_on, Coupling};
pub use io::{example_closed_form, read_manifest, table_errors, table_hash, write_kernel_tables, KernelManifest, TableError};
pub use residual::{kernel_residual, ResidualReport};
pub use solve::{solve_continuum_kernels, solve_kernels_with, SolveOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SegmentMap;
use crate::params::ContinuumParams;
use crate::quadrature::{locate, YGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelGrid {
    pub nx: usize,
    pub nxi: usize,
    pub y: YGrid,
}

impl KernelGrid {
    pub fn new(nx: usize, nxi: usize, ny: usize) -> Self {
        Self { nx, nxi, y: YGrid::trapezoid(ny) }
    }

    pub fn with_y(nx: usize, nxi: usize, y: YGrid) -> Self {
        Self { nx, nxi, y }
    }

    pub fn check(&self) -> Result<()> {
        if self.nx < 8 || self.nxi < 8 || self.y.len() < 8 {
            return Err(Error::Config(format!(
                "kernel grid ({}, {}, {}) must have at least 8 points per axis",
                self.nx,
                self.nxi,
                self.y.len()
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.nx * self.nxi
    }

    pub fn ny(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self, a: usize) -> f64 {
        a as f64 / (self.nx - 1) as f64
    }

    pub fn r(&self, b: usize) -> f64 {
        b as f64 / (self.nxi - 1) as f64
    }
}

/// Bilinear stencil of `(x, ξ)` in the mapped grid of segment `p` of row `i`.
pub fn mapped_stencil(map: &SegmentMap, grid: &KernelGrid, i: usize, p: usize, x: f64, xi: f64) -> [(usize, f64); 4] {
    let (a, tx) = locate(grid.nx, x);
    let lo = map.lower(i, p, x);
    let w = map.upper(i, p, x) - lo;
    let r = if w > 1e-300 { ((xi - lo) / w).clamp(0.0, 1.0) } else { 0.0 };
    let (b, tr) = locate(grid.nxi, r);
    let n = grid.nxi;
    [
        (a * n + b, (1.0 - tx) * (1.0 - tr)),
        (a * n + b + 1, (1.0 - tx) * tr),
        ((a + 1) * n + b, tx * (1.0 - tr)),
        ((a + 1) * n + b + 1, tx * tr),
    ]
}

/// Solved kernels with derived quantities.
#[derive(Clone, Debug)]
pub struct ContinuumKernelSet {
    pub m: usize,
    pub grid: KernelGrid,
    pub map: SegmentMap,
    /// `k[i][p - i]`: values at node `(a, b)` and y-node `c` stored at `(a * nxi + b) * ny + c`.
    pub k: Vec<Vec<Vec<f64>>>,
    /// `l[i][p - i][j]`: values at node `(a, b)` stored at `a * nxi + b`.
    pub l: Vec<Vec<Vec<Vec<f64>>>>,
    /// `g[i][j]` over the x-nodes; zero for `i ≤ j`.
    pub g: Vec<Vec<Vec<f64>>>,
    pub coupling: Option<Coupling>,
    pub iterations: usize,
    pub final_delta: f64,
    /// Largest update over the rows at each iteration.
    pub history: Vec<f64>,
    /// Number of characteristic paths that ended at the corner (0, 0).
    pub corner_paths: usize,
}

impl ContinuumKernelSet {
    /// Zero kernels on the given grid.
    pub fn zeros(map: SegmentMap, grid: KernelGrid) -> Self {
        let m = map.m;
        let (nodes, ny) = (grid.nodes(), grid.ny());
        let k = (0..m).map(|i| (i..m).map(|_| vec![0.0; nodes * ny]).collect()).collect();
        let l = (0..m).map(|i| (i..m).map(|_| vec![vec![0.0; nodes]; m]).collect()).collect();
        let g = vec![vec![vec![0.0; grid.nx]; m]; m];
        Self {
            m,
            grid,
            map,
            k,
            l,
            g,
            coupling: None,
            iterations: 0,
            final_delta: 0.0,
            history: vec![],
            corner_paths: 0,
        }
    }

    pub fn ny(&self) -> usize {
        self.grid.ny()
    }

    pub fn xi_node(&self, i: usize, p: usize, a: usize, b: usize) -> f64 {
        let x = self.grid.x(a);
        let lo = self.map.lower(i, p, x);
        lo + self.grid.r(b) * (self.map.upper(i, p, x) - lo)
    }

    /// K_i^p at `(x, ξ)` on y-node `c`, interpolated within segment `p` (one-sided at its edges).
    pub fn k_seg(&self, i: usize, p: usize, x: f64, xi: f64, c: usize) -> f64 {
        let ny = self.ny();
        let tab = &self.k[i][p - i];
        mapped_stencil(&self.map, &self.grid, i, p, x, xi).iter().map(|&(nd, w)| w * tab[nd * ny + c]).sum()
    }

    /// The y-profile of K_i^p at `(x, ξ)` on the y-nodes.
    pub fn k_profile(&self, i: usize, p: usize, x: f64, xi: f64) -> Vec<f64> {
        let ny = self.ny();
        let tab = &self.k[i][p - i];
        let mut out = vec![0.0; ny];
        for (nd, w) in mapped_stencil(&self.map, &self.grid, i, p, x, xi) {
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&tab[nd * ny..(nd + 1) * ny]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// K_i(x, ξ, y) with the segment chosen by the boundary convention.
    pub fn k_at(&self, i: usize, x: f64, xi: f64, y: f64) -> Result<f64> {
        let p = self.map.segment_of(i, x, xi)?;
        Ok(self.grid.y.eval(&self.k_profile(i, p, x, xi), y))
    }

    pub fn l_seg(&self, i: usize, j: usize, p: usize, x: f64, xi: f64) -> f64 {
        let tab = &self.l[i][p - i][j];
        mapped_stencil(&self.map, &self.grid, i, p, x, xi).iter().map(|&(nd, w)| w * tab[nd]).sum()
    }

    pub fn l_at(&self, i: usize, j: usize, x: f64, xi: f64) -> Result<f64> {
        let p = self.map.segment_of(i, x, xi)?;
        Ok(self.l_seg(i, j, p, x, xi))
    }

    /// Segments of row `i` with their ξ-interval at the given x, ordered by increasing ξ.
    pub fn segments_at(&self, i: usize, x: f64) -> Vec<(usize, f64, f64)> {
        (i..self.m).rev().map(|p| (p, self.map.lower(i, p, x), self.map.upper(i, p, x))).collect()
    }

    /// Replace every y-profile by its cell means over `n` cells (one value per cell).
    pub fn cell_means(&self, n: usize) -> Vec<Vec<Vec<Vec<f64>>>> {
        let mm = self.grid.y.cell_mean_matrix(n);
        let ny = self.ny();
        self.k
            .iter()
            .map(|row| {
                row.iter()
                    .map(|tab| {
                        (0..n)
                            .map(|l| {
                                tab.chunks(ny)
                                    .map(|prof| prof.iter().zip(&mm[l]).map(|(a, b)| a * b).sum())
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// G_{i,j}(x) = (1/μ_j(0)) ∫ K_i(x, 0, y) λ(0, y) Q_j(y) dy for i > j, zero otherwise.
pub fn compute_g(ks: &ContinuumKernelSet, p: &ContinuumParams) -> Vec<Vec<Vec<f64>>> {
    let m = ks.m;
    let (nx, nxi, ny) = (ks.grid.nx, ks.grid.nxi, ks.ny());
    let yg = &ks.grid.y;
    let mut g = vec![vec![vec![0.0; nx]; m]; m];
    for i in 0..m {
        let tab = &ks.k[i][m - 1 - i];
        for j in 0..i {
            let qw: Vec<f64> = yg
                .nodes
                .iter()
                .zip(&yg.weights)
                .map(|(&y, &w)| w * (p.lambda)(0.0, y) * (p.q[j])(y) / (p.mu[j])(0.0))
                .collect();
            for a in 0..nx {
                let prof = &tab[(a * nxi) * ny..(a * nxi + 1) * ny];
                g[i][j][a] = prof.iter().zip(&qw).map(|(k, w)| k * w).sum();
            }
        }
    }
    g
}
