use serde::{Deserialize, Serialize};

use super::ContinuumKernelSet;
use crate::params::ContinuumParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub equation: String,
    pub i: usize,
    pub j: Option<usize>,
    pub p: usize,
    pub max: f64,
}

/// Largest residual of every kernel equation, boundary and continuity condition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub k_pde: f64,
    pub l_pde: f64,
    pub k_diagonal: f64,
    pub l_diagonal: f64,
    pub l_xi_zero: f64,
    pub l_artificial: f64,
    pub k_continuity: f64,
    pub l_continuity: f64,
    pub corner_paths: usize,
    pub entries: Vec<ResidualEntry>,
}

impl ResidualReport {
    fn push(&mut self, equation: &str, i: usize, j: Option<usize>, p: usize, max: f64) {
        let slot = match equation {
            "k_pde" => &mut self.k_pde,
            "l_pde" => &mut self.l_pde,
            "k_diagonal" => &mut self.k_diagonal,
            "l_diagonal" => &mut self.l_diagonal,
            "l_xi_zero" => &mut self.l_xi_zero,
            "l_artificial" => &mut self.l_artificial,
            "k_continuity" => &mut self.k_continuity,
            _ => &mut self.l_continuity,
        };
        *slot = slot.max(max);
        self.entries.push(ResidualEntry { equation: equation.into(), i, j, p, max });
    }

    /// Largest boundary or continuity residual.
    pub fn boundary_max(&self) -> f64 {
        [
            self.k_diagonal,
            self.l_diagonal,
            self.l_xi_zero,
            self.l_artificial,
            self.k_continuity,
            self.l_continuity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Residuals of the kernel equations at every `stride`-th interior node (centred
/// differences in mapped coordinates) and of all boundary and continuity conditions.
pub fn kernel_residual(ks: &ContinuumKernelSet, p: &ContinuumParams, stride: usize) -> ResidualReport {
    let stride = stride.max(1);
    let g = &ks.grid;
    let (nx, nxi, ny, m) = (g.nx, g.nxi, g.ny(), ks.m);
    let (hx, hr) = (1.0 / (nx - 1) as f64, 1.0 / (nxi - 1) as f64);
    let yg = &g.y;
    let mut rep = ResidualReport { corner_paths: ks.corner_paths, ..Default::default() };
    let idx = |a: usize, b: usize| a * nxi + b;

    for i in 0..m {
        for pp in i..m {
            let s = pp - i;
            let kt = &ks.k[i][s];
            let lt = &ks.l[i][s];
            let (mut kmax, mut lmax) = (0.0f64, vec![0.0f64; m]);
            for a in (1..nx - 1).step_by(stride) {
                let x = g.x(a);
                let lo = ks.map.lower(i, pp, x);
                let w = ks.map.upper(i, pp, x) - lo;
                let (dlo, dhi) = (ks.map.rho_dx(i, pp + 1, x), ks.map.rho_dx(i, pp, x));
                let mui = (p.mu[i])(x);
                for b in (1..nxi - 1).step_by(stride) {
                    let r = g.r(b);
                    let xi = lo + r * w;
                    let rx = -(dlo + r * (dhi - dlo)) / w;
                    // K equation at every y-node.
                    for c in 0..ny {
                        let at = |aa: usize, bb: usize| kt[idx(aa, bb) * ny + c];
                        let ka = (at(a + 1, b) - at(a - 1, b)) / (2.0 * hx);
                        let kr = (at(a, b + 1) - at(a, b - 1)) / (2.0 * hr);
                        let (kx, kxi) = (ka + kr * rx, kr / w);
                        let y = yg.nodes[c];
                        let kv = at(a, b);
                        let mut rhs: f64 = (0..m).map(|e| lt[e][idx(a, b)] * (p.theta[e])(xi, y)).sum();
                        rhs += (0..ny)
                            .map(|q| yg.weights[q] * kt[idx(a, b) * ny + q] * (p.sigma)(xi, yg.nodes[q], y))
                            .sum::<f64>();
                        let res = mui * kx - (p.lambda)(xi, y) * kxi - p.lambda_dx_at(xi, y) * kv - rhs;
                        kmax = kmax.max(res.abs());
                    }
                    // L equations.
                    for j in 0..m {
                        let at = |aa: usize, bb: usize| lt[j][idx(aa, bb)];
                        let la = (at(a + 1, b) - at(a - 1, b)) / (2.0 * hx);
                        let lr = (at(a, b + 1) - at(a, b - 1)) / (2.0 * hr);
                        let (lx, lxi) = (la + lr * rx, lr / w);
                        let kw: f64 = (0..ny)
                            .map(|q| yg.weights[q] * kt[idx(a, b) * ny + q] * (p.w[j])(xi, yg.nodes[q]))
                            .sum();
                        let lpsi: f64 = (0..m).map(|e| lt[e][idx(a, b)] * (p.psi[e][j])(xi)).sum();
                        let res = mui * lx + (p.mu[j])(xi) * lxi + p.mu_dx_at(j, xi) * at(a, b) - lpsi - kw;
                        lmax[j] = lmax[j].max(res.abs());
                    }
                }
            }
            rep.push("k_pde", i, None, pp, kmax);
            for (j, v) in lmax.into_iter().enumerate() {
                rep.push("l_pde", i, Some(j), pp, v);
            }
        }

        // K on ξ = x.
        let kt = &ks.k[i][0];
        let mut kd = 0.0f64;
        for a in 0..nx {
            let x = g.x(a);
            for (c, &y) in yg.nodes.iter().enumerate() {
                let target = -(p.theta[i])(x, y) / ((p.lambda)(x, y) + (p.mu[i])(x));
                kd = kd.max((kt[idx(a, nxi - 1) * ny + c] - target).abs());
            }
        }
        rep.push("k_diagonal", i, None, i, kd);

        for j in 0..m {
            if j != i {
                let lt = &ks.l[i][0][j];
                let v = (0..nx)
                    .map(|a| {
                        let x = g.x(a);
                        let target = -(p.psi[i][j])(x) / ((p.mu[i])(x) - (p.mu[j])(x));
                        (lt[idx(a, nxi - 1)] - target).abs()
                    })
                    .fold(0.0, f64::max);
                rep.push("l_diagonal", i, Some(j), i, v);
            }
            if j >= i {
                let last = &ks.k[i][m - 1 - i];
                let lt = &ks.l[i][m - 1 - i][j];
                let v = (0..nx)
                    .map(|a| {
                        let prof = &last[idx(a, 0) * ny..(idx(a, 0) + 1) * ny];
                        let target: f64 = (0..ny)
                            .map(|c| {
                                let y = yg.nodes[c];
                                yg.weights[c] * prof[c] * (p.lambda)(0.0, y) * (p.q[j])(y)
                            })
                            .sum::<f64>()
                            / (p.mu[j])(0.0);
                        (lt[idx(a, 0)] - target).abs()
                    })
                    .fold(0.0, f64::max);
                rep.push("l_xi_zero", i, Some(j), m - 1, v);
            } else {
                for pp in i..m {
                    let lt = &ks.l[i][pp - i][j];
                    let v = (0..nxi)
                        .map(|b| {
                            let xi = ks.xi_node(i, pp, nx - 1, b);
                            (lt[idx(nx - 1, b)] - p.l1_at(i, j, xi)).abs()
                        })
                        .fold(0.0, f64::max);
                    rep.push("l_artificial", i, Some(j), pp, v);
                }
            }
        }

        // Continuity across ρ_i^p between segments p−1 and p.
        for pp in i + 1..m {
            let (above, below) = (&ks.k[i][pp - 1 - i], &ks.k[i][pp - i]);
            let mut v = 0.0f64;
            for a in 0..nx {
                for c in 0..ny {
                    v = v.max((above[idx(a, 0) * ny + c] - below[idx(a, nxi - 1) * ny + c]).abs());
                }
            }
            rep.push("k_continuity", i, None, pp, v);
            for j in (0..m).filter(|&j| j != pp) {
                let (above, below) = (&ks.l[i][pp - 1 - i][j], &ks.l[i][pp - i][j]);
                let v = (0..nx).map(|a| (above[idx(a, 0)] - below[idx(a, nxi - 1)]).abs()).fold(0.0, f64::max);
                rep.push("l_continuity", i, Some(j), pp, v);
            }
        }
    }
    rep
}
