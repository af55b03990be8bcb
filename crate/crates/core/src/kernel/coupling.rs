//! The coupling kernels C⁻ (a resolvent-type series in L) and C⁺.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ContinuumKernelSet;
use crate::params::ContinuumParams;

pub const DEFAULT_COUPLING_POINTS: usize = 41;
pub const DEFAULT_COUPLING_TOL: f64 = 1e-8;

/// C⁻ and the η-integrated C⁺ on a uniform `nc × nc` grid of `(x, ξ)` (entries with
/// `ξ > x` are zero) times the kernel y-nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub nc: usize,
    pub ny: usize,
    pub m: usize,
    /// C⁻_j at `((a * nc + b) * ny + c) * m + j`.
    pub c_minus: Vec<f64>,
    /// `∫ C⁺(x, ξ, y, η) dη` at `(a * nc + b) * ny + c`.
    pub c_plus_bar: Vec<f64>,
    /// Sup over (x, ξ, j) of the L²(y) norm of each series term.
    pub term_norms: Vec<f64>,
    /// Factorial envelope `M_W · M_L^{k+1} / k!` of each term, with M_L the column-sum norm.
    pub term_bounds: Vec<f64>,
    pub l_col: f64,
    pub w_max: f64,
}

impl Coupling {
    pub fn c_minus_at(&self, a: usize, b: usize, c: usize, j: usize) -> f64 {
        self.c_minus[((a * self.nc + b) * self.ny + c) * self.m + j]
    }

    /// `max_j sup ‖C⁻_j(x, ξ, ·)‖`.
    pub fn c_minus_bound(&self, yw: &[f64]) -> f64 {
        let (nc, ny, m) = (self.nc, self.ny, self.m);
        let mut best = 0.0f64;
        for a in 0..nc {
            for b in 0..=a {
                for j in 0..m {
                    let s: f64 = (0..ny).map(|c| yw[c] * self.c_minus_at(a, b, c, j).powi(2)).sum();
                    best = best.max(s.sqrt());
                }
            }
        }
        best
    }

    /// `sup ‖∫ C⁺(x, ξ, ·, η) dη‖`.
    pub fn c_plus_bound(&self, yw: &[f64]) -> f64 {
        let (nc, ny) = (self.nc, self.ny);
        let mut best = 0.0f64;
        for a in 0..nc {
            for b in 0..=a {
                let base = (a * nc + b) * ny;
                let s: f64 = (0..ny).map(|c| yw[c] * self.c_plus_bar[base + c].powi(2)).sum();
                best = best.max(s.sqrt());
            }
        }
        best
    }
}

/// Trapezoid weights over the ζ-nodes `b..=a` of a uniform grid with spacing `h`.
fn zeta_weight(e: usize, a: usize, b: usize, h: f64) -> f64 {
    if a == b {
        0.0
    } else if e == a || e == b {
        0.5 * h
    } else {
        h
    }
}

pub fn solve_coupling_c(ks: &ContinuumKernelSet, p: &ContinuumParams, max_terms: usize) -> Coupling {
    solve_coupling_on(ks, p, max_terms, DEFAULT_COUPLING_POINTS, DEFAULT_COUPLING_TOL)
}

pub fn solve_coupling_on(
    ks: &ContinuumKernelSet,
    p: &ContinuumParams,
    max_terms: usize,
    nc: usize,
    tol: f64,
) -> Coupling {
    let (m, ny) = (ks.m, ks.ny());
    let yg = &ks.grid.y;
    let h = 1.0 / (nc - 1) as f64;
    let xs: Vec<f64> = (0..nc).map(|a| a as f64 * h).collect();
    let mm = m * m;

    // L(x_a, ξ_b) and ∫ K_i(x_a, ξ_b, η) dη on the lower triangle.
    let mut lmat = vec![0.0; nc * nc * mm];
    let mut kbar = vec![0.0; nc * nc * m];
    for a in 0..nc {
        for b in 0..=a {
            for i in 0..m {
                let seg = ks.map.segment_of(i, xs[a], xs[b]).expect("grid point in triangle");
                for j in 0..m {
                    lmat[(a * nc + b) * mm + i * m + j] = ks.l_seg(i, j, seg, xs[a], xs[b]);
                }
                kbar[(a * nc + b) * m + i] = yg.integrate(&ks.k_profile(i, seg, xs[a], xs[b]));
            }
        }
    }
    let wtab: Vec<f64> =
        (0..nc).flat_map(|a| (0..ny).flat_map(move |c| (0..m).map(move |i| (a, c, i)))).map(|(a, c, i)| (p.w[i])(xs[a], yg.nodes[c])).collect();
    let wv = |a: usize, c: usize, i: usize| wtab[(a * ny + c) * m + i];

    let w_max = (0..m)
        .map(|i| {
            (0..nc)
                .map(|a| (0..ny).map(|c| yg.weights[c] * wv(a, c, i).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let l_col = (0..nc * nc)
        .map(|ab| (0..m).map(|j| (0..m).map(|i| lmat[ab * mm + i * m + j].abs()).sum::<f64>()).fold(0.0, f64::max))
        .fold(0.0, f64::max);

    let size = nc * nc * ny * m;
    let mut term = vec![0.0; size];
    for a in 0..nc {
        for b in 0..=a {
            for c in 0..ny {
                for j in 0..m {
                    term[((a * nc + b) * ny + c) * m + j] =
                        (0..m).map(|i| wv(a, c, i) * lmat[(a * nc + b) * mm + i * m + j]).sum();
                }
            }
        }
    }
    let norm = |t: &[f64]| -> f64 {
        let mut best = 0.0f64;
        for ab in 0..nc * nc {
            for j in 0..m {
                let s: f64 = (0..ny).map(|c| yg.weights[c] * t[(ab * ny + c) * m + j].powi(2)).sum();
                best = best.max(s.sqrt());
            }
        }
        best
    };
    let mut c_minus = term.clone();
    let mut term_norms = vec![norm(&term)];
    let mut term_bounds = vec![w_max * l_col];
    let mut fact = 1.0;
    let mut k = 0;
    while term_bounds[k] >= tol && k + 1 < max_terms {
        k += 1;
        fact *= k as f64;
        let prev = term;
        term = vec![0.0; size];
        term.par_chunks_mut(nc * ny * m).enumerate().for_each(|(a, row)| {
            for b in 0..=a {
                for e in b..=a {
                    let tw = zeta_weight(e, a, b, h);
                    if tw == 0.0 {
                        continue;
                    }
                    let lrow = &lmat[(e * nc + b) * mm..(e * nc + b + 1) * mm];
                    for c in 0..ny {
                        let src = &prev[((a * nc + e) * ny + c) * m..((a * nc + e) * ny + c + 1) * m];
                        let dst = &mut row[(b * ny + c) * m..(b * ny + c + 1) * m];
                        for (i, s) in src.iter().enumerate() {
                            if *s != 0.0 {
                                for j in 0..m {
                                    dst[j] += tw * s * lrow[i * m + j];
                                }
                            }
                        }
                    }
                }
            }
        });
        c_minus.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
        term_norms.push(norm(&term));
        term_bounds.push(w_max * l_col.powi(k as i32 + 1) / fact);
    }

    let mut c_plus_bar = vec![0.0; nc * nc * ny];
    c_plus_bar.par_chunks_mut(nc * ny).enumerate().for_each(|(a, row)| {
        for b in 0..=a {
            for c in 0..ny {
                let mut v: f64 = (0..m).map(|i| wv(a, c, i) * kbar[(a * nc + b) * m + i]).sum();
                for e in b..=a {
                    let tw = zeta_weight(e, a, b, h);
                    if tw != 0.0 {
                        for i in 0..m {
                            v += tw * c_minus[((a * nc + e) * ny + c) * m + i] * kbar[(e * nc + b) * m + i];
                        }
                    }
                }
                row[b * ny + c] = v;
            }
        }
    });

    Coupling { nc, ny, m, c_minus, c_plus_bar, term_norms, term_bounds, l_col, w_max }
}

/// C⁺(x_a, ξ_b, y_c, η) by direct evaluation, with `x_a`, `ξ_b` on the coupling grid.
pub fn c_plus_at(ks: &ContinuumKernelSet, p: &ContinuumParams, cp: &Coupling, a: usize, b: usize, c: usize, eta: f64) -> f64 {
    let h = 1.0 / (cp.nc - 1) as f64;
    let (x, xi, y) = (a as f64 * h, b as f64 * h, ks.grid.y.nodes[c]);
    let k_eta = |i: usize, xx: f64, zz: f64| ks.k_at(i, xx, zz, eta).expect("grid point in triangle");
    let mut v: f64 = (0..ks.m).map(|i| (p.w[i])(x, y) * k_eta(i, x, xi)).sum();
    for e in b..=a {
        let tw = zeta_weight(e, a, b, h);
        if tw != 0.0 {
            for i in 0..ks.m {
                v += tw * cp.c_minus_at(a, e, c, i) * k_eta(i, e as f64 * h, xi);
            }
        }
    }
    v
}
