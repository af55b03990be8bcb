//! Grids, interpolation and quadrature helpers shared by the solvers.

use serde::{Deserialize, Serialize};

/// Tolerance used when deciding which half-open cell a point belongs to.
const CELL_EPS: f64 = 1e-9;

/// `n + 1` uniform points on `[0, 1]`.
pub fn uniform(n_intervals: usize) -> Vec<f64> {
    let h = 1.0 / n_intervals as f64;
    (0..=n_intervals).map(|k| k as f64 * h).collect()
}

/// Composite trapezoid weights for `n` uniform points with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    if n == 1 {
        w[0] = 0.0;
    }
    w
}

/// Zero-based index of the half-open cell `((k-1)/n, k/n]` containing `y`; `y = 0` maps to the first cell.
pub fn cell_index(n: usize, y: f64) -> usize {
    let k = (n as f64 * y - CELL_EPS).ceil();
    (k.max(1.0) as usize - 1).min(n - 1)
}

/// Locate `x` on a uniform grid over `[0, 1]` with `n` points: (left index, fraction).
#[inline]
pub fn locate(n: usize, x: f64) -> (usize, f64) {
    let s = x.clamp(0.0, 1.0) * (n - 1) as f64;
    let a = (s.floor() as usize).min(n - 2);
    (a, s - a as f64)
}

/// Linear interpolation of a table on a uniform grid over `[0, 1]`.
pub fn lerp_uniform(vals: &[f64], x: f64) -> f64 {
    let (a, t) = locate(vals.len(), x);
    vals[a] * (1.0 - t) + vals[a + 1] * t
}

/// Integrals over `[s, t] ⊂ [y0, y1]` of the two hat functions of the interval.
fn hat_integrals(y0: f64, y1: f64, s: f64, t: f64) -> (f64, f64) {
    let h = y1 - y0;
    let (a, b) = ((s - y0) / h, (t - y0) / h);
    let i1 = 0.5 * (b * b - a * a) * h;
    ((t - s) - i1, i1)
}

/// How a y-dependent table is represented between its nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YRule {
    /// Uniform nodes including both endpoints, piecewise-linear in between.
    Trapezoid,
    /// `n` cells split into `per_cell` sub-cells, one midpoint node each, piecewise constant.
    Cells { n: usize, per_cell: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YGrid {
    pub rule: YRule,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl YGrid {
    pub fn trapezoid(ny: usize) -> Self {
        let nodes = uniform(ny - 1);
        let weights = trapezoid_weights(ny, 1.0 / (ny - 1) as f64);
        Self { rule: YRule::Trapezoid, nodes, weights }
    }

    /// Grid aligned with `n` cells carrying at least `min_nodes` nodes in total.
    pub fn cells(n: usize, min_nodes: usize) -> Self {
        let per_cell = min_nodes.div_ceil(n).max(1);
        let total = n * per_cell;
        let h = 1.0 / total as f64;
        let nodes = (0..total).map(|c| (c as f64 + 0.5) * h).collect();
        Self { rule: YRule::Cells { n, per_cell }, nodes, weights: vec![h; total] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether tables on this grid are continuous in y.
    pub fn is_continuous(&self) -> bool {
        matches!(self.rule, YRule::Trapezoid)
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Squared L² norm of the represented function as computed by the grid quadrature.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v * v).sum()
    }

    /// Evaluate the represented function at `y`.
    pub fn eval(&self, f: &[f64], y: f64) -> f64 {
        match self.rule {
            YRule::Trapezoid => lerp_uniform(f, y),
            YRule::Cells { .. } => f[cell_index(f.len(), y)],
        }
    }

    /// Interpolation stencil of `y`: up to two (node, weight) pairs.
    pub fn stencil(&self, y: f64) -> [(usize, f64); 2] {
        match self.rule {
            YRule::Trapezoid => {
                let (a, t) = locate(self.len(), y);
                [(a, 1.0 - t), (a + 1, t)]
            }
            YRule::Cells { .. } => [(cell_index(self.len(), y), 1.0), (0, 0.0)],
        }
    }

    /// Coefficients `c` with `∫_a^b f(y) dy = Σ c_k f_k` for the represented function.
    pub fn interval_weights(&self, a: f64, b: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.len()];
        match self.rule {
            YRule::Trapezoid => {
                for k in 0..self.len() - 1 {
                    let (y0, y1) = (self.nodes[k], self.nodes[k + 1]);
                    let (s, t) = (a.max(y0), b.min(y1));
                    if t > s {
                        let (w0, w1) = hat_integrals(y0, y1, s, t);
                        c[k] += w0;
                        c[k + 1] += w1;
                    }
                }
            }
            YRule::Cells { .. } => {
                let h = self.weights[0];
                for (k, ck) in c.iter_mut().enumerate() {
                    let (y0, y1) = (k as f64 * h, (k + 1) as f64 * h);
                    *ck = (b.min(y1) - a.max(y0)).max(0.0);
                }
            }
        }
        c
    }

    /// Row `l` holds the coefficients of `n · ∫_{cell l} f dy`, the cell mean.
    pub fn cell_mean_matrix(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|l| {
                let mut row = self.interval_weights(l as f64 / n as f64, (l + 1) as f64 / n as f64);
                row.iter_mut().for_each(|v| *v *= n as f64);
                row
            })
            .collect()
    }

    /// Breakpoints of the represented function (where it may fail to be smooth).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.rule {
            YRule::Trapezoid => self.nodes.clone(),
            YRule::Cells { .. } => uniform(self.len()),
        }
    }
}

/// Adds to `out` the weights of `∫_lo^hi f(t) g(t) dt` over grid values of `g` on the
/// uniform grid `xs` (linear interpolation between nodes), using the trapezoid rule on
/// the merged point set `{lo} ∪ (xs ∩ (lo, hi)) ∪ {hi}`. `f` is the kernel to integrate.
pub fn product_weights(nx: usize, lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64, out: &mut [f64]) {
    if hi <= lo {
        return;
    }
    let dx = 1.0 / (nx - 1) as f64;
    let first = (lo / dx).floor() as usize + 1;
    let mut pts = vec![lo];
    let mut k = first;
    while k < nx && (k as f64) * dx < hi - 1e-14 {
        if (k as f64) * dx > lo + 1e-14 {
            pts.push(k as f64 * dx);
        }
        k += 1;
    }
    pts.push(hi);
    let add = |t: f64, w: f64, out: &mut [f64]| {
        let (a, s) = locate(nx, t);
        out[a] += w * (1.0 - s);
        out[a + 1] += w * s;
    };
    for win in pts.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        let h = 0.5 * (t1 - t0);
        let (f0, f1) = (f(t0), f(t1));
        add(t0, h * f0, out);
        add(t1, h * f1, out);
    }
}

/// Exact `∫_a^b (f - g)²` for functions that are polynomials of degree ≤ 1 between the
/// supplied breakpoints. Two-point Gauss rule per piece, so only interior points are sampled.
pub fn sq_distance(breaks: &[f64], f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> f64 {
    let mut b = breaks.to_vec();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    let off = 0.5 / 3f64.sqrt();
    let mut acc = 0.0;
    for w in b.windows(2) {
        let (s, t) = (w[0], w[1]);
        let (h, mid) = (t - s, 0.5 * (s + t));
        let d = |y: f64| f(y) - g(y);
        let (d0, d1) = (d(mid - off * h), d(mid + off * h));
        acc += 0.5 * h * (d0 * d0 + d1 * d1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_index_half_open() {
        assert_eq!(cell_index(2, 0.5), 0);
        assert_eq!(cell_index(2, 0.5000001), 1);
        assert_eq!(cell_index(2, 0.0), 0);
        assert_eq!(cell_index(10, 0.3), 2);
        assert_eq!(cell_index(4, 1.0), 3);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = YGrid::trapezoid(9);
        let f: Vec<f64> = g.nodes.iter().map(|y| 3.0 * y + 1.0).collect();
        assert!((g.integrate(&f) - 2.5).abs() < 1e-14);
        let c = g.interval_weights(0.1, 0.7);
        let v: f64 = c.iter().zip(&f).map(|(a, b)| a * b).sum();
        let exact = 1.5 * (0.49 - 0.01) + 0.6;
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn cell_means_of_cell_grid() {
        let g = YGrid::cells(3, 7);
        assert_eq!(g.len(), 9);
        let f: Vec<f64> = (0..9).map(|c| (c / 3) as f64).collect();
        let mm = g.cell_mean_matrix(3);
        for (l, row) in mm.iter().enumerate() {
            let v: f64 = row.iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((v - l as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn product_weights_reproduce_integral() {
        let nx = 17;
        let mut w = vec![0.0; nx];
        product_weights(nx, 0.13, 0.77, |t| t, &mut w);
        let xs = uniform(nx - 1);
        let v: f64 = w.iter().zip(&xs).map(|(a, x)| a * 1.0 * x.powi(0)).sum();
        let exact = 0.5 * (0.77f64.powi(2) - 0.13f64.powi(2));
        assert!((v - exact).abs() < 1e-3);
    }

    #[test]
    fn sq_distance_exact_for_linear_pieces() {
        let d = sq_distance(&[0.0, 0.5, 1.0], |y| y, |y| if y <= 0.5 { 0.0 } else { 1.0 });
        let exact = 1.0 / 24.0 + 1.0 / 24.0;
        assert!((d - exact).abs() < 1e-12);
    }
}
