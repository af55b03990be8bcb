//! Successive approximations of the kernel integral equations along characteristics.
//!
//! For a node of segment `p` the K characteristic runs with `dx/ds = −μ_i(x)`,
//! `dξ/ds = λ(ξ, y)` up to the upper boundary of the segment, and
//! `K = B + ∫ (K λ_ξ + Σ_ℓ L_{i,ℓ} θ_ℓ + ∫ K σ dη) ds`.
//! The L characteristic runs with `dx/ds = ε μ_i(x)`, `dξ/ds = ε μ_j(ξ)` and
//! `L = B + ε ∫ (μ_j' L − ∫ K W_j dy − Σ_ℓ L_{i,ℓ} ψ_{ℓ,j}) ds`.
//! Each iteration sweeps the segments of a row in dependency order, taking boundary
//! values from the freshest segment tables and forcing terms from the previous iterate.

use log::{debug, info};
use rayon::prelude::*;

use super::{mapped_stencil, ContinuumKernelSet, KernelGrid};
use crate::error::{Error, Result};
use crate::geometry::{
    build_segment_map, default_step, l_direction, trace_k_characteristic, trace_l_characteristic,
    CharacteristicPath, SegmentMap, TerminalBc, DEFAULT_RESOLUTION,
};
use crate::params::{ContinuumParams, Validate};
use crate::quadrature::locate;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Characteristic step; defaults to the x-spacing over the largest speed.
    pub step: Option<f64>,
    pub geometry_resolution: usize,
    /// Beyond this many distinct λ(·, y) profiles, K stencils are rebuilt every sweep.
    pub max_cached_classes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            step: None,
            geometry_resolution: DEFAULT_RESOLUTION,
            max_cached_classes: 16,
        }
    }
}

pub fn solve_continuum_kernels(
    p: &ContinuumParams,
    grid: KernelGrid,
    tol: f64,
    max_iter: usize,
) -> Result<ContinuumKernelSet> {
    solve_kernels_with(p, grid, &SolveOptions { tol, max_iter, ..SolveOptions::default() })
}

pub fn solve_kernels_with(p: &ContinuumParams, grid: KernelGrid, opts: &SolveOptions) -> Result<ContinuumKernelSet> {
    grid.check()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let report = p.validate()?;
    if !report.pass {
        return Err(Error::Validation(format!("{:?}", report.violations)));
    }
    let map = build_segment_map(p, opts.geometry_resolution)?;
    let step = opts.step.unwrap_or_else(|| default_step(p, grid.nx));
    let tables = Tables::new(p, &grid);
    let classes = lambda_classes(p, &grid);
    info!(
        "solving kernels: m={}, grid=({}, {}, {}), {} lambda class(es), step={step:.3e}",
        p.m,
        grid.nx,
        grid.nxi,
        grid.ny(),
        classes.len()
    );
    let mut ks = ContinuumKernelSet::zeros(map, grid);
    let mut history: Vec<f64> = Vec::new();
    for i in 0..p.m {
        let row = RowSolver { p, map: &ks.map, grid: &ks.grid, tables: &tables, classes: &classes, i, step, opts };
        let out = row.solve()?;
        for (h, v) in out.history.iter().enumerate() {
            if h < history.len() {
                history[h] = history[h].max(*v);
            } else {
                history.push(*v);
            }
        }
        ks.k[i] = out.k;
        ks.l[i] = out.l;
        ks.iterations = ks.iterations.max(out.history.len());
        ks.final_delta = ks.final_delta.max(*out.history.last().unwrap_or(&0.0));
        ks.corner_paths += out.corners;
    }
    ks.history = history;
    ks.g = super::compute_g(&ks, p);
    Ok(ks)
}

/// Parameters tabulated on a fine uniform ξ-grid and on the y-nodes.
struct Tables {
    nf: usize,
    ny: usize,
    lam_dx: Vec<f64>,
    theta: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    /// `σ(ξ_f, η_{c'}, y_c)` at `(f * ny + c) * ny + c'`; `None` when identically zero.
    sigma: Option<Vec<f64>>,
    mu_dx: Vec<Vec<f64>>,
    psi: Vec<Vec<Vec<f64>>>,
    yw: Vec<f64>,
}

impl Tables {
    fn new(p: &ContinuumParams, grid: &KernelGrid) -> Self {
        let nf = 4 * (grid.nx - 1) + 1;
        let ny = grid.ny();
        let xs: Vec<f64> = (0..nf).map(|f| f as f64 / (nf - 1) as f64).collect();
        let ys = &grid.y.nodes;
        let tab2 = |g: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            xs.iter().flat_map(|&x| ys.iter().map(move |&y| g(x, y))).collect()
        };
        let lam_dx = tab2(&|x, y| p.lambda_dx_at(x, y));
        let theta = p.theta.iter().map(|f| tab2(&|x, y| f(x, y))).collect();
        let w = p.w.iter().map(|f| tab2(&|x, y| f(x, y))).collect();
        let sigma: Vec<f64> = xs
            .par_iter()
            .flat_map_iter(|&x| {
                ys.iter().flat_map(move |&y| ys.iter().map(move |&e| (p.sigma)(x, e, y)))
            })
            .collect();
        let sigma = if sigma.iter().all(|v| *v == 0.0) { None } else { Some(sigma) };
        let mu_dx = (0..p.m).map(|j| xs.iter().map(|&x| p.mu_dx_at(j, x)).collect()).collect();
        let psi = (0..p.m)
            .map(|l| (0..p.m).map(|j| xs.iter().map(|&x| (p.psi[l][j])(x)).collect()).collect())
            .collect();
        Self { nf, ny, lam_dx, theta, w, sigma, mu_dx, psi, yw: grid.y.weights.clone() }
    }
}

/// Groups y-nodes that share the same λ(·, y) profile (and hence the same K paths).
fn lambda_classes(p: &ContinuumParams, grid: &KernelGrid) -> Vec<Vec<usize>> {
    let probe: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for (c, &y) in grid.y.nodes.iter().enumerate() {
        let key: Vec<u64> = probe.iter().map(|&x| (p.lambda)(x, y).to_bits()).collect();
        match keys.iter().position(|k| *k == key) {
            Some(q) => classes[q].push(c),
            None => {
                keys.push(key);
                classes.push(vec![c]);
            }
        }
    }
    classes
}

#[derive(Clone, Copy, Debug)]
struct Terminal {
    bc: TerminalBc,
    /// x-interval index and fraction of the terminal point (for edge and ξ = 0 data).
    a: u32,
    t: f64,
    xf: f64,
    /// Fixed boundary value for L (diagonal or artificial data).
    value: f64,
}

/// Path-integral weights for every node of one segment: `Σ_e w_e · f[idx_e]`.
struct Stencil {
    start: Vec<usize>,
    idx: Vec<u32>,
    w: Vec<f64>,
    term: Vec<Terminal>,
    corners: usize,
}

fn path_entries(map: &SegmentMap, grid: &KernelGrid, i: usize, p: usize, path: &CharacteristicPath) -> Vec<(u32, f64)> {
    let s = &path.samples;
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(4 * s.len());
    if s.len() < 2 {
        return out;
    }
    for k in 0..s.len() {
        let left = if k > 0 { s[k][0] - s[k - 1][0] } else { 0.0 };
        let right = if k + 1 < s.len() { s[k + 1][0] - s[k][0] } else { 0.0 };
        let om = 0.5 * (left + right);
        for (nd, w) in mapped_stencil(map, grid, i, p, s[k][1], s[k][2]) {
            if w != 0.0 {
                out.push((nd as u32, om * w));
            }
        }
    }
    out.sort_unstable_by_key(|e| e.0);
    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(out.len());
    for (nd, w) in out {
        match merged.last_mut() {
            Some(last) if last.0 == nd => last.1 += w,
            _ => merged.push((nd, w)),
        }
    }
    merged
}

struct RowOutput {
    k: Vec<Vec<f64>>,
    l: Vec<Vec<Vec<f64>>>,
    history: Vec<f64>,
    corners: usize,
}

struct RowSolver<'a> {
    p: &'a ContinuumParams,
    map: &'a SegmentMap,
    grid: &'a KernelGrid,
    tables: &'a Tables,
    classes: &'a [Vec<usize>],
    i: usize,
    step: f64,
    opts: &'a SolveOptions,
}

impl RowSolver<'_> {
    fn node_xi(&self, p: usize, nd: usize) -> (f64, f64) {
        let (a, b) = (nd / self.grid.nxi, nd % self.grid.nxi);
        let x = self.grid.x(a);
        let lo = self.map.lower(self.i, p, x);
        (x, lo + self.grid.r(b) * (self.map.upper(self.i, p, x) - lo))
    }

    fn build_stencil(
        &self,
        p: usize,
        trace: impl Fn(f64, f64) -> Result<CharacteristicPath> + Sync,
        value: impl Fn(&CharacteristicPath) -> f64 + Sync,
    ) -> Result<Stencil> {
        let per_node: Vec<(Vec<(u32, f64)>, Terminal, bool)> = (0..self.grid.nodes())
            .into_par_iter()
            .map(|nd| {
                let (x, xi) = self.node_xi(p, nd);
                let path = trace(x, xi)?;
                let (a, t) = locate(self.grid.nx, path.terminal.0);
                let term = Terminal { bc: path.terminal_bc, a: a as u32, t, xf: path.terminal.0, value: value(&path) };
                Ok((path_entries(self.map, self.grid, self.i, p, &path), term, path.corner))
            })
            .collect::<Result<_>>()?;
        let mut st = Stencil { start: vec![0], idx: vec![], w: vec![], term: vec![], corners: 0 };
        for (entries, term, corner) in per_node {
            for (nd, w) in entries {
                st.idx.push(nd);
                st.w.push(w);
            }
            st.start.push(st.idx.len());
            st.term.push(term);
            st.corners += corner as usize;
        }
        Ok(st)
    }

    fn k_stencil(&self, p: usize, class: &[usize]) -> Result<Stencil> {
        let y = self.grid.y.nodes[class[0]];
        let (i, step) = (self.i, self.step);
        self.build_stencil(
            p,
            |x, xi| trace_k_characteristic(self.p, self.map, i, p, x, xi, y, step),
            |_| 0.0,
        )
    }

    fn l_stencil(&self, j: usize, p: usize) -> Result<Stencil> {
        let (i, step, pp) = (self.i, self.step, self.p);
        self.build_stencil(
            p,
            |x, xi| trace_l_characteristic(pp, self.map, i, j, p, x, xi, step),
            |path| match path.terminal_bc {
                TerminalBc::LDiagonal => {
                    let x = path.terminal.0;
                    -(pp.psi[i][j])(x) / ((pp.mu[i])(x) - (pp.mu[j])(x))
                }
                TerminalBc::LArtificial => pp.l1_at(i, j, path.terminal.1),
                _ => 0.0,
            },
        )
    }

    /// Diagonal data −θ_i/(λ + μ_i) at the terminal points of a class's K paths.
    fn fill_k_diagonal(&self, st: &Stencil, class: &[usize], kfix: &mut [f64]) {
        let ny = self.grid.ny();
        let ys = &self.grid.y.nodes;
        let p = self.p;
        let i = self.i;
        kfix.par_chunks_mut(ny).zip(st.term.par_iter()).for_each(|(out, term)| {
            let x = term.xf.clamp(0.0, 1.0);
            for &c in class {
                let y = ys[c];
                out[c] = -(p.theta[i])(x, y) / ((p.lambda)(x, y) + (p.mu[i])(x));
            }
        });
    }

    fn solve(&self) -> Result<RowOutput> {
        let (i, m) = (self.i, self.p.m);
        let nseg = m - i;
        let (nodes, ny, nxi) = (self.grid.nodes(), self.grid.ny(), self.grid.nxi);
        let t = self.tables;

        let cache = self.classes.len() <= self.opts.max_cached_classes;
        let mut corners = 0;
        let mut kfix = vec![0.0; nodes * ny];
        let mut k_cached: Vec<Vec<Stencil>> = Vec::new();
        if cache {
            for s in 0..nseg {
                let mut per_class = Vec::new();
                for class in self.classes {
                    let st = self.k_stencil(i + s, class)?;
                    if s == 0 {
                        self.fill_k_diagonal(&st, class, &mut kfix);
                    }
                    corners += st.corners;
                    per_class.push(st);
                }
                k_cached.push(per_class);
            }
        }
        let mut l_st: Vec<Vec<Stencil>> = Vec::with_capacity(nseg);
        for s in 0..nseg {
            let mut per_j = Vec::with_capacity(m);
            for j in 0..m {
                let st = self.l_stencil(j, i + s)?;
                corners += st.corners;
                per_j.push(st);
            }
            l_st.push(per_j);
        }
        debug!("row {i}: stencils ready ({corners} corner paths)");

        // Fine-table position of every node's ξ.
        let pos: Vec<Vec<(usize, f64)>> = (0..nseg)
            .map(|s| (0..nodes).map(|nd| locate(t.nf, self.node_xi(i + s, nd).1)).collect())
            .collect();
        // ξ = 0 reflection weights: ω_c λ(0, y_c) Q_j(y_c) / μ_j(0).
        let qw: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                self.grid
                    .y
                    .nodes
                    .iter()
                    .zip(&t.yw)
                    .map(|(&y, &w)| w * (self.p.lambda)(0.0, y) * (self.p.q[j])(y) / (self.p.mu[j])(0.0))
                    .collect()
            })
            .collect();

        let mut k: Vec<Vec<f64>> = vec![vec![0.0; nodes * ny]; nseg];
        let mut l: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; nodes]; m]; nseg];
        let mut history = Vec::new();

        for it in 1..=self.opts.max_iter {
            // K forcing from the previous iterate.
            let fk: Vec<Vec<f64>> = (0..nseg).map(|s| self.k_forcing(&k[s], &l[s], &pos[s])).collect();
            let mut knew: Vec<Vec<f64>> = vec![vec![0.0; nodes * ny]; nseg];
            for s in 0..nseg {
                let (done, rest) = knew.split_at_mut(s);
                let out = &mut rest[0];
                let prev = if s > 0 { Some(&done[s - 1]) } else { None };
                for (ci, class) in self.classes.iter().enumerate() {
                    let built;
                    let st = if cache {
                        &k_cached[s][ci]
                    } else {
                        built = self.k_stencil(i + s, class)?;
                        if s == 0 && it == 1 {
                            self.fill_k_diagonal(&built, class, &mut kfix);
                        }
                        if it == 1 {
                            corners += built.corners;
                        }
                        &built
                    };
                    apply_k(st, class, &fk[s], &kfix, prev, ny, nxi, out);
                }
            }

            // L forcing from the new K and previous L.
            let fl: Vec<Vec<Vec<f64>>> =
                (0..nseg).map(|s| (0..m).map(|j| self.l_forcing(j, &knew[s], &l[s], &pos[s])).collect()).collect();
            let last = &knew[nseg - 1];
            let bc0: Vec<Vec<f64>> = (0..m)
                .map(|j| {
                    (0..self.grid.nx)
                        .map(|a| {
                            let prof = &last[(a * nxi) * ny..(a * nxi + 1) * ny];
                            prof.iter().zip(&qw[j]).map(|(v, w)| v * w).sum()
                        })
                        .collect()
                })
                .collect();
            let mut lnew: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; nodes]; m]; nseg];
            for j in 0..m {
                let eps = l_direction(i, j);
                let order: Vec<usize> = if j < i {
                    (i..m).collect()
                } else {
                    (i..j).chain((j..m).rev()).collect()
                };
                for p in order {
                    let s = p - i;
                    let mut out = std::mem::take(&mut lnew[s][j]);
                    let upper = if s > 0 { Some(&lnew[s - 1][j]) } else { None };
                    let lower = if s + 1 < nseg { Some(&lnew[s + 1][j]) } else { None };
                    apply_l(&l_st[s][j], eps, &fl[s][j], upper, lower, &bc0[j], nxi, &mut out);
                    lnew[s][j] = out;
                }
            }

            let dk = (0..nseg)
                .map(|s| {
                    knew[s]
                        .par_chunks(ny)
                        .zip(k[s].par_chunks(ny))
                        .map(|(a, b)| a.iter().zip(b).zip(&t.yw).map(|((u, v), w)| w * (u - v) * (u - v)).sum::<f64>())
                        .reduce(|| 0.0, f64::max)
                        .sqrt()
                })
                .fold(0.0, f64::max);
            let dl = (0..nseg)
                .flat_map(|s| (0..m).map(move |j| (s, j)))
                .map(|(s, j)| lnew[s][j].iter().zip(&l[s][j]).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            let delta = dk.max(dl);
            history.push(delta);
            debug!("row {i} iteration {it}: update {delta:.3e}");
            k = knew;
            l = lnew;
            if delta <= self.opts.tol {
                return Ok(RowOutput { k, l, history, corners });
            }
            if !delta.is_finite() {
                break;
            }
        }
        Err(Error::NonConvergence { iterations: history.len(), last: *history.last().unwrap_or(&f64::NAN), history })
    }

    fn k_forcing(&self, k: &[f64], l: &[Vec<f64>], pos: &[(usize, f64)]) -> Vec<f64> {
        let t = self.tables;
        let ny = t.ny;
        let m = self.p.m;
        let mut out = vec![0.0; k.len()];
        out.par_chunks_mut(ny).enumerate().for_each(|(nd, o)| {
            let (f, s) = pos[nd];
            let f1 = (f + 1).min(t.nf - 1);
            let kk = &k[nd * ny..(nd + 1) * ny];
            let lerp = |tab: &[f64], c: usize| tab[f * ny + c] * (1.0 - s) + tab[f1 * ny + c] * s;
            for c in 0..ny {
                let mut v = lerp(&t.lam_dx, c) * kk[c];
                for ell in 0..m {
                    let lv = l[ell][nd];
                    if lv != 0.0 {
                        v += lv * lerp(&t.theta[ell], c);
                    }
                }
                o[c] = v;
            }
            if let Some(sig) = &t.sigma {
                let kw: Vec<f64> = kk.iter().zip(&t.yw).map(|(a, b)| a * b).collect();
                if kw.iter().any(|v| *v != 0.0) {
                    for c in 0..ny {
                        let r0 = &sig[(f * ny + c) * ny..(f * ny + c + 1) * ny];
                        let r1 = &sig[(f1 * ny + c) * ny..(f1 * ny + c + 1) * ny];
                        let d0: f64 = kw.iter().zip(r0).map(|(a, b)| a * b).sum();
                        let d1: f64 = kw.iter().zip(r1).map(|(a, b)| a * b).sum();
                        o[c] += d0 * (1.0 - s) + d1 * s;
                    }
                }
            }
        });
        out
    }

    fn l_forcing(&self, j: usize, k: &[f64], l: &[Vec<f64>], pos: &[(usize, f64)]) -> Vec<f64> {
        let t = self.tables;
        let ny = t.ny;
        let m = self.p.m;
        (0..pos.len())
            .into_par_iter()
            .map(|nd| {
                let (f, s) = pos[nd];
                let f1 = (f + 1).min(t.nf - 1);
                let lerp1 = |tab: &[f64]| tab[f] * (1.0 - s) + tab[f1] * s;
                let kk = &k[nd * ny..(nd + 1) * ny];
                let wj = &t.w[j];
                let mut kw = 0.0;
                for c in 0..ny {
                    let wv = wj[f * ny + c] * (1.0 - s) + wj[f1 * ny + c] * s;
                    kw += t.yw[c] * kk[c] * wv;
                }
                let mut v = lerp1(&t.mu_dx[j]) * l[j][nd] - kw;
                for ell in 0..m {
                    v -= l[ell][nd] * lerp1(&t.psi[ell][j]);
                }
                v
            })
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_k(
    st: &Stencil,
    class: &[usize],
    fk: &[f64],
    kfix: &[f64],
    prev: Option<&Vec<f64>>,
    ny: usize,
    nxi: usize,
    out: &mut [f64],
) {
    out.par_chunks_mut(ny).enumerate().for_each(|(nd, o)| {
        let mut acc = vec![0.0; ny];
        for e in st.start[nd]..st.start[nd + 1] {
            let w = st.w[e];
            let row = &fk[st.idx[e] as usize * ny..(st.idx[e] as usize + 1) * ny];
            for &c in class {
                acc[c] += w * row[c];
            }
        }
        let term = st.term[nd];
        for &c in class {
            let bc = match term.bc {
                TerminalBc::KDiagonal => kfix[nd * ny + c],
                _ => {
                    let src = prev.expect("upper segment solved first");
                    let a = term.a as usize;
                    src[(a * nxi) * ny + c] * (1.0 - term.t) + src[((a + 1) * nxi) * ny + c] * term.t
                }
            };
            o[c] = bc + acc[c];
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn apply_l(
    st: &Stencil,
    eps: f64,
    fl: &[f64],
    upper: Option<&Vec<f64>>,
    lower: Option<&Vec<f64>>,
    bc0: &[f64],
    nxi: usize,
    out: &mut [f64],
) {
    out.par_iter_mut().enumerate().for_each(|(nd, o)| {
        let mut acc = 0.0;
        for e in st.start[nd]..st.start[nd + 1] {
            acc += st.w[e] * fl[st.idx[e] as usize];
        }
        let term = st.term[nd];
        let a = term.a as usize;
        let lerp = |v0: f64, v1: f64| v0 * (1.0 - term.t) + v1 * term.t;
        let bc = match term.bc {
            TerminalBc::LDiagonal | TerminalBc::LArtificial => term.value,
            TerminalBc::LUpperEdge => {
                let src = upper.expect("upper segment solved first");
                lerp(src[a * nxi], src[(a + 1) * nxi])
            }
            TerminalBc::LLowerEdge => {
                let src = lower.expect("lower segment solved first");
                lerp(src[a * nxi + nxi - 1], src[(a + 1) * nxi + nxi - 1])
            }
            TerminalBc::LXiZero => lerp(bc0[a], bc0[a + 1]),
            TerminalBc::KDiagonal | TerminalBc::KUpperEdge => unreachable!("K boundary on an L path"),
        };
        *o = bc + eps * acc;
    });
}
