//! Segment decomposition of the triangle `0 ≤ ξ ≤ x ≤ 1` and characteristic tracing.
//!
//! Row `i` of the kernels lives on segments `p = i..m`, where segment `p` is bounded by
//! `ρ_i^{p+1}(x) ≤ ξ ≤ ρ_i^p(x)` with `ρ_i^p = φ_p⁻¹ ∘ φ_i`, `ρ_i^i(x) = x` and `ρ_i^m ≡ 0`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ContinuumParams, Fn1, Fn2};

pub const DEFAULT_RESOLUTION: usize = 8192;
/// A start point this close to its terminal boundary has a zero-length path.
const ON_BOUNDARY: f64 = 1e-12;
const MAX_STEPS: usize = 1_000_000;

#[derive(Clone)]
pub struct SegmentMap {
    pub m: usize,
    res: usize,
    phi: Vec<Vec<f64>>,
    /// `rho[i][p - i]` on the fine grid for `p = i..=m`.
    rho: Vec<Vec<Vec<f64>>>,
    mu: Vec<Fn1>,
}

impl fmt::Debug for SegmentMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SegmentMap").field("m", &self.m).field("res", &self.res).finish()
    }
}

pub fn build_segment_map(p: &ContinuumParams, resolution: usize) -> Result<SegmentMap> {
    let m = p.m;
    let res = resolution.max(16);
    let h = 1.0 / res as f64;
    let mut phi = Vec::with_capacity(m);
    for j in 0..m {
        let mut tab = vec![0.0; res + 1];
        let mut prev = 1.0 / (p.mu[j])(0.0);
        for k in 1..=res {
            let cur = 1.0 / (p.mu[j])(k as f64 * h);
            tab[k] = tab[k - 1] + 0.5 * h * (prev + cur);
            prev = cur;
        }
        if let Some(k) = (1..=res).find(|&k| !(tab[k] > tab[k - 1]) || !tab[k].is_finite()) {
            return Err(Error::Geometry(format!(
                "phi[{j}] is not strictly increasing near x = {:.5}; check the sign of mu[{j}]",
                k as f64 * h
            )));
        }
        phi.push(tab);
    }
    let mut map = SegmentMap { m, res, phi, rho: Vec::new(), mu: p.mu.clone() };
    let mut rho = Vec::with_capacity(m);
    for i in 0..m {
        let mut rows = Vec::new();
        for q in i..=m {
            let row: Vec<f64> = (0..=res)
                .map(|k| {
                    let x = k as f64 * h;
                    if q == i {
                        x
                    } else if q == m {
                        0.0
                    } else {
                        map.phi_inv(q, map.phi(i, x))
                    }
                })
                .collect();
            rows.push(row);
        }
        rho.push(rows);
    }
    map.rho = rho;
    Ok(map)
}

impl SegmentMap {
    fn lookup(&self, tab: &[f64], x: f64) -> f64 {
        let s = x.clamp(0.0, 1.0) * self.res as f64;
        let a = (s.floor() as usize).min(self.res - 1);
        let t = s - a as f64;
        tab[a] * (1.0 - t) + tab[a + 1] * t
    }

    pub fn phi(&self, j: usize, x: f64) -> f64 {
        self.lookup(&self.phi[j], x)
    }

    /// Inverse of φ_j; arguments beyond φ_j(1) are clamped.
    pub fn phi_inv(&self, j: usize, t: f64) -> f64 {
        let tab = &self.phi[j];
        if t <= 0.0 {
            return 0.0;
        }
        if t >= tab[self.res] {
            return 1.0;
        }
        let k = tab.partition_point(|&v| v <= t).clamp(1, self.res);
        let (t0, t1) = (tab[k - 1], tab[k]);
        ((k - 1) as f64 + (t - t0) / (t1 - t0)) / self.res as f64
    }

    /// ρ_i^p(x) for `p = i..=m`.
    pub fn rho(&self, i: usize, p: usize, x: f64) -> f64 {
        if p == i {
            x
        } else if p == self.m {
            0.0
        } else {
            self.lookup(&self.rho[i][p - i], x)
        }
    }

    /// dρ_i^p/dx = μ_p(ρ)/μ_i(x).
    pub fn rho_dx(&self, i: usize, p: usize, x: f64) -> f64 {
        if p == i {
            1.0
        } else if p == self.m {
            0.0
        } else {
            let r = self.rho(i, p, x);
            (self.mu[p])(r) / (self.mu[i])(x.clamp(0.0, 1.0))
        }
    }

    /// Upper boundary of segment `p` of row `i`.
    pub fn upper(&self, i: usize, p: usize, x: f64) -> f64 {
        self.rho(i, p, x)
    }

    /// Lower boundary of segment `p` of row `i`.
    pub fn lower(&self, i: usize, p: usize, x: f64) -> f64 {
        self.rho(i, p + 1, x)
    }

    /// Segment containing `(x, ξ)`; points on a boundary curve go to the lower index.
    pub fn segment_of(&self, i: usize, x: f64, xi: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) || xi < -1e-12 || xi > x + 1e-12 {
            return Err(Error::Domain(format!("(x, xi) = ({x}, {xi}) is outside the triangle")));
        }
        Ok((i..self.m).find(|&p| xi >= self.lower(i, p, x) - 1e-13).unwrap_or(self.m - 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PathKind {
    K { i: usize, p: usize, y: f64 },
    L { i: usize, j: usize, p: usize },
}

/// Which boundary condition supplies the value at the end of a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalBc {
    /// K on ξ = x: −θ_i/(λ + μ_i).
    KDiagonal,
    /// K on the upper curve of a segment: the value of the segment above.
    KUpperEdge,
    /// L on ξ = x: −ψ_{i,j}/(μ_i − μ_j).
    LDiagonal,
    /// L on x = 1: the artificial data l1_{i,j}(ξ).
    LArtificial,
    /// L on the upper curve of a segment: the value of the segment above.
    LUpperEdge,
    /// L on the lower curve of a segment: the value of the segment below.
    LLowerEdge,
    /// L on ξ = 0: the reflection integral of K.
    LXiZero,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharacteristicPath {
    pub kind: PathKind,
    pub start: (f64, f64),
    /// Samples `(s, x̂(s), ξ̂(s))`, starting at `s = 0` and ending at `s_f`.
    pub samples: Vec<[f64; 3]>,
    pub s_f: f64,
    pub terminal: (f64, f64),
    pub terminal_bc: TerminalBc,
    /// The path ends within tolerance of the corner (0, 0).
    pub corner: bool,
}

impl CharacteristicPath {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "s,x,xi")?;
        for [s, x, xi] in &self.samples {
            writeln!(f, "{s:.15e},{x:.15e},{xi:.15e}")?;
        }
        Ok(())
    }
}

fn rk4(state: (f64, f64), h: f64, vel: &impl Fn(f64, f64) -> (f64, f64)) -> (f64, f64) {
    let (x, z) = state;
    let k1 = vel(x, z);
    let k2 = vel(x + 0.5 * h * k1.0, z + 0.5 * h * k1.1);
    let k3 = vel(x + 0.5 * h * k2.0, z + 0.5 * h * k2.1);
    let k4 = vel(x + h * k3.0, z + h * k3.1);
    (
        x + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        z + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

type Event<'a> = (&'a dyn Fn(f64, f64) -> f64, TerminalBc);

/// Integrates until one of the event functions (positive inside) becomes nonpositive.
fn integrate(
    start: (f64, f64),
    step: f64,
    vel: impl Fn(f64, f64) -> (f64, f64),
    events: &[Event<'_>],
) -> Option<(Vec<[f64; 3]>, TerminalBc)> {
    let gmin = |st: (f64, f64)| {
        events
            .iter()
            .map(|(g, bc)| (g(st.0, st.1), *bc))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .unwrap()
    };
    let mut samples = vec![[0.0, start.0, start.1]];
    let first = gmin(start);
    if first.0 <= ON_BOUNDARY {
        return Some((samples, first.1));
    }
    let (mut s, mut st) = (0.0, start);
    for _ in 0..MAX_STEPS {
        let next = rk4(st, step, &vel);
        let g = gmin(next);
        if g.0 > 0.0 {
            s += step;
            st = next;
            samples.push([s, st.0, st.1]);
            continue;
        }
        let (mut lo, mut hi) = (0.0, step);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if gmin(rk4(st, mid, &vel)).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        let end = rk4(st, hi, &vel);
        let bc = gmin(end).1;
        if hi > 1e-15 {
            samples.push([s + hi, end.0, end.1]);
        } else if let Some(last) = samples.last_mut() {
            *last = [s, end.0, end.1];
        }
        return Some((samples, bc));
    }
    None
}

fn finish(kind: PathKind, start: (f64, f64), samples: Vec<[f64; 3]>, bc: TerminalBc) -> CharacteristicPath {
    let [s_f, x, xi] = *samples.last().unwrap();
    CharacteristicPath {
        kind,
        start,
        samples,
        s_f,
        terminal: (x, xi),
        terminal_bc: bc,
        corner: x.abs() < 1e-9 && xi.abs() < 1e-9,
    }
}

/// Default path step for an x-grid with `nx` points.
pub fn default_step(p: &ContinuumParams, nx: usize) -> f64 {
    let mut vmax: f64 = 0.0;
    for k in 0..=64 {
        let x = k as f64 / 64.0;
        for q in 0..=16 {
            vmax = vmax.max((p.lambda)(x, q as f64 / 16.0).abs());
        }
        for mu in &p.mu {
            vmax = vmax.max(mu(x).abs());
        }
    }
    1.0 / ((nx - 1) as f64 * vmax)
}

/// Velocity field of the K characteristics at fixed y.
pub(crate) fn k_velocity<'a>(mu_i: &'a Fn1, lambda: &'a Fn2, y: f64) -> impl Fn(f64, f64) -> (f64, f64) + 'a {
    move |x, xi| (-mu_i(x.clamp(0.0, 1.0)), lambda(xi.clamp(0.0, 1.0), y))
}

/// Direction sign of the L characteristics: +1 when j < i, −1 otherwise.
pub fn l_direction(i: usize, j: usize) -> f64 {
    if i > j {
        1.0
    } else {
        -1.0
    }
}

/// Terminal boundary of an L path on segment `p`, per row/column ordering.
pub fn l_terminal_kind(m: usize, i: usize, j: usize, p: usize) -> Vec<TerminalBc> {
    let upper = if p == i { TerminalBc::LDiagonal } else { TerminalBc::LUpperEdge };
    if i > j {
        vec![upper, TerminalBc::LArtificial]
    } else if j <= p {
        vec![if p == m - 1 { TerminalBc::LXiZero } else { TerminalBc::LLowerEdge }]
    } else {
        vec![upper]
    }
}

fn check_start(map: &SegmentMap, i: usize, p: usize, x: f64, xi: f64) -> Result<()> {
    let tol = 1e-9;
    if p < i || p >= map.m || xi > map.upper(i, p, x) + tol || xi < map.lower(i, p, x) - tol {
        return Err(Error::Domain(format!("({x}, {xi}) is not in segment {p} of row {i}")));
    }
    Ok(())
}

pub fn trace_k_characteristic(
    params: &ContinuumParams,
    map: &SegmentMap,
    i: usize,
    p: usize,
    x: f64,
    xi: f64,
    y: f64,
    step: f64,
) -> Result<CharacteristicPath> {
    check_start(map, i, p, x, xi)?;
    let vel = k_velocity(&params.mu[i], &params.lambda, y);
    let up = |x: f64, z: f64| map.upper(i, p, x) - z;
    let bc = if p == i { TerminalBc::KDiagonal } else { TerminalBc::KUpperEdge };
    let (samples, bc) = integrate((x, xi), step, vel, &[(&up, bc)])
        .ok_or_else(|| Error::Geometry(format!("K path from ({x}, {xi}) in segment ({i}, {p}) did not terminate")))?;
    Ok(finish(PathKind::K { i, p, y }, (x, xi), samples, bc))
}

pub fn trace_l_characteristic(
    params: &ContinuumParams,
    map: &SegmentMap,
    i: usize,
    j: usize,
    p: usize,
    x: f64,
    xi: f64,
    step: f64,
) -> Result<CharacteristicPath> {
    check_start(map, i, p, x, xi)?;
    let eps = l_direction(i, j);
    let (mi, mj) = (&params.mu[i], &params.mu[j]);
    let vel = move |x: f64, z: f64| (eps * mi(x.clamp(0.0, 1.0)), eps * mj(z.clamp(0.0, 1.0)));
    let up = |x: f64, z: f64| map.upper(i, p, x) - z;
    let lo = |x: f64, z: f64| z - map.lower(i, p, x);
    let right = |x: f64, _z: f64| 1.0 - x;
    let events: Vec<Event<'_>> = l_terminal_kind(map.m, i, j, p)
        .into_iter()
        .map(|bc| -> Event<'_> {
            match bc {
                TerminalBc::LArtificial => (&right, bc),
                TerminalBc::LXiZero | TerminalBc::LLowerEdge => (&lo, bc),
                _ => (&up, bc),
            }
        })
        .collect();
    let (samples, bc) = integrate((x, xi), step, vel, &events).ok_or_else(|| {
        Error::Geometry(format!("L path ({i}, {j}, {p}) from ({x}, {xi}) has no classifiable terminal"))
    })?;
    let path = finish(PathKind::L { i, j, p }, (x, xi), samples, bc);
    let (xf, zf) = path.terminal;
    if zf > xf + 1e-6 || zf < -1e-6 || !(-1e-6..=1.0 + 1e-6).contains(&xf) {
        return Err(Error::Geometry(format!(
            "L path ({i}, {j}, {p}) from ({x}, {xi}) left the triangle at ({xf}, {zf})"
        )));
    }
    Ok(path)
}
