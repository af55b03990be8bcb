use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ContinuumKernelSet, KernelGrid};
use crate::error::Result;
use crate::example;
use crate::geometry::{build_segment_map, DEFAULT_RESOLUTION};

/// Analytic kernels of the benchmark plant tabulated on `grid`.
pub fn example_closed_form(grid: &KernelGrid) -> ContinuumKernelSet {
    let p = example::continuum();
    let map = build_segment_map(&p, DEFAULT_RESOLUTION).expect("benchmark speeds are ordered");
    let mut ks = ContinuumKernelSet::zeros(map, grid.clone());
    let ny = grid.ny();
    for i in 0..2 {
        for pp in i..2 {
            for a in 0..grid.nx {
                for b in 0..grid.nxi {
                    let (x, xi) = (grid.x(a), ks.xi_node(i, pp, a, b));
                    let nd = a * grid.nxi + b;
                    for (c, &y) in grid.y.nodes.iter().enumerate() {
                        ks.k[i][pp - i][nd * ny + c] = example::k_exact(i, pp, x, xi, y);
                    }
                    for j in 0..2 {
                        ks.l[i][pp - i][j][nd] = example::l_exact(i, j, pp, x, xi);
                    }
                }
            }
        }
    }
    ks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub m: usize,
    pub nx: usize,
    pub nxi: usize,
    pub ny: usize,
    pub y_rule: crate::quadrature::YRule,
    pub index_base: usize,
    pub iterations: usize,
    pub final_delta: f64,
    pub corner_paths: usize,
    /// Sampled segment boundaries: `boundaries[i][q]` holds ρ_i^{i+q} at the x-nodes.
    pub boundaries: Vec<Vec<Vec<f64>>>,
    pub files: Vec<String>,
    pub sha256: String,
}

/// Writes one CSV per segment table plus `manifest.json`; returns the manifest.
pub fn write_kernel_tables(ks: &ContinuumKernelSet, dir: &Path) -> Result<KernelManifest> {
    std::fs::create_dir_all(dir)?;
    let g = &ks.grid;
    let ny = g.ny();
    let mut files = Vec::new();
    let mut hasher = Sha256::new();
    for i in 0..ks.m {
        for p in i..ks.m {
            let name = format!("k_i{i}_p{p}.csv");
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
            writeln!(f, "x,xi,y,value")?;
            let tab = &ks.k[i][p - i];
            for a in 0..g.nx {
                for b in 0..g.nxi {
                    let (x, xi) = (g.x(a), ks.xi_node(i, p, a, b));
                    for (c, y) in g.y.nodes.iter().enumerate() {
                        let v = tab[(a * g.nxi + b) * ny + c];
                        hasher.update(v.to_le_bytes());
                        writeln!(f, "{x:.10e},{xi:.10e},{y:.10e},{v:.15e}")?;
                    }
                }
            }
            files.push(name);
            for j in 0..ks.m {
                let name = format!("l_i{i}_j{j}_p{p}.csv");
                let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
                writeln!(f, "x,xi,value")?;
                let tab = &ks.l[i][p - i][j];
                for a in 0..g.nx {
                    for b in 0..g.nxi {
                        let v = tab[a * g.nxi + b];
                        hasher.update(v.to_le_bytes());
                        writeln!(f, "{:.10e},{:.10e},{v:.15e}", g.x(a), ks.xi_node(i, p, a, b))?;
                    }
                }
                files.push(name);
            }
        }
    }
    let boundaries = (0..ks.m)
        .map(|i| (i..=ks.m).map(|q| (0..g.nx).map(|a| ks.map.rho(i, q, g.x(a))).collect()).collect())
        .collect();
    let manifest = KernelManifest {
        m: ks.m,
        nx: g.nx,
        nxi: g.nxi,
        ny,
        y_rule: g.y.rule.clone(),
        index_base: 0,
        iterations: ks.iterations,
        final_delta: ks.final_delta,
        corner_paths: ks.corner_paths,
        boundaries,
        files,
        sha256: hex::encode(hasher.finalize()),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<KernelManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
}

/// Hash of all kernel values, independent of file formatting.
pub fn table_hash(ks: &ContinuumKernelSet) -> String {
    let mut h = Sha256::new();
    for row in &ks.k {
        for tab in row {
            tab.iter().for_each(|v| h.update(v.to_le_bytes()));
        }
    }
    for row in &ks.l {
        for seg in row {
            for tab in seg {
                tab.iter().for_each(|v| h.update(v.to_le_bytes()));
            }
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableError {
    /// `"K"` or `"L"`.
    pub kernel: String,
    pub i: usize,
    pub j: Option<usize>,
    pub p: usize,
    pub sup: f64,
}

/// Node-wise sup difference of every segment table of two kernel sets on the same grid.
pub fn table_errors(a: &ContinuumKernelSet, b: &ContinuumKernelSet) -> Result<Vec<TableError>> {
    if a.grid != b.grid || a.m != b.m {
        return Err(crate::Error::Config("kernel sets live on different grids".into()));
    }
    let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let mut out = Vec::new();
    for i in 0..a.m {
        for p in i..a.m {
            let q = p - i;
            out.push(TableError { kernel: "K".into(), i, j: None, p, sup: sup(&a.k[i][q], &b.k[i][q]) });
            for j in 0..a.m {
                out.push(TableError { kernel: "L".into(), i, j: Some(j), p, sup: sup(&a.l[i][q][j], &b.l[i][q][j]) });
            }
        }
    }
    Ok(out)
}
