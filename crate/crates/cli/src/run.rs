use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hyperstab::controller::{control_gap, sample_gains, FeedbackOperator, GainMode, SampledGains};
use hyperstab::kernel::{
    compute_bounds, example_closed_form, kernel_residual, solve_continuum_kernels, table_errors, table_hash,
    write_kernel_tables, ContinuumKernelSet, KernelGrid,
};
use hyperstab::kernel_nm::{isometry_gap, nm_boundary_residuals, solve_nm_kernels, NmKernelSet};
use hyperstab::params::{const1, const2, const3, make_step_params, sample_discrete, validate, ContinuumParams, DiscreteParams, Fn1, Fn2};
use hyperstab::simulator::{
    choose_lyapunov_params, convergence_study, e_norm, fit_lyapunov, lyapunov_value, random_smooth_state, simulate,
    write_trajectory, PlantState, SimOptions, StudyOptions, TransformOperator, Trajectory, ZeroController,
};
use hyperstab::{example, Error};
use rand::SeedableRng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error as ThisError;

use crate::config::{Command, ConfigError, ControllerKind, PlantKind, RunConfig};

#[derive(Debug, ThisError)]
pub enum RunError {
    #[error("plant violates the standing assumptions: {0}")]
    ValidationFailed(String),

    #[error("output directory {path} is not writable: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0} needs the example plant")]
    NeedsExample(&'static str),
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config_hash: String,
    pub config: RunConfig,
    pub summary: Value,
    /// Every artifact of the run, relative to the run directory.
    pub files: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Exit status for a failed run: 2 configuration, 3 non-convergence, 4 blow-up guard.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return match e {
                RunError::ValidationFailed(_) | RunError::Output { .. } | RunError::NeedsExample(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonConvergence { .. } => 3,
                Error::BlowUp { .. } => 4,
                Error::Io(_) | Error::Json(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

/// Short machine-readable name of the failure class.
pub fn error_kind(code: i32) -> &'static str {
    match code {
        2 => "config",
        3 => "non-convergence",
        4 => "blow-up",
        _ => "internal",
    }
}

struct Plant {
    cont: ContinuumParams,
    family: Arc<dyn Fn(usize) -> DiscreteParams + Send + Sync>,
    u0: f64,
    v0: Vec<f64>,
    example: bool,
}

impl Plant {
    fn from_config(cfg: &RunConfig) -> Self {
        let pc = cfg.plant();
        let (u0, v0) = (pc.u0.unwrap_or(1.0), pc.v0.clone().unwrap_or_default());
        match pc.kind {
            PlantKind::Example => {
                Plant { cont: example::continuum(), family: Arc::new(example::discrete), u0, v0, example: true }
            }
            PlantKind::Parametric => {
                let mu: Vec<Fn1> = pc.mu.as_ref().unwrap().iter().map(|&c| const1(c)).collect();
                let mut p = ContinuumParams::uncoupled(const2(pc.lambda.unwrap()), mu);
                p.sigma = const3(pc.sigma.unwrap());
                p.w = pc.w.as_ref().unwrap().iter().map(|&c| const2(c)).collect();
                p.theta = pc.theta.as_ref().unwrap().iter().map(|&c| const2(c)).collect();
                p.q = pc.q.as_ref().unwrap().iter().map(|&c| const1(c)).collect();
                p.psi = pc.psi.as_ref().unwrap().iter().map(|r| r.iter().map(|&c| const1(c)).collect()).collect();
                let cont = p.clone();
                Plant { cont, family: Arc::new(move |n| sample_discrete(&p, n)), u0, v0, example: false }
            }
        }
    }

    fn initial(&self, n: usize, nx: usize) -> PlantState {
        let mut s = PlantState::zeros(n, self.v0.len(), nx);
        s.u.iter_mut().flatten().for_each(|v| *v = self.u0);
        for (row, &c) in s.v.iter_mut().zip(&self.v0) {
            row.iter_mut().for_each(|v| *v = c);
        }
        s
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    plant: Plant,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn csv(&self, rel: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| format!("writing {rel}"))?);
        writeln!(f, "{header}")?;
        for r in rows {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }

    fn json(&self, rel: &str, v: &impl Serialize) -> Result<()> {
        std::fs::write(self.path(rel), serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {rel}"))?;
        Ok(())
    }

    fn kernels(&self) -> Result<ContinuumKernelSet> {
        let [nx, nxi, ny] = self.cfg.kernel_grid;
        Ok(solve_continuum_kernels(&self.plant.cont, KernelGrid::new(nx, nxi, ny), self.cfg.tol, self.cfg.max_iter)?)
    }

    fn nm_kernels(&self, d: &DiscreteParams) -> Result<NmKernelSet> {
        let [nx, nxi] = self.cfg.nm_grid;
        Ok(solve_nm_kernels(d, nx, nxi, self.cfg.tol, self.cfg.max_iter)?)
    }

    fn sim_options(&self, save_dt: f64) -> SimOptions {
        let s = &self.cfg.sim;
        SimOptions { t_end: s.t_end, nx: s.nx, cfl: s.cfl, dt: None, save_dt: Some(save_dt), blow_up: s.blow_up }
    }
}

fn run_dir(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &cfg.hash()[..12]);
    std::fs::create_dir_all(out).map_err(|source| RunError::Output { path: out.to_owned(), source })?;
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = out.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(source) => return Err(RunError::Output { path: dir, source }.into()),
        }
    }
    unreachable!()
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            let rel = rel.to_string_lossy().replace('\\', "/");
            if rel != "manifest.json" {
                out.push(rel);
            }
        }
    }
    Ok(())
}

/// Executes the configured pipeline in a fresh run directory under `out` (or the configured one).
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let dir = run_dir(cfg, out.unwrap_or(&cfg.out))?;
    let ctx = Ctx { cfg, dir: dir.clone(), plant: Plant::from_config(cfg) };
    let result = match cfg.command {
        Command::Validate => cmd_validate(&ctx),
        Command::SolveKernels => cmd_solve_kernels(&ctx).map(|s| (s, None)),
        Command::SolveNmKernels => cmd_solve_nm(&ctx).map(|s| (s, None)),
        Command::SampleGains => cmd_sample_gains(&ctx).map(|s| (s, None)),
        Command::Simulate => cmd_simulate(&ctx).map(|s| (s, None)),
        Command::ReproduceExample => cmd_reproduce(&ctx).map(|s| (s, None)),
        Command::ConvergenceStudy => cmd_convergence(&ctx).map(|s| (s, None)),
        Command::LyapunovCheck => cmd_lyapunov(&ctx).map(|s| (s, None)),
    };
    let (summary, failure) = match result {
        Ok((s, None)) => (s, None),
        Ok((s, Some(f))) => (s, Some(anyhow::Error::from(f))),
        Err(e) => {
            let code = exit_code(&e);
            (json!({ "error": e.to_string(), "kind": error_kind(code), "exit_code": code }), Some(e))
        }
    };
    let mut files = Vec::new();
    list_files(&dir, &dir, &mut files)?;
    files.sort();
    let manifest = Manifest {
        tool: "hyperstab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.command,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        summary,
        files,
    };
    ctx.json("manifest.json", &manifest)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunOutcome { dir, manifest })
}

fn cmd_validate(ctx: &Ctx) -> Result<(Value, Option<RunError>)> {
    let n = ctx.cfg.plant().n;
    let cont = validate(&ctx.plant.cont)?;
    let disc = validate(&(ctx.plant.family)(n))?;
    let report = json!({ "continuum": cont, "discrete": disc, "n": n });
    ctx.json("validation.json", &report)?;
    let failure = (!cont.pass || !disc.pass).then(|| {
        let names: Vec<String> = cont.violations.iter().chain(&disc.violations).map(|v| v.assumption.clone()).collect();
        RunError::ValidationFailed(names.join(", "))
    });
    Ok((json!({ "pass": failure.is_none(), "continuum_violations": cont.violations.len(), "discrete_violations": disc.violations.len() }), failure))
}

fn cmd_solve_kernels(ctx: &Ctx) -> Result<Value> {
    let ks = ctx.kernels()?;
    let km = write_kernel_tables(&ks, &ctx.path("kernels"))?;
    let res = kernel_residual(&ks, &ctx.plant.cont, 1);
    ctx.json("residuals.json", &res)?;
    let mut summary = json!({
        "iterations": ks.iterations,
        "final_delta": ks.final_delta,
        "boundary_residual": res.boundary_max(),
        "kernel_sha256": km.sha256,
    });
    if ctx.plant.example {
        summary["closed_form_sup_error"] = json!(write_closed_form_errors(ctx, &ks)?);
    }
    Ok(summary)
}

fn write_closed_form_errors(ctx: &Ctx, ks: &ContinuumKernelSet) -> Result<f64> {
    let errs = table_errors(ks, &example_closed_form(&ks.grid))?;
    ctx.csv(
        "kernel_error.csv",
        "kernel,i,j,p,sup_error",
        errs.iter().map(|e| format!("{},{},{},{},{:.6e}", e.kernel, e.i, e.j.map_or(String::new(), |j| j.to_string()), e.p, e.sup)),
    )?;
    Ok(errs.iter().map(|e| e.sup).fold(0.0, f64::max))
}

fn cmd_solve_nm(ctx: &Ctx) -> Result<Value> {
    let n = ctx.cfg.plant().n;
    let d = (ctx.plant.family)(n);
    let nm = ctx.nm_kernels(&d)?;
    let km = write_kernel_tables(&nm.lifted, &ctx.path("lifted"))?;
    let g = nm.grid();
    let mut rows = Vec::new();
    for i in 0..nm.m {
        for p in i..nm.m {
            for (l, tab) in nm.k[i][p - i].iter().enumerate() {
                for a in 0..g.nx {
                    for b in 0..g.nxi {
                        let (x, xi) = (g.x(a), nm.lifted.xi_node(i, p, a, b));
                        rows.push(format!("{i},{p},{l},{x:.10e},{xi:.10e},{:.15e}", tab[a * g.nxi + b]));
                    }
                }
            }
        }
    }
    ctx.csv("nm_k.csv", "i,p,l,x,xi,value", rows)?;
    let res = nm_boundary_residuals(&nm, &d);
    let iso = isometry_gap(&nm);
    ctx.json("nm_residuals.json", &json!({ "residuals": res, "isometry_gap": iso }))?;
    Ok(json!({ "n": n, "iterations": nm.lifted.iterations, "residual": res.max(), "isometry_gap": iso, "kernel_sha256": km.sha256 }))
}

fn gains(ctx: &Ctx, n: usize, mode: GainMode) -> Result<(SampledGains, String)> {
    if mode == GainMode::Exact {
        let nm = ctx.nm_kernels(&(ctx.plant.family)(n))?;
        Ok((SampledGains::exact(&nm), table_hash(&nm.lifted)))
    } else {
        let ks = ctx.kernels()?;
        Ok((sample_gains(&ks, n, mode)?, table_hash(&ks)))
    }
}

fn cmd_sample_gains(ctx: &Ctx) -> Result<Value> {
    let n = ctx.cfg.plant().n;
    let (g, hash) = gains(ctx, n, ctx.cfg.sim.gain_mode)?;
    g.write_csv(&ctx.path("gains.csv"))?;
    Ok(json!({ "n": n, "mode": g.mode, "warnings": g.warnings, "kernel_sha256": hash }))
}

fn summarize(traj: &Trajectory) -> Value {
    json!({
        "dt": traj.dt,
        "steps": traj.steps,
        "snapshots": traj.snapshots.len(),
        "e_norm_initial": traj.norms[0],
        "e_norm_final": traj.norms[traj.norms.len() - 1],
    })
}

fn cmd_simulate(ctx: &Ctx) -> Result<Value> {
    let n = ctx.cfg.plant().n;
    let d = (ctx.plant.family)(n);
    let init = ctx.plant.initial(n, ctx.cfg.sim.nx);
    let opts = ctx.sim_options(ctx.cfg.sim.save_dt);
    let (traj, hash) = match ctx.cfg.sim.controller {
        ControllerKind::Open => (simulate(&d, &ZeroController { m: d.m }, &init, &opts)?, None),
        kind => {
            let mode = if kind == ControllerKind::Exact { GainMode::Exact } else { ctx.cfg.sim.gain_mode };
            let (g, hash) = gains(ctx, n, mode)?;
            let op = FeedbackOperator::from_gains(&g, ctx.cfg.sim.nx);
            (simulate(&d, &op, &init, &opts)?, Some(hash))
        }
    };
    write_trajectory(&traj, &ctx.path("trajectory"), hash)?;
    let mut s = summarize(&traj);
    s["n"] = json!(n);
    s["controller"] = json!(traj.controller);
    Ok(s)
}

fn cmd_reproduce(ctx: &Ctx) -> Result<Value> {
    if !ctx.plant.example {
        bail!(RunError::NeedsExample("reproduce-example"));
    }
    let ks = ctx.kernels()?;
    let sup = write_closed_form_errors(ctx, &ks)?;
    let hash = table_hash(&ks);
    let nx = ctx.cfg.sim.nx;
    let opts = ctx.sim_options(ctx.cfg.sim.save_dt);
    let mut per_n = Vec::new();
    for &n in &ctx.cfg.n_list {
        let d = example::discrete(n);
        let init = ctx.plant.initial(n, nx);
        let g = sample_gains(&ks, n, GainMode::Pointwise)?;
        let op = FeedbackOperator::from_gains(&g, nx);
        let closed = simulate(&d, &op, &init, &opts)?;
        write_trajectory(&closed, &ctx.path(&format!("n{n}/closed")), Some(hash.clone()))?;
        let open = match simulate(&d, &ZeroController { m: d.m }, &init, &opts) {
            Ok(t) => Some(t),
            Err(Error::BlowUp { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        if let Some(t) = &open {
            write_trajectory(t, &ctx.path(&format!("n{n}/open")), None)?;
        }
        let nm = ctx.nm_kernels(&d)?;
        let exact = FeedbackOperator::from_gains(&SampledGains::exact(&nm), nx);
        let mut gap = 0.0f64;
        let rows: Vec<String> = closed
            .snapshots
            .iter()
            .zip(&closed.controls)
            .map(|(s, us)| {
                let ue = exact.apply(&s.u, &s.v);
                let mut r = format!("{:.8e}", s.t);
                for (a, b) in us.iter().zip(&ue) {
                    gap = gap.max((a - b).abs());
                    r += &format!(",{a:.10e},{b:.10e}");
                }
                r
            })
            .collect();
        let header = std::iter::once("t".to_string())
            .chain((0..d.m).flat_map(|j| [format!("U{j}_sampled"), format!("U{j}_exact")]))
            .collect::<Vec<_>>()
            .join(",");
        ctx.csv(&format!("n{n}/controls_compare.csv"), &header, rows)?;
        let norm_rows = closed.snapshots.iter().enumerate().map(|(k, s)| {
            let o = open.as_ref().and_then(|t| t.norms.get(k)).map_or(String::new(), |v| format!("{v:.10e}"));
            format!("{:.8e},{:.10e},{o}", s.t, closed.norms[k])
        });
        ctx.csv(&format!("n{n}/norms_compare.csv"), "t,closed,open", norm_rows.collect::<Vec<_>>())?;
        per_n.push(json!({
            "n": n,
            "closed": summarize(&closed),
            "open": open.as_ref().map(summarize),
            "open_blew_up": open.is_none(),
            "control_gap": gap,
            "gain_gap": control_gap(&g, &nm)?,
        }));
    }
    Ok(json!({ "closed_form_sup_error": sup, "kernel_sha256": hash, "runs": per_n }))
}

fn cmd_convergence(ctx: &Ctx) -> Result<Value> {
    let u0 = ctx.plant.u0;
    let u0: Fn2 = Arc::new(move |_, _| u0);
    let v0: Vec<Fn1> = ctx.plant.v0.iter().map(|&c| const1(c)).collect();
    let s = &ctx.cfg.study;
    let opts = StudyOptions { t_end: s.t_end, nx: s.nx, cfl: s.cfl, save_dt: s.save_dt };
    let family = ctx.plant.family.clone();
    let rep = convergence_study(&move |n| family(n), &ctx.plant.cont, &u0, &v0, &ctx.cfg.n_list, &opts)?;
    ctx.csv("convergence.csv", "n,error", rep.n_list.iter().zip(&rep.errors).map(|(n, e)| format!("{n},{e:.10e}")))?;
    Ok(serde_json::to_value(&rep)?)
}

fn cmd_lyapunov(ctx: &Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let n = cfg.plant().n;
    let d = (ctx.plant.family)(n);
    let nx = cfg.sim.nx;
    let nm = ctx.nm_kernels(&d)?;
    let step = make_step_params(&d)?;
    let bounds = compute_bounds(&step, Some(&nm.lifted));
    let lp = choose_lyapunov_params(&bounds, d.m);
    let op = FeedbackOperator::from_gains(&SampledGains::exact(&nm), nx);
    let traj = simulate(&d, &op, &ctx.plant.initial(n, nx), &ctx.sim_options(cfg.lyapunov.save_dt))?;
    let top = TransformOperator::new(&nm.lifted, n, nx);
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (s, e) in traj.snapshots.iter().zip(&traj.norms) {
        let tg = top.apply(s);
        let v = lyapunov_value(&tg, &lp, &step);
        let bmax = tg.beta.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        rows.push(format!("{:.8e},{v:.10e},{e:.10e},{bmax:.6e}", s.t));
        values.push(v);
    }
    ctx.csv("lyapunov.csv", "t,V,e_norm,beta_max", rows)?;
    let fit = fit_lyapunov(&traj.times(), &values, cfg.lyapunov.t_from);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut errs = Vec::new();
    for _ in 0..cfg.lyapunov.samples {
        let s = random_smooth_state(n, d.m, nx, &mut rng);
        let back = top.invert(&top.apply(&s));
        let diff = PlantState {
            t: 0.0,
            u: back.u.iter().zip(&s.u).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
            v: back.v.iter().zip(&s.v).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
        };
        errs.push(e_norm(&diff) / e_norm(&s));
    }
    ctx.csv("roundtrip.csv", "sample,relative_error", errs.iter().enumerate().map(|(k, e)| format!("{k},{e:.6e}")))?;
    ctx.json("lyapunov_params.json", &json!({ "params": lp, "bounds": bounds }))?;
    Ok(json!({
        "n": n,
        "params": lp,
        "fit": fit,
        "certified": fit.non_increasing && fit.rate < 0.0,
        "roundtrip_max": errs.iter().copied().fold(0.0, f64::max),
    }))
}
