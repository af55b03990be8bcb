use std::path::{Path, PathBuf};

use hyperstab::controller::GainMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },

    #[error("invalid `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid { field: String, message: String, line: Option<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    SolveKernels,
    SolveNmKernels,
    SampleGains,
    Simulate,
    ReproduceExample,
    ConvergenceStudy,
    LyapunovCheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    /// The two-state benchmark with closed-form kernels.
    Example,
    /// Constant coefficients given in the file.
    Parametric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Open,
    Sampled,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub kind: PlantKind,
    /// Number of rightward states of the n+m plant.
    #[serde(default = "default_n")]
    pub n: usize,
    pub lambda: Option<f64>,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub w: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub psi: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<f64>>,
    /// Constant initial value of every u^i.
    pub u0: Option<f64>,
    /// Constant initial values of v.
    pub v0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub t_end: f64,
    pub nx: usize,
    pub cfl: f64,
    pub save_dt: f64,
    pub blow_up: f64,
    pub controller: ControllerKind,
    pub gain_mode: GainMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 5.0,
            nx: 256,
            cfl: 0.5,
            save_dt: 0.05,
            blow_up: 1e6,
            controller: ControllerKind::Sampled,
            gain_mode: GainMode::Pointwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub t_end: f64,
    pub nx: usize,
    pub cfl: f64,
    pub save_dt: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { t_end: 1.0, nx: 256, cfl: 0.5, save_dt: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    /// V is checked from this time on.
    pub t_from: f64,
    pub save_dt: f64,
    /// Number of random smooth states for the transform round trip.
    pub samples: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { t_from: 1.0, save_dt: 0.25, samples: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub plant: Option<PlantConfig>,
    /// Separate file holding the `[plant]` table.
    #[serde(default)]
    pub plant_file: Option<PathBuf>,
    /// `[nx, nxi, ny]` of the continuum kernel tables.
    #[serde(default = "default_kernel_grid")]
    pub kernel_grid: [usize; 3],
    /// `[nx, nxi]` of the n+m kernel tables.
    #[serde(default = "default_nm_grid")]
    pub nm_grid: [usize; 2],
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
}

fn default_n() -> usize {
    10
}
fn default_kernel_grid() -> [usize; 3] {
    [65, 65, 33]
}
fn default_nm_grid() -> [usize; 2] {
    [65, 65]
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}
fn default_n_list() -> Vec<usize> {
    vec![2, 6, 10]
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Toml,
    Json,
}

fn format_of(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Toml,
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
}

fn decode<T: serde::de::DeserializeOwned>(path: &Path, src: &str) -> Result<T, ConfigError> {
    let syntax = |message: String| ConfigError::Syntax { path: path.to_owned(), message };
    match format_of(path) {
        Format::Toml => toml::from_str(src).map_err(|e| syntax(e.to_string())),
        Format::Json => serde_json::from_str(src).map_err(|e| syntax(e.to_string())),
    }
}

/// First line (1-based) on which `key` is assigned.
fn line_of(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let t = l.trim_start().trim_start_matches('"');
        t.strip_prefix(key).is_some_and(|rest| rest.trim_start_matches('"').trim_start().starts_with(['=', ':']))
    })
    .map(|i| i + 1)
}

/// Reads a TOML (or `.json`) run configuration, fills every default and checks it.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let src = read(path)?;
    let mut cfg: RunConfig = decode(path, &src)?;
    let invalid = |field: &str, message: String| ConfigError::Invalid {
        field: field.into(),
        line: line_of(&src, field.rsplit('.').next().unwrap_or(field)),
        message,
    };

    match (&cfg.plant, &cfg.plant_file) {
        (Some(_), Some(_)) => return Err(invalid("plant_file", "give either `plant` or `plant_file`, not both".into())),
        (None, None) => return Err(invalid("plant", "a plant is required".into())),
        (None, Some(file)) => {
            let file = path.parent().unwrap_or(Path::new(".")).join(file);
            let src = read(&file)?;
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Wrapper {
                plant: PlantConfig,
            }
            let w: Wrapper = decode(&file, &src)?;
            cfg.plant = Some(w.plant);
        }
        (Some(_), None) => {}
    }
    cfg.resolve().map_err(|(field, message)| invalid(&field, message))?;
    Ok(cfg)
}

impl RunConfig {
    pub fn plant(&self) -> &PlantConfig {
        self.plant.as_ref().expect("resolved configs carry a plant")
    }

    /// Hash of the resolved configuration, ignoring where outputs go and how many threads run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = None;
        let text = serde_json::to_string(&c).expect("configs serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn resolve(&mut self) -> Result<(), (String, String)> {
        let err = |f: &str, m: String| Err((f.to_string(), m));
        if !(self.tol > 0.0) {
            return err("tol", format!("must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return err("max_iter", "must be at least 1".into());
        }
        if self.kernel_grid.iter().chain(&self.nm_grid).any(|&g| g < 8) {
            return err("kernel_grid", format!("grid sizes must be at least 8, got {:?} and {:?}", self.kernel_grid, self.nm_grid));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return err("n_list", format!("needs positive entries, got {:?}", self.n_list));
        }
        for (name, t, nx, cfl) in [
            ("sim", self.sim.t_end, self.sim.nx, self.sim.cfl),
            ("study", self.study.t_end, self.study.nx, self.study.cfl),
        ] {
            if !(t >= 0.0) || !t.is_finite() {
                return err(&format!("{name}.t_end"), format!("must be nonnegative, got {t}"));
            }
            if nx < 8 {
                return err(&format!("{name}.nx"), format!("must be at least 8, got {nx}"));
            }
            if !(cfl > 0.0) {
                return err(&format!("{name}.cfl"), format!("must be positive, got {cfl}"));
            }
        }
        if !(self.sim.save_dt > 0.0) || !(self.study.save_dt > 0.0) || !(self.lyapunov.save_dt > 0.0) {
            return err("save_dt", "must be positive".into());
        }
        if !(self.sim.blow_up > 1.0) {
            return err("sim.blow_up", format!("must exceed 1, got {}", self.sim.blow_up));
        }
        if self.threads == Some(0) {
            return err("threads", "must be at least 1".into());
        }
        let plant = self.plant.as_mut().expect("checked by the caller");
        plant.resolve()
    }
}

impl PlantConfig {
    pub fn m(&self) -> usize {
        self.mu.as_ref().map_or(2, Vec::len)
    }

    fn resolve(&mut self) -> Result<(), (String, String)> {
        let err = |f: &str, m: String| Err((format!("plant.{f}"), m));
        if self.n == 0 {
            return err("n", "must be at least 1".into());
        }
        match self.kind {
            PlantKind::Example => {
                let given = [
                    ("lambda", self.lambda.is_some()),
                    ("mu", self.mu.is_some()),
                    ("sigma", self.sigma.is_some()),
                    ("w", self.w.is_some()),
                    ("theta", self.theta.is_some()),
                    ("psi", self.psi.is_some()),
                    ("q", self.q.is_some()),
                ];
                if let Some((f, _)) = given.iter().find(|g| g.1) {
                    return err(f, "coefficients are fixed for the example plant".into());
                }
                self.u0.get_or_insert(12.0);
                self.v0.get_or_insert_with(|| vec![1.0; 2]);
            }
            PlantKind::Parametric => {
                let Some(mu) = self.mu.clone() else {
                    return err("mu", "required for a parametric plant".into());
                };
                let m = mu.len();
                if m == 0 {
                    return err("mu", "needs at least one entry".into());
                }
                let lambda = *self.lambda.get_or_insert(1.0);
                if !(lambda > 0.0) {
                    return err("lambda", format!("must be positive, got {lambda}"));
                }
                self.sigma.get_or_insert(0.0);
                for (f, v) in [("w", &mut self.w), ("theta", &mut self.theta), ("q", &mut self.q)] {
                    let v = v.get_or_insert_with(|| vec![0.0; m]);
                    if v.len() != m {
                        return err(f, format!("needs {m} entries, got {}", v.len()));
                    }
                }
                let psi = self.psi.get_or_insert_with(|| vec![vec![0.0; m]; m]);
                if psi.len() != m || psi.iter().any(|r| r.len() != m) {
                    return err("psi", format!("must be {m} by {m}"));
                }
                self.u0.get_or_insert(1.0);
                self.v0.get_or_insert_with(|| vec![1.0; m]);
            }
        }
        let m = self.m();
        if self.v0.as_ref().map_or(0, Vec::len) != m {
            return err("v0", format!("needs {m} entries"));
        }
        Ok(())
    }
}
