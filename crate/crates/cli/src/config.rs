//! Run configuration: one TOML file drives every subcommand; CLI flags and
//! `RBMLAB_*` environment variables override individual keys.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Domain-spec file, relative to the config file's directory.
    pub domain: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub commands: Vec<String>,
    pub grid: GridConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub exhaust: ExhaustConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub part: PartConfig,
    #[serde(default)]
    pub kato: KatoConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub sobolev: SobolevConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    /// Dump the assembled operator in coordinate format.
    #[serde(default)]
    pub dump_matrix: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Also dump per-cell eigenvector columns.
    #[serde(default)]
    pub dump_vectors: bool,
}

fn default_count() -> usize {
    100
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { count: default_count(), dump_vectors: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_window_r")]
    pub r: f64,
    #[serde(default = "default_window_eps")]
    pub eps: f64,
}

fn default_window_r() -> f64 {
    1.0
}
fn default_window_eps() -> f64 {
    0.2
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { r: default_window_r(), eps: default_window_eps() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExhaustConfig {
    /// "ball-radii" or "horn-cuts".
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Random (t, x, y) samples for the ladder CSV.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub sample_seed: u64,
    #[serde(default = "default_t_range")]
    pub t_range: [f64; 2],
}

fn default_tol() -> f64 {
    1e-3
}
fn default_samples() -> usize {
    50
}
fn default_t_range() -> [f64; 2] {
    [0.05, 0.5]
}

impl Default for ExhaustConfig {
    fn default() -> Self {
        Self {
            scheme: None,
            values: Vec::new(),
            tol: default_tol(),
            samples: default_samples(),
            sample_seed: 0,
            t_range: default_t_range(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Evaluation times.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Explicit coordinate pairs `[x1, y1, x2, y2]`.
    #[serde(default)]
    pub pairs: Vec<[f64; 4]>,
    /// Additional uniformly sampled cell pairs.
    #[serde(default)]
    pub random_pairs: usize,
    #[serde(default)]
    pub sample_seed: u64,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PartConfig {
    /// "ball" or "xcut".
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub center: [f64; 2],
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub x_cut: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KatoConfig {
    #[serde(default)]
    pub times: Vec<f64>,
    /// Decompose the full spectrum so the modulus integral is exact for the
    /// discrete operator at every time (possible on dense-path grids).
    #[serde(default = "default_true")]
    pub full_spectrum: bool,
}

fn default_true() -> bool {
    true
}

impl Default for KatoConfig {
    fn default() -> Self {
        Self { times: Vec::new(), full_spectrum: true }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Mandatory whenever a Monte Carlo command runs.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub checkpoint_times: Vec<f64>,
    #[serde(default)]
    pub start: Option<[f64; 2]>,
    #[serde(default)]
    pub ball_radius: f64,
    #[serde(default)]
    pub exit_times: Vec<f64>,
    #[serde(default)]
    pub displacement_radii: Vec<f64>,
    /// Horizon for local-time runs.
    #[serde(default)]
    pub horizon: f64,
    /// Emit an MC kernel histogram at this time.
    #[serde(default)]
    pub kernel_time: Option<f64>,
}

fn default_delta() -> f64 {
    1e-4
}
fn default_paths() -> usize {
    10_000
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            paths: default_paths(),
            seed: None,
            eps_list: Vec::new(),
            checkpoint_times: Vec::new(),
            start: None,
            ball_radius: 0.0,
            exit_times: Vec::new(),
            displacement_radii: Vec::new(),
            horizon: 0.0,
            kernel_time: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevConfig {
    #[serde(default = "default_sobolev_p")]
    pub p: f64,
    #[serde(default)]
    pub truncations: Vec<f64>,
    #[serde(default = "default_sobolev_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optional second spacing for the refinement cross-check.
    #[serde(default)]
    pub h_fine: Option<f64>,
}

fn default_sobolev_p() -> f64 {
    4.0
}
fn default_sobolev_iters() -> usize {
    200
}

impl Default for SobolevConfig {
    fn default() -> Self {
        Self {
            p: default_sobolev_p(),
            truncations: Vec::new(),
            iters: default_sobolev_iters(),
            seed: 0,
            h_fine: None,
        }
    }
}

pub const COMMANDS: &[&str] = &[
    "grid",
    "eig",
    "kernel",
    "part",
    "exhaust",
    "simulate",
    "local-time",
    "kato",
    "verify-gaussian",
    "verify-exit",
    "verify-quarter",
    "verify-kato",
    "verify-sobolev",
    "report",
];

const MC_COMMANDS: &[&str] = &["simulate", "local-time"];

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        // resolve the domain path relative to the config file
        if cfg.domain.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.domain = dir.join(&cfg.domain);
            }
        }
        Ok(cfg)
    }

    /// Enumerates every validation problem before any computation starts.
    pub fn validate(&self, commands: &[String]) -> Vec<String> {
        let mut errs = Vec::new();
        if !self.domain.exists() {
            errs.push(format!("domain file {} does not exist", self.domain.display()));
        }
        if !(self.grid.h > 0.0) {
            errs.push(format!("grid.h must be positive, got {}", self.grid.h));
        }
        if self.spectral.count == 0 {
            errs.push("spectral.count must be at least 1".into());
        }
        if !(self.window.eps > 0.0 && self.window.eps < 1.0) {
            errs.push(format!("window.eps must lie in (0,1), got {}", self.window.eps));
        }
        for c in commands {
            if !COMMANDS.contains(&c.as_str()) {
                errs.push(format!("unknown command {c:?}"));
            }
        }
        let runs_mc = commands.iter().any(|c| MC_COMMANDS.contains(&c.as_str()));
        if runs_mc {
            if self.mc.seed.is_none() {
                errs.push("mc.seed is mandatory for Monte Carlo commands".into());
            }
            if !(self.mc.delta > 0.0) {
                errs.push(format!("mc.delta must be positive, got {}", self.mc.delta));
            }
            if self.mc.paths == 0 {
                errs.push("mc.paths must be at least 1".into());
            }
        }
        if commands.iter().any(|c| c == "exhaust") {
            match self.exhaust.scheme.as_deref() {
                Some("ball-radii") | Some("horn-cuts") => {}
                Some(other) => errs.push(format!(
                    "exhaust.scheme must be \"ball-radii\" or \"horn-cuts\", got {other:?}"
                )),
                None => errs.push("exhaust.scheme required for the exhaust command".into()),
            }
            if self.exhaust.values.is_empty() {
                errs.push("exhaust.values must not be empty".into());
            }
        }
        if commands.iter().any(|c| c == "verify-sobolev") && self.sobolev.truncations.is_empty() {
            errs.push("sobolev.truncations must not be empty for verify-sobolev".into());
        }
        if commands.iter().any(|c| c == "part") {
            match self.part.kind.as_deref() {
                Some("ball") | Some("xcut") => {}
                Some(other) => errs.push(format!("part.kind must be \"ball\" or \"xcut\", got {other:?}")),
                None => errs.push("part.kind required for the part command".into()),
            }
        }
        errs
    }
}
