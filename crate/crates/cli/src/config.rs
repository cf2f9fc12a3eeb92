//! Experiment configuration: a TOML file plus a `[desk]` overlay and `--set` overrides.

use std::path::{Path, PathBuf};

use greenfn_core::pde::{PdeKind, PdeProblem, SamplerSpec};
use greenfn_core::spectral::StudyConfig;
use greenfn_core::training::TrainConfig;
use greenfn_core::{KernelSpec, NullBasis};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Configs shipped with the binary, addressable by name instead of path.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1_helmholtz", include_str!("../configs/fig1_helmholtz.toml")),
    ("fig1_helmholtz_noisy", include_str!("../configs/fig1_helmholtz_noisy.toml")),
    ("fig2_schrodinger", include_str!("../configs/fig2_schrodinger.toml")),
    ("fig3_poisson_lambda0", include_str!("../configs/fig3_poisson_lambda0.toml")),
    ("fig3_poisson_lambda1e-7", include_str!("../configs/fig3_poisson_lambda1e-7.toml")),
    ("fig3_poisson_lambda1e-4", include_str!("../configs/fig3_poisson_lambda1e-4.toml")),
    ("fig4_heat", include_str!("../configs/fig4_heat.toml")),
    ("fig5_fokker_planck", include_str!("../configs/fig5_fokker_planck.toml")),
    ("rate_study", include_str!("../configs/rate_study.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Minibatch Adam as configured in `[train]`.
    #[default]
    Adam,
    /// Dense direct solve of the stationarity conditions.
    Exact,
}

/// A mesh to evaluate a trained model on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub resolution: usize,
    /// Defaults to the training ratio of time levels to spatial points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectraConfig {
    pub top_k: usize,
    /// Cap on `m_x * m_y` for the kernel spectrum; the problem is coarsened to fit.
    pub max_points: usize,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        SpectraConfig {
            top_k: 50,
            max_points: 2500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub problem: PdeProblem,
    pub sampler: SamplerSpec,
    pub n_train: usize,
    pub n_test: usize,
    /// Relative noise on training outputs; test outputs stay clean.
    #[serde(default)]
    pub noise: f64,
    pub kernel_g: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_b: Option<KernelSpec>,
    #[serde(default)]
    pub null_g: NullBasis,
    #[serde(default)]
    pub null_b: NullBasis,
    pub lambda: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub extrapolate: Vec<Mesh>,
    #[serde(default)]
    pub spectra: SpectraConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    /// Reduced-scale overlay merged in by `--desk`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk: Option<Table>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Recursively overwrite `base` with the entries of `overlay`.
fn merge(base: &mut Table, overlay: &Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Apply `key.path=value`; the value is read as TOML and falls back to a bare string.
fn set_override(root: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(&[spec], "override must look like key=value"))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(&[key], "empty component in override key"));
    }
    let mut value = match format!("v = {}", raw.trim()).parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed table has the key it was given"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let mut node = root;
    for p in &path[..path.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config(&[key], format!("`{p}` is not a table"))),
        };
    }
    let last = path[path.len() - 1];
    // `lambda=0` should not turn a float field into an integer one
    if let (Some(Value::Float(_)), Value::Integer(i)) = (node.get(last), &value) {
        value = Value::Float(*i as f64);
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Keys of `input` that do not survive a decode/encode round trip.
fn unknown_keys(input: &Table, decoded: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in input {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, decoded.get(k)) {
            (_, None) => out.push(path),
            (Value::Table(a), Some(Value::Table(b))) => unknown_keys(a, b, &path, out),
            (Value::Array(a), Some(Value::Array(b))) => {
                for (i, (x, y)) in a.iter().zip(b).enumerate() {
                    if let (Value::Table(x), Value::Table(y)) = (x, y) {
                        unknown_keys(x, y, &format!("{path}[{i}]"), out);
                    }
                }
            }
            _ => {}
        }
    }
}

impl ExperimentConfig {
    /// Parse `text`, merge the desk overlay if asked, then apply overrides in order.
    pub fn from_toml_str(text: &str, desk: bool, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut root: Table = text.parse()?;
        if desk {
            match root.get("desk") {
                Some(Value::Table(overlay)) => {
                    let overlay = overlay.clone();
                    merge(&mut root, &overlay);
                }
                Some(_) => return Err(CliError::config(&["desk"], "desk must be a table")),
                None => return Err(CliError::config(&["desk"], "--desk given but the config has no [desk] table")),
            }
        }
        for o in overrides {
            set_override(&mut root, o)?;
        }
        let config: ExperimentConfig = root.clone().try_into()?;
        let decoded = Table::try_from(&config).map_err(|e| CliError::config(&[], e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&root, &decoded, "", &mut unknown);
        if !unknown.is_empty() {
            let keys: Vec<&str> = unknown.iter().map(String::as_str).collect();
            return Err(CliError::config(&keys, "unknown keys"));
        }
        config.validate()?;
        Ok(config)
    }

    /// `source` is a file path or the name of a bundled config.
    pub fn load(source: &str, desk: bool, overrides: &[String]) -> Result<ExperimentConfig> {
        let path = Path::new(source);
        let text = if path.exists() {
            std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?
        } else if let Some(text) = bundled(source) {
            text.to_string()
        } else {
            return Err(CliError::NotFound { path: path.to_path_buf() });
        };
        ExperimentConfig::from_toml_str(&text, desk, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config values are representable in TOML")
    }

    /// Collects every offending key before failing.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<(&str, String)> = Vec::new();
        if self.n_train == 0 {
            bad.push(("n_train", "must be positive".into()));
        }
        if self.n_test == 0 {
            bad.push(("n_test", "must be positive".into()));
        }
        if !(self.noise >= 0.0) {
            bad.push(("noise", "must be nonnegative".into()));
        }
        if !(self.lambda >= 0.0) {
            bad.push(("lambda", "must be nonnegative".into()));
        }
        if !(self.rho >= 0.0) {
            bad.push(("rho", "must be nonnegative".into()));
        }
        if self.solver == Solver::Adam && self.n_train > 0 {
            if let Err(e) = self.train.validate(self.n_train) {
                bad.push(("train", e.to_string()));
            }
        }
        let dims = match (self.problem.input_grid(), self.problem.output_grid()) {
            (Ok(x), Ok(y)) => Some((x.dims(), y.dims())),
            (Err(e), _) | (_, Err(e)) => {
                bad.push(("problem", e.to_string()));
                None
            }
        };
        if let Err(e) = self.kernel_g.validate() {
            bad.push(("kernel_g", e.to_string()));
        }
        if let Some(kb) = &self.kernel_b {
            if let Err(e) = kb.validate() {
                bad.push(("kernel_b", e.to_string()));
            }
        }
        if let Some((dx, dy)) = dims {
            if self.kernel_g.arity() != dx + dy {
                bad.push(("kernel_g", format!("acts on {} coordinates, the grids have {}", self.kernel_g.arity(), dx + dy)));
            }
            if let Some(kb) = &self.kernel_b {
                if kb.arity() != dy {
                    bad.push(("kernel_b", format!("acts on {} coordinates, the output grid has {dy}", kb.arity())));
                }
            }
            if self.null_g.exponents.iter().any(|e| e.len() != dx + dy) {
                bad.push(("null_g", format!("exponent tuples must have length {}", dx + dy)));
            }
            if self.null_b.exponents.iter().any(|e| e.len() != dy) {
                bad.push(("null_b", format!("exponent tuples must have length {dy}")));
            }
        }
        if self.kernel_b.is_none() && !self.null_b.is_empty() {
            bad.push(("null_b", "a bias null space needs kernel_b".into()));
        }
        for (i, m) in self.extrapolate.iter().enumerate() {
            if m.resolution < 3 || m.time_points.is_some_and(|t| t < 2) {
                bad.push(("extrapolate", format!("mesh {i} is too coarse")));
            }
        }
        if self.spectra.top_k == 0 {
            bad.push(("spectra.top_k", "must be positive".into()));
        }
        if bad.is_empty() {
            return Ok(());
        }
        let mut keys: Vec<&str> = bad.iter().map(|(k, _)| *k).collect();
        keys.dedup();
        let message = bad.iter().map(|(k, m)| format!("{k}: {m}")).collect::<Vec<_>>().join("; ");
        Err(CliError::config(&keys, message))
    }

    /// The problem at another resolution, scaling time levels with space unless given.
    pub fn problem_at(&self, mesh: &Mesh) -> PdeProblem {
        let mut p = self.problem.clone();
        let timed = matches!(p.kind, PdeKind::Heat1d { .. } | PdeKind::FokkerPlanck1d { .. });
        p.time_points = match (timed, mesh.time_points) {
            (false, _) => p.time_points,
            (true, Some(t)) => t,
            (true, None) => {
                let ratio = mesh.resolution as f64 / p.resolution as f64;
                ((p.time_points as f64 * ratio).round() as usize).max(2)
            }
        };
        p.resolution = mesh.resolution;
        p
    }
}
