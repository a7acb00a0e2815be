//! Run configuration.
//!
//! A run is described by one TOML file naming the model family, the context
//! tables, the parameter files, and the simulation and analysis settings.
//! Every relative path in the file resolves against the directory the config
//! file lives in. Which fields are required depends on the subcommand:
//! `simulate` needs the model, context, and value sections, while `cea` only
//! reads `[cea]`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// The three model families the CLI can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelType {
    CohortDtstm,
    IndivCtstm,
    Psm,
}

impl ModelType {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "cohort-dtstm" => ModelType::CohortDtstm,
            "indiv-ctstm" => ModelType::IndivCtstm,
            "psm" => ModelType::Psm,
            other => bail!(
                "unknown model_type \"{other}\" (expected cohort-dtstm, indiv-ctstm, or psm)"
            ),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelType::CohortDtstm => "cohort-dtstm",
            ModelType::IndivCtstm => "indiv-ctstm",
            ModelType::Psm => "psm",
        }
    }

    /// The config section holding this family's settings.
    fn section(self) -> &'static str {
        match self {
            ModelType::CohortDtstm => "cohort",
            ModelType::IndivCtstm => "indiv",
            ModelType::Psm => "psm",
        }
    }
}

/// Top level of the TOML file.
#[derive(Debug, Deserialize)]
pub struct RunConfig {
    pub model_type: Option<String>,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
    pub context: Option<ContextPaths>,
    pub discounting: Option<Discounting>,
    pub cohort: Option<CohortSection>,
    pub indiv: Option<IndivSection>,
    pub psm: Option<PsmSection>,
    pub values: Option<ValuesSection>,
    pub cea: Option<CeaSection>,
}

/// Paths to the context tables.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextPaths {
    pub strategies: String,
    pub patients: String,
    pub states: String,
    pub tmat: Option<String>,
}

/// Annual discount rates the simulated values are reported at.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discounting {
    pub qalys: Vec<f64>,
    pub costs: Vec<f64>,
}

/// Discrete-time cohort settings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    /// Long-format transition probability CSV.
    pub transitions: String,
    pub cycle_length: f64,
    pub n_cycles: usize,
    #[serde(default = "default_method")]
    pub method: String,
    /// Initial state distribution; defaults to all mass in state 1.
    pub x0: Option<Vec<f64>>,
}

/// Individual-level continuous-time settings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndivSection {
    #[serde(default = "default_clock")]
    pub clock: String,
    pub max_t: Option<f64>,
    pub max_age: Option<f64>,
    #[serde(default = "default_age_column")]
    pub age_column: String,
    /// Grid the occupancy probabilities are reported on.
    pub t_grid: GridSpec,
    /// One survival model per transition number in the transition matrix.
    pub transitions: Vec<SurvivalSpec>,
}

/// Partitioned survival settings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsmSection {
    pub t_grid: GridSpec,
    #[serde(default = "default_method")]
    pub method: String,
    /// One survival model per curve, lowest state first.
    pub curves: Vec<SurvivalSpec>,
}

/// One parametric survival model: a family plus either fixed natural
/// parameters or a coefficient file with an optional covariance matrix for
/// sampling.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalSpec {
    pub family: String,
    pub coefs: Option<String>,
    pub vcov: Option<String>,
    pub params: Option<Vec<f64>>,
}

/// State-value tables: one utility table and any number of cost categories.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesSection {
    pub utility: String,
    #[serde(default)]
    pub utility_time_reset: bool,
    #[serde(default)]
    pub costs: Vec<CostSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub name: String,
    pub table: String,
    #[serde(default)]
    pub time_reset: bool,
}

/// Cost-effectiveness settings, read by the `cea` subcommand and (for
/// `by_grp`) when summarizing a simulation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeaSection {
    pub k_grid: Option<GridSpec>,
    pub comparator: Option<u32>,
    pub dr_qalys: Option<f64>,
    pub dr_costs: Option<f64>,
    #[serde(default)]
    pub by_grp: bool,
    /// Willingness-to-pay the ICER table's net-benefit column is computed
    /// at; defaults to the middle element of `k_grid`.
    pub k_icer: Option<f64>,
    /// Explicit cost-effectiveness input files; when absent both are read
    /// from the output directory of a prior `simulate` run.
    pub qalys: Option<String>,
    pub costs: Option<String>,
}

/// A time or willingness-to-pay grid: either explicit points or an
/// inclusive arithmetic range.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl GridSpec {
    /// Materializes the grid and validates that it is finite and strictly
    /// increasing.
    pub fn points(&self, what: &str) -> Result<Vec<f64>> {
        let pts = match self {
            GridSpec::Points(p) => p.clone(),
            GridSpec::Range { start, stop, step } => {
                if !(*step > 0.0) || !step.is_finite() {
                    bail!("{what}: step must be positive and finite");
                }
                if !(stop >= start) {
                    bail!("{what}: stop must not precede start");
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| start + i as f64 * step).collect()
            }
        };
        if pts.is_empty() {
            bail!("{what}: at least one point is required");
        }
        if pts.iter().any(|t| !t.is_finite()) {
            bail!("{what}: every point must be finite");
        }
        if pts.windows(2).any(|w| w[1] <= w[0]) {
            bail!("{what}: points must be strictly increasing");
        }
        Ok(pts)
    }
}

fn default_method() -> String {
    "trapezoid".into()
}

fn default_clock() -> String {
    "reset".into()
}

fn default_age_column() -> String {
    "age".into()
}

pub fn parse_clock(name: &str) -> Result<qalysim_core::Clock> {
    Ok(match name {
        "reset" => qalysim_core::Clock::Reset,
        "forward" => qalysim_core::Clock::Forward,
        other => bail!("unknown clock \"{other}\" (expected reset or forward)"),
    })
}

pub fn parse_method(name: &str) -> Result<qalysim_core::IntegrationMethod> {
    Ok(match name {
        "left" => qalysim_core::IntegrationMethod::Left,
        "right" => qalysim_core::IntegrationMethod::Right,
        "trapezoid" => qalysim_core::IntegrationMethod::Trapezoid,
        other => bail!("unknown integration method \"{other}\" (expected left, right, or trapezoid)"),
    })
}

const KNOWN_KEYS: [&str; 10] = [
    "model_type",
    "n_samples",
    "seed",
    "context",
    "discounting",
    "cohort",
    "indiv",
    "psm",
    "values",
    "cea",
];

/// A parsed config together with the raw bytes (for hashing), the directory
/// paths resolve against, and the raw top-level keys (for drift warnings).
pub struct LoadedConfig {
    pub cfg: RunConfig,
    pub bytes: Vec<u8>,
    pub dir: PathBuf,
    top_keys: Vec<String>,
}

impl LoadedConfig {
    /// Resolves a path from the config against the config file's directory.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Warnings about config drift: top-level keys that are present but not
    /// consumed. For `simulate` that is any model section other than the
    /// selected one plus anything unknown; for `cea` (no model selected)
    /// only unknown keys are flagged.
    pub fn drift_warnings(&self, model: Option<ModelType>) -> Vec<String> {
        let mut warnings = Vec::new();
        if let Some(model) = model {
            let unused: Vec<&str> = self
                .top_keys
                .iter()
                .map(String::as_str)
                .filter(|k| {
                    ["cohort", "indiv", "psm"].contains(k) && *k != model.section()
                })
                .collect();
            if !unused.is_empty() {
                warnings.push(format!(
                    "config fields not used by model_type \"{}\": {}",
                    model.name(),
                    unused.join(", ")
                ));
            }
        }
        let unknown: Vec<&str> = self
            .top_keys
            .iter()
            .map(String::as_str)
            .filter(|k| !KNOWN_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            warnings.push(format!("unknown config fields: {}", unknown.join(", ")));
        }
        warnings
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let text = std::str::from_utf8(&bytes)
        .with_context(|| format!("config file {} is not UTF-8", path.display()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("cannot parse config file {}", path.display()))?;
    let top_keys: Vec<String> = table.keys().cloned().collect();
    let cfg: RunConfig = table
        .try_into()
        .with_context(|| format!("invalid config file {}", path.display()))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok(LoadedConfig {
        cfg,
        bytes,
        dir,
        top_keys,
    })
}
