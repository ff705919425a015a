//! Sweep configuration: a single TOML file with explicit defaults that are
//! echoed into the run manifest.

use serde::{Deserialize, Serialize};

use infalign::analytic::{log_spaced_betas, InferenceProcedure};
use infalign::fixed_point::FixedPointKind;
use infalign::suites::SuiteTransform;
use infalign::transforms::Transform;

use crate::errors::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_mc_trials")]
    pub mc_trials: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default = "default_rewind_fallback")]
    pub rewind_fallback: String,
    #[serde(default = "default_transforms")]
    pub transforms: Vec<String>,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<String>,
    #[serde(default)]
    pub betas: BetaSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default = "default_beta_min")]
    pub min: f64,
    #[serde(default = "default_beta_max")]
    pub max: f64,
    #[serde(default = "default_beta_count")]
    pub count: usize,
}

fn default_seed() -> u64 {
    42
}
fn default_grid_size() -> usize {
    infalign::analytic::DEFAULT_GRID_SIZE
}
fn default_mc_trials() -> u64 {
    1_000_000
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_rewind_fallback() -> String {
    "last".into()
}
fn default_transforms() -> Vec<String> {
    ["identity", "log", "exp:5", "exp:10", "exp:-5", "exp:-10"]
        .map(String::from)
        .to_vec()
}
fn default_procedures() -> Vec<String> {
    vec!["bon:4".into()]
}
fn default_beta_min() -> f64 {
    0.02
}
fn default_beta_max() -> f64 {
    5.0
}
fn default_beta_count() -> usize {
    16
}

impl Default for BetaSpec {
    fn default() -> Self {
        Self {
            values: None,
            min: default_beta_min(),
            max: default_beta_max(),
            count: default_beta_count(),
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            grid_size: default_grid_size(),
            mc_trials: default_mc_trials(),
            out_dir: default_out_dir(),
            rewind_fallback: default_rewind_fallback(),
            transforms: default_transforms(),
            procedures: default_procedures(),
            betas: BetaSpec::default(),
        }
    }
}

impl SweepConfig {
    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(CliError::config)
    }

    pub fn beta_grid(&self) -> CliResult<Vec<f64>> {
        let betas = match &self.betas.values {
            Some(values) => values.clone(),
            None => log_spaced_betas(self.betas.min, self.betas.max, self.betas.count)
                .map_err(CliError::config)?,
        };
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(CliError::Config("betas must be positive".into()));
        }
        Ok(betas)
    }

    pub fn parsed_transforms(&self) -> CliResult<Vec<SuiteTransform>> {
        self.transforms.iter().map(|s| parse_sweep_transform(s)).collect()
    }

    pub fn parsed_procedures(&self) -> CliResult<Vec<InferenceProcedure>> {
        self.procedures
            .iter()
            .map(|s| InferenceProcedure::parse_spec(s).map_err(CliError::config))
            .collect()
    }
}

/// Sweepable transform specs: the plain transform grammar plus
/// `bon_fp:<N>` / `won_fp:<N>` families solved per beta.
pub fn parse_sweep_transform(spec: &str) -> CliResult<SuiteTransform> {
    if let Some(n) = spec.strip_prefix("bon_fp:") {
        let n: u32 = n
            .parse()
            .map_err(|e| CliError::Config(format!("transform `{spec}`: {e}")))?;
        return Ok(SuiteTransform::FixedPoint {
            kind: FixedPointKind::BestOfN,
            n,
        });
    }
    if let Some(n) = spec.strip_prefix("won_fp:") {
        let n: u32 = n
            .parse()
            .map_err(|e| CliError::Config(format!("transform `{spec}`: {e}")))?;
        return Ok(SuiteTransform::FixedPoint {
            kind: FixedPointKind::WorstOfN,
            n,
        });
    }
    Ok(SuiteTransform::fixed(
        Transform::parse_spec(spec).map_err(CliError::config)?,
    ))
}

/// Filesystem-safe version of a transform/procedure label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}
