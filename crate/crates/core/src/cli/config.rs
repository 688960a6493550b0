use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::divergence::PerceptionMetric;
use crate::error::{RdpError, Result};
use crate::models::{GaussianSource, SourceDescriptor};
use crate::multivariate::DEFAULT_S2_FLOOR;

/// Environment variable naming the directory used when no output path is given.
pub const OUTPUT_DIR_ENV: &str = "GAUSSRDP_OUTPUT_DIR";

pub const DEFAULT_EPS: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Scalar,
    Multivar,
    Sweep,
    PerfectRealism,
    Waterfill,
    Verify,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Scalar => "scalar",
            CommandKind::Multivar => "multivar",
            CommandKind::Sweep => "sweep",
            CommandKind::PerfectRealism => "perfect-realism",
            CommandKind::Waterfill => "waterfill",
            CommandKind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// A source given inline or as a path to a JSON descriptor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Path(PathBuf),
    Inline(SourceDescriptor),
}

impl SourceSpec {
    pub fn load(&self) -> Result<GaussianSource> {
        match self {
            SourceSpec::Inline(desc) => GaussianSource::from_descriptor(desc),
            SourceSpec::Path(path) => {
                let text = read_file(path)?;
                let desc: SourceDescriptor = serde_json::from_str(&text)
                    .map_err(|e| RdpError::Config(format!("invalid source file {}: {e}", path.display())))?;
                GaussianSource::from_descriptor(&desc)
            }
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| RdpError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Everything one invocation needs. Built from flags or read from a JSON file;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub metric: Option<PerceptionMetric>,
    /// Scalar source variance.
    #[serde(default)]
    pub var: Option<f64>,
    /// Scalar distortion budget.
    #[serde(default)]
    pub dist: Option<f64>,
    /// Scalar perception budget.
    #[serde(default)]
    pub perc: Option<f64>,
    /// Eigenvalues of a diagonal source.
    #[serde(default)]
    pub eigs: Option<Vec<f64>>,
    #[serde(default)]
    pub source: Option<SourceSpec>,
    #[serde(default)]
    pub s1: Option<f64>,
    #[serde(default)]
    pub s2: Option<f64>,
    #[serde(default)]
    pub s1_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub s2_grid: Option<Vec<f64>>,
    /// Lower bound applied to `s2` for KL and GJS; defaults to 1e-3.
    #[serde(default)]
    pub s2_min: Option<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Monte Carlo samples for an optional realization check (0 disables it).
    #[serde(default)]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Records file to check (verify only).
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Long-format CSV of per-iteration gaps and Lagrangian values.
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl RunConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            metric: None,
            var: None,
            dist: None,
            perc: None,
            eigs: None,
            source: None,
            s1: None,
            s2: None,
            s1_grid: None,
            s2_grid: None,
            s2_min: None,
            eps: DEFAULT_EPS,
            max_iters: DEFAULT_MAX_ITERS,
            mc_samples: 0,
            seed: 0,
            input: None,
            output: None,
            format: OutputFormat::Csv,
            trace: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| RdpError::Config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    fn require<T: Clone>(&self, value: &Option<T>, name: &str) -> Result<T> {
        value.clone().ok_or_else(|| RdpError::Config(format!("'{}' requires '{name}'", self.command.name())))
    }

    pub fn metric(&self) -> Result<PerceptionMetric> {
        self.require(&self.metric, "metric")
    }

    pub fn s2_floor(&self) -> f64 {
        self.s2_min.unwrap_or(DEFAULT_S2_FLOOR)
    }

    /// Eigenvalue-only sources for the closed-form allocations.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.load_source()?.eigvals().iter().copied().collect())
    }

    pub fn load_source(&self) -> Result<GaussianSource> {
        match (&self.eigs, &self.source) {
            (Some(_), Some(_)) => Err(RdpError::Config("give either 'eigs' or 'source', not both".into())),
            (Some(e), None) => GaussianSource::from_eigenvalues(e),
            (None, Some(s)) => s.load(),
            (None, None) => Err(RdpError::Config(format!("'{}' requires 'eigs' or 'source'", self.command.name()))),
        }
    }

    /// Checks that the fields required by the command are present and that no
    /// field belonging to another command is set.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(RdpError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iters == 0 {
            return Err(RdpError::Config("max_iters must be at least 1".into()));
        }
        if let Some(m) = self.s2_min {
            if !(m.is_finite() && m >= 0.0) {
                return Err(RdpError::Config(format!("s2_min must be non-negative, got {m}")));
            }
        }
        let has_source = self.eigs.is_some() || self.source.is_some();
        let scalar_fields = self.var.is_some() || self.dist.is_some() || self.perc.is_some();
        let grid_fields = self.s1_grid.is_some() || self.s2_grid.is_some();
        let reject = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Err(RdpError::Config(format!("'{what}' is not used by '{}'", self.command.name())))
            } else {
                Ok(())
            }
        };
        match self.command {
            CommandKind::Scalar => {
                self.metric()?;
                self.require(&self.var, "var")?;
                self.require(&self.dist, "dist")?;
                self.require(&self.perc, "perc")?;
                reject(has_source, "eigs/source")?;
                reject(self.s1.is_some() || self.s2.is_some() || grid_fields, "multipliers")?;
            }
            CommandKind::Multivar => {
                self.metric()?;
                self.require(&self.s1, "s1")?;
                self.require(&self.s2, "s2")?;
                if !has_source {
                    self.require(&self.eigs, "eigs")?;
                }
                reject(scalar_fields, "var/dist/perc")?;
                reject(grid_fields, "s1_grid/s2_grid")?;
            }
            CommandKind::Sweep => {
                self.metric()?;
                let g1 = self.require(&self.s1_grid, "s1_grid")?;
                let g2 = self.require(&self.s2_grid, "s2_grid")?;
                if g1.is_empty() || g2.is_empty() {
                    return Err(RdpError::Config("sweep grids must be non-empty".into()));
                }
                if !has_source {
                    self.require(&self.eigs, "eigs")?;
                }
                reject(scalar_fields, "var/dist/perc")?;
                reject(self.s1.is_some() || self.s2.is_some(), "s1/s2")?;
            }
            CommandKind::PerfectRealism | CommandKind::Waterfill => {
                self.require(&self.s1, "s1")?;
                if !has_source {
                    self.require(&self.eigs, "eigs")?;
                }
                reject(scalar_fields, "var/dist/perc")?;
                reject(self.s2.is_some() || grid_fields, "s2/grids")?;
            }
            CommandKind::Verify => {
                self.require(&self.input, "input")?;
                reject(has_source || scalar_fields || grid_fields, "problem parameters")?;
            }
        }
        if self.trace.is_some() && !matches!(self.command, CommandKind::Multivar | CommandKind::Sweep) {
            return Err(RdpError::Config("'trace' is only available for multivar and sweep".into()));
        }
        Ok(())
    }

    /// Explicit output path, or `$GAUSSRDP_OUTPUT_DIR/<command>.<ext>`, or
    /// `None` for stdout.
    pub fn output_path(&self) -> Option<PathBuf> {
        if let Some(p) = &self.output {
            return Some(p.clone());
        }
        std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(|dir| PathBuf::from(dir).join(format!("{}.{}", self.command.name(), self.format.extension())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates_sweep() {
        let cfg = RunConfig::from_json(
            r#"{"command": "sweep", "metric": "w2", "eigs": [1, 3, 5],
                "s1_grid": [0.5, 0.1], "s2_grid": [0.5], "format": "json"}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.eps, DEFAULT_EPS);
        assert_eq!(cfg.format, OutputFormat::Json);
        assert_eq!(cfg.eigenvalues().unwrap(), vec![5.0, 3.0, 1.0]);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::from_json(r#"{"command": "scalar", "metric": "w2", "colour": 1}"#).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn missing_and_foreign_fields() {
        let cfg = RunConfig::from_json(r#"{"command": "scalar", "metric": "w2", "var": 1, "dist": 0.5}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("perc"));
        let cfg = RunConfig::from_json(r#"{"command": "waterfill", "eigs": [1], "s1": 1, "s2": 1}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_json(r#"{"command": "scalar", "metric": "xx"}"#);
        assert!(cfg.is_err());
    }

    #[test]
    fn inline_source_descriptor() {
        let cfg = RunConfig::from_json(
            r#"{"command": "multivar", "metric": "h2", "s1": 1, "s2": 1,
                "source": {"covariance": [[2, 1], [1, 2]]}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let src = cfg.load_source().unwrap();
        assert!((src.eigvals()[0] - 3.0).abs() < 1e-14);
    }
}
