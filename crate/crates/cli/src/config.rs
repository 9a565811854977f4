//! TOML run configuration. Every section is optional; missing values take
//! the defaults below, unknown keys are rejected.

use std::path::{Path, PathBuf};

use heavytail_core::instanton::{default_horizons, ConstraintKind, SolverOptions};
use heavytail_core::validation::{Budgets, Tolerances, ALL_CRITERIA};
use heavytail_core::ModelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Simulate,
    Excursions,
    Tails,
    Instanton,
    Validate,
    Report,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Excursions => "excursions",
            Experiment::Tails => "tails",
            Experiment::Instanton => "instanton",
            Experiment::Validate => "validate",
            Experiment::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelParams,
    /// When present it must match the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub budgets: RunBudgets,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub excursions: ExcursionConfig,
    #[serde(default)]
    pub tails: TailsConfig,
    #[serde(default)]
    pub instanton: InstantonConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_model() -> ModelParams {
    ModelParams::new(1.0, 4.0).expect("valid default model")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub master: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { master: 1 }
    }
}

/// Shared Monte Carlo budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBudgets {
    pub n_samples: usize,
    pub horizons: Vec<f64>,
    /// Simulation step; `0.01 / gamma` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Default for RunBudgets {
    fn default() -> Self {
        Self { n_samples: 10_000, horizons: vec![50.0, 100.0, 200.0], dt: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Number of leading paths written in full.
    pub store_paths: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { store_paths: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcursionConfig {
    /// A tenth of the stationary standard deviation when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    pub n_paths: usize,
    pub horizon: f64,
    pub n_cycles: usize,
}

impl Default for ExcursionConfig {
    fn default() -> Self {
        Self { eps0: None, n_paths: 100, horizon: 100.0, n_cycles: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailsConfig {
    /// Thresholds; when empty one is calibrated on a pilot run.
    pub thresholds: Vec<f64>,
    /// Target hit probability of the calibrated threshold.
    pub target_probability: f64,
}

impl Default for TailsConfig {
    fn default() -> Self {
        Self { thresholds: Vec::new(), target_probability: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstantonConfig {
    /// `{5, 10, 20, 40} / gamma` when empty.
    pub horizons: Vec<f64>,
    /// `0.005 / gamma` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub boundary_x0: f64,
    pub constraint: ConstraintKind,
    pub el_tol: f64,
    pub n_random_starts: usize,
}

impl Default for InstantonConfig {
    fn default() -> Self {
        let s = SolverOptions::default();
        Self {
            horizons: Vec::new(),
            dt: None,
            boundary_x0: 0.0,
            constraint: ConstraintKind::Absolute,
            el_tol: s.el_tol,
            n_random_starts: s.n_random_starts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub criteria: Vec<u8>,
    pub budgets: Budgets,
    pub tolerances: Tolerances,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { criteria: ALL_CRITERIA.to_vec(), budgets: Budgets::default(), tolerances: Tolerances::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Inputs default to `tails.csv` and `jinf.json` in the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tails_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jinf_json: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn simulation_dt(&self) -> f64 {
        self.budgets.dt.unwrap_or(0.01 / self.model.gamma())
    }

    pub fn excursion_eps0(&self) -> f64 {
        self.excursions.eps0.unwrap_or(self.model.default_eps0())
    }

    pub fn instanton_horizons(&self) -> Vec<f64> {
        if self.instanton.horizons.is_empty() {
            default_horizons(self.model.gamma())
        } else {
            self.instanton.horizons.clone()
        }
    }

    pub fn instanton_dt(&self) -> f64 {
        self.instanton.dt.unwrap_or(0.005 / self.model.gamma())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            constraint: self.instanton.constraint,
            el_tol: self.instanton.el_tol,
            n_random_starts: self.instanton.n_random_starts,
            ..SolverOptions::default()
        }
    }

    /// Rejects non-positive budgets and malformed lists.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.budgets.n_samples == 0 {
            return bad("budgets.n_samples must be positive".into());
        }
        if self.budgets.horizons.is_empty() || !self.budgets.horizons.iter().all(|&h| positive(h)) {
            return bad("budgets.horizons must be a non-empty list of positive times".into());
        }
        if let Some(dt) = self.budgets.dt {
            if !positive(dt) {
                return bad(format!("budgets.dt must be positive, got {dt}"));
            }
        }
        if let Some(e) = self.excursions.eps0 {
            if !positive(e) {
                return bad(format!("excursions.eps0 must be positive, got {e}"));
            }
        }
        if self.excursions.n_paths == 0 || self.excursions.n_cycles < 2 || !positive(self.excursions.horizon) {
            return bad("excursions needs n_paths > 0, n_cycles >= 2 and horizon > 0".into());
        }
        if self.tails.thresholds.iter().any(|x| !x.is_finite()) {
            return bad("tails.thresholds must be finite".into());
        }
        let tp = self.tails.target_probability;
        if !(tp > 0.0 && tp < 1.0) {
            return bad(format!("tails.target_probability must be in (0,1), got {tp}"));
        }
        if !self.instanton.horizons.iter().all(|&h| positive(h))
            || self.instanton.horizons.windows(2).any(|w| !(w[1] > w[0]))
        {
            return bad("instanton.horizons must be positive and strictly increasing".into());
        }
        if let Some(dt) = self.instanton.dt {
            if !positive(dt) {
                return bad(format!("instanton.dt must be positive, got {dt}"));
            }
        }
        if !positive(self.instanton.el_tol) || !self.instanton.boundary_x0.is_finite() {
            return bad("instanton.el_tol must be positive and boundary_x0 finite".into());
        }
        if let Some(c) = self.validate.criteria.iter().find(|c| !ALL_CRITERIA.contains(c)) {
            return bad(format!("validate.criteria: unknown criterion {c}"));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.model, ModelParams::new(1.0, 4.0).unwrap());
        assert_eq!(c.simulation_dt(), 0.01);
        assert_eq!(c.instanton_horizons(), vec![5.0, 10.0, 20.0, 40.0]);
    }

    #[test]
    fn round_trips_through_toml() {
        let text = r#"
            experiment = "tails"
            output_dir = "runs/a"
            [model]
            gamma = 2.0
            p = 3.0
            [seeds]
            master = 99
            [budgets]
            n_samples = 500
            horizons = [10.0, 20.0]
            dt = 0.02
            [tails]
            thresholds = [0.5, 1.5]
            [validate]
            criteria = [2, 4]
            [validate.tolerances]
            homogeneity_relative = 1e-9
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.validate.tolerances.homogeneity_relative, 1e-9);
        assert_eq!(again.validate.budgets, Budgets::default());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[model]\ngamma = -1.0\np = 4.0",
            "[budgets]\nn_samples = 0",
            "[budgets]\nhorizons = []",
            "[instanton]\nhorizons = [10.0, 5.0]",
            "unknown_key = 3",
            "[validate]\ncriteria = [12]",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
