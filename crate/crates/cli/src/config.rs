//! Run configuration: one JSON document per invocation.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sdecal::experiment::{ExperimentSettings, RunMode};
use sdecal::Clock;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    EstimateDrift,
    EstimateDiffusion,
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Ou1d,
    OuNd,
    LinearDriftDemo,
    Form1Demo,
    Form2Demo,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Ou1d => "ou1d",
            ModelName::OuNd => "ou-nd",
            ModelName::LinearDriftDemo => "linear-drift-demo",
            ModelName::Form1Demo => "form1-demo",
            ModelName::Form2Demo => "form2-demo",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::json!({})
}

fn default_output() -> PathBuf {
    PathBuf::from("sdecal-out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            input: None,
            output: default_output(),
        }
    }
}

fn default_substeps() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub epsilon: f64,
    /// Fixed observation gap; mutually exclusive with `gap_exponent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    /// `γ` in `Δ̃ = ε^γ`; 1.5 when neither this nor `gap` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Exact transition for OU models.
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub clock: Clock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMethod {
    ClosedForm,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormChoice {
    Form1,
    Form2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub alpha: f64,
    pub p: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { alpha: 1.0, p: 2.0 }
    }
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Plug-in `ϑ` for drift estimation (rows); estimated from the data when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vartheta: Option<Vec<Vec<f64>>>,
    /// Diffusion parameterization; the model's own when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<FormChoice>,
    #[serde(default = "default_method")]
    pub method: DriftMethod,
    /// `ε` of the Newton objective; `1 / span` of the record when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

fn default_method() -> DriftMethod {
    DriftMethod::ClosedForm
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            vartheta: None,
            form: None,
            method: default_method(),
            epsilon: None,
            penalty: PenaltyConfig::default(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            init: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub mode: RunMode,
    pub settings: ExperimentSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelConfig,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanConfig>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub gap_exponent: Option<f64>,
    pub replications: Option<usize>,
}

/// Deserializes `value`, reporting the dotted path of the offending key.
pub fn from_value<T: DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let key = match (prefix.is_empty(), path.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        CliError::Config(format!("`{key}`: {}", e.into_inner()))
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        from_value(value, "")
    }

    /// Applies overrides and fills defaults so the logged config is explicit.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(out) = &o.out {
            self.io.output = out.clone();
        }
        if let Some(sim) = &mut self.simulation {
            if let Some(seed) = o.seed {
                sim.seed = seed;
            }
            if let Some(eps) = o.epsilon {
                sim.epsilon = eps;
            }
            if let Some(g) = o.gap_exponent {
                sim.gap_exponent = Some(g);
                sim.gap = None;
            }
            match (sim.gap, sim.gap_exponent) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(
                        "`simulation`: give either `gap` or `gap_exponent`, not both".into(),
                    ))
                }
                (None, None) => sim.gap_exponent = Some(1.5),
                _ => {}
            }
        }
        if let Some(plan) = &mut self.plan {
            if let Some(seed) = o.seed {
                plan.settings.seed_base = seed;
            }
            if let Some(eps) = o.epsilon {
                plan.settings.epsilon_grid = vec![eps];
            }
            if let Some(g) = o.gap_exponent {
                plan.settings.gap_exponent = g;
            }
            if let Some(r) = o.replications {
                plan.settings.replications = r;
            }
        }
        if let Some(est) = &mut self.estimation {
            if let (Some(eps), None) = (o.epsilon, &self.simulation) {
                est.epsilon = Some(eps);
            }
        }
        match self.command {
            Command::Simulate if self.simulation.is_none() => {
                return Err(CliError::Config("`simulation`: required by the simulate command".into()))
            }
            Command::EstimateDrift | Command::EstimateDiffusion => {
                if self.io.input.is_none() {
                    return Err(CliError::Config("`io.input`: required by estimation commands".into()));
                }
                if self.estimation.is_none() {
                    self.estimation = Some(EstimationConfig::default());
                }
            }
            Command::Experiment if self.plan.is_none() => {
                return Err(CliError::Config("`plan`: required by the experiment command".into()))
            }
            _ => {}
        }
        Ok(self)
    }
}
