//! Experiment configuration: a strict TOML (or JSON) document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snv_core::continual::{SequenceConfig, Strategy, TrainerConfig};
use snv_core::seed::derive_seed;
use snv_core::tasks::StreamConfig;
use snv_core::valuation::EstimatorConfig;

use crate::error::{read, CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Til,
    Cil,
    Both,
}

impl Scenario {
    pub fn includes_til(self) -> bool {
        matches!(self, Scenario::Til | Scenario::Both)
    }

    pub fn includes_cil(self) -> bool {
        matches!(self, Scenario::Cil | Scenario::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub blob_spread: f64,
    pub class_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden layer widths; input and output sizes come from the stream.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub capacity_ratio: f64,
    /// Omitted (or `-inf`) disables truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_threshold: Option<f64>,
    pub confidence: f64,
    #[serde(default = "defaults::min_samples")]
    pub min_samples: usize,
    #[serde(default = "defaults::max_permutations")]
    pub max_permutations: usize,
    #[serde(default = "defaults::passes_per_round")]
    pub passes_per_round: usize,
    #[serde(default = "defaults::racing")]
    pub racing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "defaults::fractions")]
    pub pruning_fractions: Vec<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            pruning_fractions: defaults::fractions(),
        }
    }
}

mod defaults {
    use snv_core::continual::Strategy;
    use snv_core::valuation::EstimatorConfig;

    pub fn min_samples() -> usize {
        EstimatorConfig::default().min_samples
    }
    pub fn max_permutations() -> usize {
        EstimatorConfig::default().max_permutations
    }
    pub fn passes_per_round() -> usize {
        EstimatorConfig::default().passes_per_round
    }
    pub fn racing() -> bool {
        EstimatorConfig::default().racing
    }
    pub fn fractions() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }
    pub fn strategy() -> Strategy {
        Strategy::Snv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub scenario: Scenario,
    #[serde(default = "defaults::strategy")]
    pub strategy: Strategy,
    pub output_dir: PathBuf,
    /// Synthetic stream parameters; exclusive with `stream_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamSection>,
    /// Directory of `t<k>_<split>.csv` files to use instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_dir: Option<PathBuf>,
    pub network: NetworkSection,
    pub trainer: TrainerConfig,
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read(path)?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn normalize(&mut self) {
        if self.estimator.truncation_threshold == Some(f64::NEG_INFINITY) {
            self.estimator.truncation_threshold = None;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        match (&self.stream, &self.stream_dir) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "`stream` and `stream_dir` are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config("one of `stream` or `stream_dir` is required".into()))
            }
            _ => {}
        }
        if let Some(s) = &self.stream {
            self.stream_config(s).validate()?;
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(CliError::Config(
                "network.hidden must list at least one positive width".into(),
            ));
        }
        self.trainer.validate()?;
        let est = self.estimator_config();
        est.validate()?;
        if let Some(t) = self.estimator.truncation_threshold {
            if !t.is_finite() {
                return Err(CliError::Config(format!(
                    "estimator.truncation_threshold {t} must be finite or -inf"
                )));
            }
        }
        let n = self.n_neurons();
        if self.strategy == Strategy::Snv && est.budget(n) == 0 {
            return Err(CliError::Config(format!(
                "estimator.capacity_ratio {} selects no neurons out of {n}",
                self.estimator.capacity_ratio
            )));
        }
        let f = &self.analysis.pruning_fractions;
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || f.windows(2).any(|w| w[0] > w[1]) {
            return Err(CliError::Config(
                "analysis.pruning_fractions must be ascending within [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn n_neurons(&self) -> usize {
        self.network.hidden.iter().sum()
    }

    pub fn stream_config(&self, s: &StreamSection) -> StreamConfig {
        StreamConfig {
            n_tasks: s.n_tasks,
            classes_per_task: s.classes_per_task,
            input_dim: s.input_dim,
            samples_per_class: s.samples_per_class,
            blob_spread: s.blob_spread,
            class_separation: s.class_separation,
            seed: derive_seed(self.seed, "data"),
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            capacity_ratio: e.capacity_ratio,
            truncation_threshold: e.truncation_threshold,
            confidence: e.confidence,
            min_samples: e.min_samples,
            max_permutations: e.max_permutations,
            passes_per_round: e.passes_per_round,
            racing: e.racing,
            seed: derive_seed(self.seed, "permutations"),
        }
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            estimator: self.estimator_config(),
            trainer: self.trainer.clone(),
            strategy: self.strategy,
            shuffle_seed: derive_seed(self.seed, "shuffling"),
        }
    }
}
