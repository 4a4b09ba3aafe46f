//! Run configuration: one JSON file plus command-line overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use fairaudit_client::ModelConfig;
use fairaudit_core::aggregate::Granularity;
use fairaudit_core::metrics::{AccuracyScope, EvaluationOptions, RobustnessVariant};
use fairaudit_core::outcome_parser::SentenceEncoding;
use fairaudit_core::report::{HeatmapPalette, ReportOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

fn default_sample_n() -> usize {
    1100
}

fn default_variants() -> Vec<RobustnessVariant> {
    RobustnessVariant::ALL.to_vec()
}

fn default_taus() -> Vec<f64> {
    vec![0.1, 0.05]
}

/// Everything a pipeline run needs. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Report directory name; defaults to a digest of the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub corpus_path: PathBuf,
    pub catalog_path: PathBuf,
    /// Built-in template when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_path: Option<PathBuf>,
    pub models: Vec<ModelConfig>,
    #[serde(default = "default_sample_n")]
    pub sample_n: usize,
    pub seed: u64,
    /// Every model is queried at each of these; empty keeps each model's own.
    #[serde(default)]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<RobustnessVariant>,
    #[serde(default = "default_taus")]
    pub tau_list: Vec<f64>,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub encoding: SentenceEncoding,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub accuracy_scope: AccuracyScope,
    #[serde(default)]
    pub palette: HeatmapPalette,
    /// Synthetic judge for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_config_path: Option<PathBuf>,
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Keep only these model ids.
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub variants: Vec<RobustnessVariant>,
    pub taus: Vec<f64>,
}

/// One judged (model, temperature) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Judge {
    pub name: String,
    pub model: ModelConfig,
}

/// Config with its location, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses config text, checking the schema version before anything else.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        match raw.get("schema_version") {
            None => return Err(CliError::Config("missing field `schema_version`".into())),
            Some(v) if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) => {
                return Err(CliError::Config(format!(
                    "schema_version {v} is not supported; expected {SCHEMA_VERSION}"
                )))
            }
            Some(_) => {}
        }
        serde_json::from_value(raw).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if !o.models.is_empty() {
            let known: BTreeSet<&str> = self.models.iter().map(|m| m.model_id.as_str()).collect();
            if let Some(m) = o.models.iter().find(|m| !known.contains(m.as_str())) {
                return Err(CliError::Config(format!("--model `{m}` is not in the config")));
            }
            self.models.retain(|m| o.models.contains(&m.model_id));
        }
        if !o.temperatures.is_empty() {
            self.temperatures = o.temperatures.clone();
        }
        if !o.variants.is_empty() {
            self.variants = o.variants.clone();
        }
        if !o.taus.is_empty() {
            self.tau_list = o.taus.clone();
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.sample_n == 0 {
            return bad("sample_n must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("models: at least one model is required".into());
        }
        for m in &self.models {
            m.validate().map_err(|e| CliError::Config(format!("models: {e}")))?;
        }
        if let Some(t) = self.temperatures.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return bad(format!("temperatures: {t} is not a non-negative number"));
        }
        if self.variants.is_empty() {
            return bad("variants: at least one variant is required".into());
        }
        if self.tau_list.is_empty() {
            return bad("tau_list: at least one threshold is required".into());
        }
        if let Some(t) = self.tau_list.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return bad(format!("tau_list: {t} is outside (0, 1)"));
        }
        self.encoding.validate().map_err(|e| CliError::Config(format!("encoding: {e}")))?;
        let mut seen = BTreeSet::new();
        for j in self.judges() {
            if !seen.insert(j.name.clone()) {
                return bad(format!("models: judge `{}` is listed twice", j.name));
            }
        }
        Ok(())
    }

    /// Judged pairs in config order, temperatures innermost.
    pub fn judges(&self) -> Vec<Judge> {
        let pairs: Vec<ModelConfig> = self
            .models
            .iter()
            .flat_map(|m| {
                if self.temperatures.is_empty() {
                    vec![m.clone()]
                } else {
                    self.temperatures
                        .iter()
                        .map(|&t| ModelConfig { temperature: t, ..m.clone() })
                        .collect()
                }
            })
            .collect();
        let mut temps: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
        for m in &pairs {
            temps.entry(&m.model_id).or_default().insert(m.temperature.to_bits());
        }
        let annotate = temps.values().any(|t| t.len() > 1);
        pairs
            .iter()
            .map(|m| Judge {
                name: if annotate {
                    format!("{} [T={}]", m.model_id, m.temperature)
                } else {
                    m.model_id.clone()
                },
                model: m.clone(),
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.digest()[..12].to_string())
    }

    pub fn primary_variant(&self) -> RobustnessVariant {
        if self.variants.contains(&RobustnessVariant::Main) {
            RobustnessVariant::Main
        } else {
            self.variants[0]
        }
    }

    pub fn evaluation_options(&self) -> EvaluationOptions {
        EvaluationOptions {
            variants: self.variants.clone(),
            encoding: self.encoding.clone(),
            accuracy_scope: self.accuracy_scope,
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            primary_variant: self.primary_variant(),
            variants: self.variants.clone(),
            taus: self.tau_list.clone(),
            granularity: self.granularity,
            palette: self.palette.clone(),
        }
    }
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::from_json(&text)?;
        config.apply(overrides)?;
        config.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn new(config: RunConfig, base_dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        config.validate()?;
        Ok(Self { config, base_dir: base_dir.into() })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir).join("reports").join(self.config.run_id())
    }
}
