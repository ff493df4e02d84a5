//! TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use screening_core::classical::Hyperparameters;
use screening_core::corpus::{ColumnMapping, InputFormat, VariantTag};
use screening_core::gateway::ProviderConfig;
use screening_core::metaanalysis::{DEFAULT_LEVEL, DEFAULT_REPLICATES, DEFAULT_SESOI};
use screening_core::orchestrator::ablation::DEFAULT_SAMPLE_SIZE;
use screening_core::orchestrator::store::{DEFAULT_OVERTURN_WARNING, DEFAULT_VERIFICATION_FRACTION};
use screening_core::orchestrator::{AggregationRule, DEFAULT_ROUNDS};
use screening_core::prompting::DEFAULT_THRESHOLD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOKEN_ENV: &str = "SLR_SCREEN_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: InputFormat,
    #[serde(default)]
    pub name: Option<String>,
    pub criteria: Vec<String>,
    #[serde(default)]
    pub mapping: ColumnMapping,
}

fn default_format() -> InputFormat {
    InputFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub sample_size: Option<usize>,
    pub replicates: usize,
    pub level: f64,
    pub sesoi: f64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            sample_size: Some(DEFAULT_SAMPLE_SIZE),
            replicates: DEFAULT_REPLICATES,
            level: DEFAULT_LEVEL,
            sesoi: DEFAULT_SESOI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub train_size: usize,
    pub folds: usize,
    pub replicates: usize,
    pub hyperparameters: Hyperparameters,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            train_size: 50,
            folds: 4,
            replicates: DEFAULT_REPLICATES,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSource,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    /// Model ids to run; empty selects every configured model.
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_threshold")]
    pub threshold: u8,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantTag>,
    #[serde(default)]
    pub rule: AggregationRule,
    #[serde(default = "default_fraction")]
    pub verification_fraction: f64,
    #[serde(default = "default_overturn")]
    pub overturn_warning: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ablation: AblationSettings,
    #[serde(default)]
    pub baseline: BaselineSettings,
    /// Built review UI assets served under `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

fn default_rounds() -> u32 {
    DEFAULT_ROUNDS
}
fn default_threshold() -> u8 {
    DEFAULT_THRESHOLD
}
fn default_variants() -> Vec<VariantTag> {
    vec![VariantTag::C]
}
fn default_fraction() -> f64 {
    DEFAULT_VERIFICATION_FRACTION
}
fn default_overturn() -> f64 {
    DEFAULT_OVERTURN_WARNING
}
fn default_seed() -> u64 {
    42
}
fn default_concurrency() -> usize {
    16
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus.path);
        join(&mut self.output_dir);
        for p in &mut self.providers {
            if let Some(script) = p.mock_script.as_mut() {
                join(script);
            }
        }
        if let Some(dir) = self.static_dir.as_mut() {
            join(dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.corpus.criteria.is_empty() {
            return invalid("corpus.criteria must list at least one inclusion criterion".into());
        }
        if self.rounds == 0 {
            return invalid("rounds must be at least 1".into());
        }
        if !(1..=7).contains(&self.threshold) {
            return invalid(format!("threshold {} is outside the 1-7 scale", self.threshold));
        }
        if let AggregationRule::Threshold(k) = self.rule {
            if k > self.rounds {
                return invalid(format!("rule threshold:{k} exceeds rounds = {}", self.rounds));
            }
        }
        if self.variants.is_empty() {
            return invalid("variants must not be empty".into());
        }
        if !(self.verification_fraction > 0.0 && self.verification_fraction <= 1.0) {
            return invalid(format!("verification_fraction {} must be in (0, 1]", self.verification_fraction));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.providers {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !seen.insert(&p.model_id) {
                return invalid(format!("model {} is configured twice", p.model_id));
            }
        }
        for m in &self.models {
            if !seen.contains(m) {
                return invalid(format!("model {m} is not among the configured providers"));
            }
        }
        Ok(())
    }

    pub fn corpus_name(&self) -> String {
        self.corpus.name.clone().unwrap_or_else(|| {
            self.corpus
                .path
                .file_stem()
                .map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned())
        })
    }

    pub fn selected_models(&self) -> Vec<String> {
        if self.models.is_empty() {
            self.providers.iter().map(|p| p.model_id.clone()).collect()
        } else {
            self.models.clone()
        }
    }

    /// Providers for the selected models only.
    pub fn selected_providers(&self) -> Vec<ProviderConfig> {
        let models = self.selected_models();
        self.providers
            .iter()
            .filter(|p| models.contains(&p.model_id))
            .cloned()
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        rule = "majority"
        variants = ["A", "E"]

        [corpus]
        path = "studies.csv"
        criteria = ["automated screening?", "quantitative results?"]

        [[providers]]
        provider_name = "mock"
        kind = "mock"
        model_id = "m"
        mock_script = "script.toml"
    "#;

    #[test]
    fn parses_resolves_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.rule, AggregationRule::Majority);
        assert_eq!(c.rounds, 5);
        assert_eq!(c.corpus.path, dir.path().join("studies.csv"));
        assert_eq!(c.providers[0].mock_script.as_deref(), Some(dir.path().join("script.toml").as_path()));
        assert_eq!(c.corpus_name(), "studies");
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let mut c: RunConfig = toml::from_str(MINIMAL).unwrap();
        c.rule = AggregationRule::Threshold(6);
        assert!(c.validate().is_err());
        c.rule = AggregationRule::Unanimity;
        c.models = vec!["other".into()];
        assert!(c.validate().is_err());
        assert!(toml::from_str::<RunConfig>("rounds = 3").is_err());
    }
}
