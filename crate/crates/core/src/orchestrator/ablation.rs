//! Metadata-composition ablation: accuracy per variant for every
//! (model, corpus) unit, paired contrasts against Variant A, and pooled
//! effects per contrast.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{collect_rounds, run_matrix, OrchestratorError, RunReport, RunSpec, DEFAULT_ROUNDS};
use crate::corpus::{Corpus, VariantTag};
use crate::gateway::{Gateway, Ledger, TraceIndex};
use crate::metaanalysis::{
    bootstrap_accuracy, build_contrasts, pool_by_contrast, BootstrapCI, EffectEstimate, PooledEffect,
    DEFAULT_LEVEL, DEFAULT_REPLICATES, DEFAULT_SESOI,
};
use crate::prompting::DEFAULT_THRESHOLD;
use crate::scalar::Real;

pub const DEFAULT_SAMPLE_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub models: Vec<String>,
    pub variants: Vec<VariantTag>,
    pub rounds: u32,
    pub threshold: u8,
    /// Studies drawn per corpus; `None` uses every study.
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub replicates: usize,
    pub level: f64,
    pub sesoi: f64,
    pub max_concurrency: usize,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            variants: VariantTag::ALL.to_vec(),
            rounds: DEFAULT_ROUNDS,
            threshold: DEFAULT_THRESHOLD,
            sample_size: Some(DEFAULT_SAMPLE_SIZE),
            seed: 42,
            replicates: DEFAULT_REPLICATES,
            level: DEFAULT_LEVEL,
            sesoi: DEFAULT_SESOI,
            max_concurrency: 16,
        }
    }
}

impl AblationSpec {
    fn run_spec(&self) -> RunSpec {
        RunSpec {
            models: self.models.clone(),
            variants: self.variants.clone(),
            rounds: self.rounds,
            threshold: self.threshold,
            max_concurrency: self.max_concurrency,
            call_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAccuracy<T> {
    pub unit_id: String,
    pub corpus: String,
    pub model_id: String,
    pub variant: VariantTag,
    pub n: usize,
    pub accuracy: BootstrapCI<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport<T> {
    pub accuracies: Vec<UnitAccuracy<T>>,
    pub effects: Vec<EffectEstimate<T>>,
    pub pooled: BTreeMap<VariantTag, PooledEffect<T>>,
    pub runs: Vec<RunReport>,
    /// Studies eligible under every variant, per unit.
    pub common_studies: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

pub fn unit_id(model_id: &str, corpus: &str) -> String {
    format!("{model_id}@{corpus}")
}

/// The per-corpus study sample used by an ablation.
pub fn ablation_sample(corpus: &Corpus, spec: &AblationSpec) -> Result<Corpus, OrchestratorError> {
    match spec.sample_size {
        Some(n) if n < corpus.len() => Ok(corpus.sample(n, spec.seed)?),
        _ => Ok(corpus.clone()),
    }
}

/// Samples each corpus, runs every (model, variant) over it, then analyzes.
pub async fn run_ablation<T: Real>(
    gateway: &Gateway,
    ledger: &Ledger,
    corpora: &[Corpus],
    spec: &AblationSpec,
) -> Result<AblationReport<T>, OrchestratorError> {
    let mut samples = Vec::with_capacity(corpora.len());
    let mut runs = Vec::with_capacity(corpora.len());
    for corpus in corpora {
        let sample = ablation_sample(corpus, spec)?;
        runs.push(run_matrix(gateway, ledger, &sample, &spec.run_spec()).await?);
        samples.push(sample);
    }
    let mut report = analyze_ablation(&TraceIndex::from(ledger), &samples, spec)?;
    report.runs = runs;
    Ok(report)
}

/// Builds the ablation report from stored traces.
pub fn analyze_ablation<T: Real>(
    index: &TraceIndex,
    samples: &[Corpus],
    spec: &AblationSpec,
) -> Result<AblationReport<T>, OrchestratorError> {
    if !spec.variants.contains(&VariantTag::A) {
        return Err(crate::metaanalysis::MetaError::MissingReference("all units".into()).into());
    }
    let mut accuracies = Vec::new();
    let mut effects = Vec::new();
    let mut common_studies = BTreeMap::new();
    let mut warnings = Vec::new();
    for corpus in samples {
        let common: BTreeSet<&str> = corpus
            .studies
            .iter()
            .filter(|s| s.label.is_some())
            .filter(|s| spec.variants.iter().all(|v| v.variant().missing_field(s).is_none()))
            .map(|s| s.id.as_str())
            .collect();
        let unlabeled = corpus.studies.iter().filter(|s| s.label.is_none()).count();
        if unlabeled > 0 {
            warnings.push(format!("{}: {unlabeled} unlabeled studies left out", corpus.name));
        }
        for model_id in &spec.models {
            let unit = unit_id(model_id, &corpus.name);
            common_studies.insert(unit.clone(), common.len());
            if common.is_empty() {
                warnings.push(format!("{unit}: no study is eligible under every variant"));
                continue;
            }
            let mut correctness: BTreeMap<VariantTag, Vec<T>> = BTreeMap::new();
            for &variant in &spec.variants {
                let rounds = collect_rounds(index, corpus, model_id, variant, spec.rounds, spec.threshold);
                let values: Vec<T> = rounds
                    .iter()
                    .filter(|r| common.contains(r.study_id.as_str()))
                    .map(|r| {
                        let label = corpus.get(&r.study_id).and_then(|s| s.label).expect("labeled");
                        r.correctness(label)
                    })
                    .collect();
                let ci = bootstrap_accuracy(&values, spec.replicates, spec.seed, spec.level)?;
                accuracies.push(UnitAccuracy {
                    unit_id: unit.clone(),
                    corpus: corpus.name.clone(),
                    model_id: model_id.clone(),
                    variant,
                    n: values.len(),
                    accuracy: ci,
                });
                correctness.insert(variant, values);
            }
            effects.extend(build_contrasts(&unit, &correctness, spec.replicates, spec.seed, spec.level)?);
        }
    }
    let pooled = if effects.is_empty() {
        BTreeMap::new()
    } else {
        pool_by_contrast(&effects, T::of(spec.sesoi))?
    };
    Ok(AblationReport {
        accuracies,
        effects,
        pooled,
        runs: Vec::new(),
        common_studies,
        warnings,
    })
}
