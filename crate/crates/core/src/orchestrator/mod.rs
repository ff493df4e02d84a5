//! Experiment-matrix execution, round aggregation and the human review
//! workflow built on top of it.

pub mod ablation;
pub mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{
    draw_verification_sample, Progress, QueueItem, QueueKind, ReviewError, ReviewEvent, ReviewStore,
    VerificationSample, VerificationVerdict,
};

use crate::corpus::{Corpus, CorpusError, Label, VariantTag};
use crate::evaluation::{self, gwet_ac2, AgreementReport, ConfusionCounts, EvalError, WeightScheme};
use crate::gateway::{Gateway, GatewayError, Ledger, TraceIndex, TraceKey, TraceOutcome};
use crate::prompting::{build_prompt, decide, Decision, LikertScore, PromptError, DEFAULT_THRESHOLD};
use crate::scalar::Real;

pub const DEFAULT_ROUNDS: u32 = 5;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no round decisions to aggregate")]
    NoRounds,
    #[error("threshold {k} exceeds the {rounds} available rounds")]
    ThresholdTooLarge { k: u32, rounds: usize },
    #[error("unknown aggregation rule {0:?}; expected unanimity, majority or threshold:k")]
    InvalidRule(String),
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error("no models selected")]
    NoModels,
    #[error("no variants selected")]
    NoVariants,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Meta(#[from] crate::metaanalysis::MetaError),
    #[error(transparent)]
    Review(#[from] ReviewError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundDecision {
    Include,
    Exclude,
    /// A criterion score was missing or unreadable in this round.
    Invalid,
}

impl From<Decision> for RoundDecision {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Include => RoundDecision::Include,
            Decision::Exclude => RoundDecision::Exclude,
        }
    }
}

impl RoundDecision {
    pub fn label(self) -> Option<Label> {
        match self {
            RoundDecision::Include => Some(Label::Included),
            RoundDecision::Exclude => Some(Label::Excluded),
            RoundDecision::Invalid => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AggregationRule {
    #[default]
    Unanimity,
    Majority,
    /// At least `k` agreeing rounds and no invalid round.
    Threshold(u32),
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationRule::Unanimity => f.write_str("unanimity"),
            AggregationRule::Majority => f.write_str("majority"),
            AggregationRule::Threshold(k) => write!(f, "threshold:{k}"),
        }
    }
}

impl FromStr for AggregationRule {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "unanimity" | "unanimous" => Ok(AggregationRule::Unanimity),
            "majority" => Ok(AggregationRule::Majority),
            _ => s
                .strip_prefix("threshold:")
                .or_else(|| s.strip_prefix("threshold="))
                .and_then(|k| k.trim().parse().ok())
                .filter(|k| *k > 0)
                .map(AggregationRule::Threshold)
                .ok_or(OrchestratorError::InvalidRule(s.clone())),
        }
    }
}

impl Serialize for AggregationRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AggregationRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    AutoInclude,
    AutoExclude,
    Conflict,
}

impl Outcome {
    pub fn is_auto(self) -> bool {
        self != Outcome::Conflict
    }

    pub fn machine_label(self) -> Option<Label> {
        match self {
            Outcome::AutoInclude => Some(Label::Included),
            Outcome::AutoExclude => Some(Label::Excluded),
            Outcome::Conflict => None,
        }
    }
}

pub fn aggregate(rounds: &[RoundDecision], rule: AggregationRule) -> Result<Outcome, OrchestratorError> {
    if rounds.is_empty() {
        return Err(OrchestratorError::NoRounds);
    }
    if let AggregationRule::Threshold(k) = rule {
        if k as usize > rounds.len() {
            return Err(OrchestratorError::ThresholdTooLarge {
                k,
                rounds: rounds.len(),
            });
        }
    }
    if rounds.contains(&RoundDecision::Invalid) {
        return Ok(Outcome::Conflict);
    }
    let inc = rounds.iter().filter(|r| **r == RoundDecision::Include).count();
    let exc = rounds.len() - inc;
    Ok(match rule {
        AggregationRule::Unanimity if exc == 0 => Outcome::AutoInclude,
        AggregationRule::Unanimity if inc == 0 => Outcome::AutoExclude,
        AggregationRule::Majority if inc > exc => Outcome::AutoInclude,
        AggregationRule::Majority if exc > inc => Outcome::AutoExclude,
        AggregationRule::Threshold(k) => {
            let k = k as usize;
            match (inc >= k, exc >= k) {
                (true, false) => Outcome::AutoInclude,
                (false, true) => Outcome::AutoExclude,
                _ => Outcome::Conflict,
            }
        }
        _ => Outcome::Conflict,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "lowercase")]
pub enum DecidedBy {
    Machine,
    Human { reviewer: String },
}

/// One study's screening state under an operational configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningDecision {
    pub study_id: String,
    pub model_id: String,
    pub variant: VariantTag,
    pub per_round_decisions: Vec<RoundDecision>,
    /// Evidence: `scores[round][criterion]`, `None` where unreadable.
    pub scores: Vec<Vec<Option<u8>>>,
    pub aggregation_rule: AggregationRule,
    pub outcome: Outcome,
    pub decided_by: Option<DecidedBy>,
    #[serde(rename = "final")]
    pub final_label: Option<Label>,
    /// Incremented on every state change; used for compare-and-set.
    pub version: u64,
}

impl ScreeningDecision {
    pub fn from_rounds(rounds: &StudyRounds, rule: AggregationRule) -> Result<Self, OrchestratorError> {
        let outcome = aggregate(&rounds.decisions, rule)?;
        Ok(Self {
            study_id: rounds.study_id.clone(),
            model_id: rounds.model_id.clone(),
            variant: rounds.variant,
            per_round_decisions: rounds.decisions.clone(),
            scores: rounds.scores.clone(),
            aggregation_rule: rule,
            outcome,
            decided_by: outcome.is_auto().then_some(DecidedBy::Machine),
            final_label: outcome.machine_label(),
            version: 0,
        })
    }

    pub fn is_pending(&self) -> bool {
        self.final_label.is_none()
    }
}

/// Per-round decisions of one study under one (model, variant).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRounds {
    pub study_id: String,
    pub model_id: String,
    pub variant: VariantTag,
    pub decisions: Vec<RoundDecision>,
    pub scores: Vec<Vec<Option<u8>>>,
}

impl StudyRounds {
    /// Fraction of rounds whose decision matches `label`; invalid rounds
    /// count as wrong.
    pub fn correctness<T: Real>(&self, label: Label) -> T {
        let hits = self.decisions.iter().filter(|d| d.label() == Some(label)).count();
        T::of_usize(hits) / T::of_usize(self.decisions.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub models: Vec<String>,
    pub variants: Vec<VariantTag>,
    pub rounds: u32,
    pub threshold: u8,
    /// Prompt executions in flight across all models.
    pub max_concurrency: usize,
    /// Stop after this many fresh provider-backed traces.
    pub call_budget: Option<usize>,
}

impl RunSpec {
    pub fn new(models: Vec<String>, variants: Vec<VariantTag>, rounds: u32) -> Self {
        Self {
            models,
            variants,
            rounds,
            threshold: DEFAULT_THRESHOLD,
            max_concurrency: 16,
            call_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedStudy {
    pub study_id: String,
    pub variant: VariantTag,
    pub missing_field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub corpus: String,
    pub models: Vec<String>,
    pub variants: Vec<VariantTag>,
    pub rounds: u32,
    pub criteria: usize,
    pub expected_traces: usize,
    pub traces_present: usize,
    pub fresh_traces: usize,
    pub reused_traces: usize,
    pub interrupted: bool,
    pub skipped: Vec<SkippedStudy>,
    pub parse_failures: Vec<TraceKey>,
    pub provider_failures: Vec<TraceKey>,
}

impl RunReport {
    pub fn complete(&self) -> bool {
        !self.interrupted && self.traces_present == self.expected_traces
    }
}

struct Job<'a> {
    model_id: &'a str,
    prompt: crate::prompting::PromptInstance,
    round: u32,
}

/// Issues every (study, criterion, model, variant, round) prompt that the
/// ledger does not already hold. Studies lacking a field required by a
/// variant are skipped for that variant. Provider failures become traces;
/// only configuration and ledger failures abort.
pub async fn run_matrix(
    gateway: &Gateway,
    ledger: &Ledger,
    corpus: &Corpus,
    spec: &RunSpec,
) -> Result<RunReport, OrchestratorError> {
    if spec.rounds == 0 {
        return Err(OrchestratorError::ZeroRounds);
    }
    if spec.models.is_empty() {
        return Err(OrchestratorError::NoModels);
    }
    if spec.variants.is_empty() {
        return Err(OrchestratorError::NoVariants);
    }
    for m in &spec.models {
        if gateway.config(m).is_none() {
            return Err(GatewayError::UnknownModel(m.clone()).into());
        }
    }

    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for &tag in &spec.variants {
        let (eligible, missing) = corpus.partition_by_variant(tag.variant());
        skipped.extend(missing.into_iter().map(|(study_id, field)| SkippedStudy {
            study_id,
            variant: tag,
            missing_field: field.to_string(),
        }));
        for model_id in &spec.models {
            for study in &eligible {
                for (c, text) in corpus.inclusion_criteria.iter().enumerate() {
                    let prompt = build_prompt(study, c, text, tag.variant())?;
                    for round in 1..=spec.rounds {
                        jobs.push(Job {
                            model_id,
                            prompt: prompt.clone(),
                            round,
                        });
                    }
                }
            }
        }
    }
    let expected = jobs.len();

    let fresh = AtomicUsize::new(0);
    let reserved = AtomicUsize::new(0);
    let budget = spec.call_budget.unwrap_or(usize::MAX);
    let outcomes: Vec<Option<(TraceKey, TraceOutcome)>> = stream::iter(jobs)
        .map(|job| {
            let (fresh, reserved) = (&fresh, &reserved);
            async move {
                let key = TraceKey {
                    study_id: job.prompt.study_id.clone(),
                    criterion_index: job.prompt.criterion_index,
                    model_id: job.model_id.to_string(),
                    variant: job.prompt.variant.tag(),
                    round_index: job.round,
                };
                if let Some(t) = ledger.get(&key) {
                    return Ok::<_, OrchestratorError>(Some((key, t.parsed)));
                }
                if reserved.fetch_add(1, Ordering::SeqCst) >= budget {
                    return Ok(None);
                }
                let cached = gateway
                    .complete_cached(ledger, job.model_id, &job.prompt, job.round)
                    .await?;
                if cached.fresh {
                    fresh.fetch_add(1, Ordering::SeqCst);
                }
                Ok(Some((key, cached.trace.parsed)))
            }
        })
        .buffered(spec.max_concurrency.max(1))
        .try_collect()
        .await?;

    let mut parse_failures = Vec::new();
    let mut provider_failures = Vec::new();
    let mut present = 0;
    for (key, outcome) in outcomes.iter().flatten() {
        present += 1;
        match outcome {
            TraceOutcome::Score { .. } => {}
            TraceOutcome::ParseError { .. } => parse_failures.push(key.clone()),
            TraceOutcome::ProviderError { .. } => provider_failures.push(key.clone()),
        }
    }
    let fresh = fresh.into_inner();
    Ok(RunReport {
        corpus: corpus.name.clone(),
        models: spec.models.clone(),
        variants: spec.variants.clone(),
        rounds: spec.rounds,
        criteria: corpus.inclusion_criteria.len(),
        expected_traces: expected,
        traces_present: present,
        fresh_traces: fresh,
        reused_traces: present - fresh,
        interrupted: present < expected,
        skipped,
        parse_failures,
        provider_failures,
    })
}

/// Combines criterion scores into one decision per round for every study
/// eligible under `variant`. Missing or unreadable scores make the round
/// invalid.
pub fn collect_rounds(
    index: &TraceIndex,
    corpus: &Corpus,
    model_id: &str,
    variant: VariantTag,
    rounds: u32,
    threshold: u8,
) -> Vec<StudyRounds> {
    let (eligible, _) = corpus.partition_by_variant(variant.variant());
    let n_criteria = corpus.inclusion_criteria.len();
    eligible
        .into_iter()
        .map(|study| {
            let mut decisions = Vec::with_capacity(rounds as usize);
            let mut scores = Vec::with_capacity(rounds as usize);
            for round in 1..=rounds {
                let row: Vec<Option<LikertScore>> = (0..n_criteria)
                    .map(|c| {
                        index
                            .get(&TraceKey {
                                study_id: study.id.clone(),
                                criterion_index: c,
                                model_id: model_id.to_string(),
                                variant,
                                round_index: round,
                            })
                            .and_then(|t| t.parsed.score())
                    })
                    .collect();
                let decision = match row.iter().copied().collect::<Option<Vec<_>>>() {
                    Some(s) => decide(&s, threshold).map_or(RoundDecision::Invalid, Into::into),
                    None => RoundDecision::Invalid,
                };
                decisions.push(decision);
                scores.push(row.iter().map(|s| s.map(LikertScore::value)).collect());
            }
            StudyRounds {
                study_id: study.id.clone(),
                model_id: model_id.to_string(),
                variant,
                decisions,
                scores,
            }
        })
        .collect()
}

pub fn screening_decisions(
    rounds: &[StudyRounds],
    rule: AggregationRule,
) -> Result<Vec<ScreeningDecision>, OrchestratorError> {
    rounds.iter().map(|r| ScreeningDecision::from_rounds(r, rule)).collect()
}

/// Accuracy and related metrics of one round across studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics<T> {
    pub round: u32,
    pub counts: ConfusionCounts,
    pub invalid: usize,
    pub metrics: evaluation::Metrics<T>,
}

/// Per-round metrics; invalid rounds are scored as Excluded and counted.
pub fn round_metrics<T: Real>(
    rounds: &[StudyRounds],
    corpus: &Corpus,
) -> Result<Vec<RoundMetrics<T>>, OrchestratorError> {
    let n_rounds = rounds.first().map_or(0, |r| r.decisions.len());
    (0..n_rounds)
        .map(|r| {
            let mut counts = ConfusionCounts::default();
            let mut invalid = 0;
            for s in rounds {
                let label = corpus
                    .get(&s.study_id)
                    .and_then(|st| st.label)
                    .ok_or(EvalError::MissingLabel(r))?;
                let pred = s.decisions[r].label().unwrap_or_else(|| {
                    invalid += 1;
                    Label::Excluded
                });
                counts.record(pred, label);
            }
            Ok(RoundMetrics {
                round: r as u32 + 1,
                counts,
                invalid,
                metrics: evaluation::metrics(&counts)?,
            })
        })
        .collect()
}

/// AC2 across rounds (raters) for each criterion, studies as subjects.
pub fn agreement_by_criterion<T: Real>(
    rounds: &[StudyRounds],
    n_criteria: usize,
    scheme: WeightScheme,
) -> Result<BTreeMap<usize, AgreementReport<T>>, OrchestratorError> {
    (0..n_criteria)
        .map(|c| {
            let matrix: Vec<Vec<Option<u8>>> = rounds
                .iter()
                .map(|s| s.scores.iter().map(|row| row[c]).collect())
                .collect();
            Ok((c, gwet_ac2(&matrix, LikertScore::MAX as usize, scheme)?))
        })
        .collect()
}
