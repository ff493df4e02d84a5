//! File-backed review state: machine decisions, the conflict queue,
//! verification samples and an append-only audit log of every change.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DecidedBy, Outcome, ScreeningDecision};
use crate::corpus::Label;

pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const DEFAULT_VERIFICATION_FRACTION: f64 = 0.10;
pub const DEFAULT_OVERTURN_WARNING: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("study {} is already finalized", .current.study_id)]
    AlreadyFinal { current: Box<ScreeningDecision> },
    #[error("study {} changed concurrently (now version {})", .current.study_id, .current.version)]
    VersionMismatch { current: Box<ScreeningDecision> },
    #[error("study {0} appears twice in the decision set")]
    DuplicateStudy(String),
    #[error("verification fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("no auto-decided studies to sample")]
    NothingToSample,
    #[error("study {0} has no final decision to amend")]
    NotFinal(String),
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueKind {
    Conflict,
    Verification,
}

impl std::str::FromStr for QueueKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conflict" => Ok(QueueKind::Conflict),
            "verification" => Ok(QueueKind::Verification),
            other => Err(format!("unknown queue kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerificationVerdict {
    Confirm,
    Overturn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSample {
    pub study_id: String,
    pub sampled_at: DateTime<Utc>,
    pub machine_outcome: Outcome,
    pub human_verdict: Option<VerificationVerdict>,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    VerificationDrawn {
        at: DateTime<Utc>,
        fraction: f64,
        seed: u64,
        study_ids: Vec<String>,
    },
    HumanDecision {
        at: DateTime<Utc>,
        study_id: String,
        queue: QueueKind,
        verdict: Label,
        reviewer: String,
        version: u64,
    },
    Amended {
        at: DateTime<Utc>,
        study_id: String,
        verdict: Label,
        reviewer: String,
        reason: String,
        version: u64,
    },
}

/// Uniform sample without replacement of `ceil(fraction * n)` auto-decided
/// studies, returned in input order.
pub fn draw_verification_sample(
    decisions: &[ScreeningDecision],
    fraction: f64,
    seed: u64,
) -> Result<Vec<VerificationSample>, ReviewError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ReviewError::InvalidFraction(fraction));
    }
    let auto: Vec<&ScreeningDecision> = decisions.iter().filter(|d| d.outcome.is_auto()).collect();
    if auto.is_empty() {
        return Err(ReviewError::NothingToSample);
    }
    let n = ((fraction * auto.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, auto.len(), n.min(auto.len())).into_vec();
    picked.sort_unstable();
    let now = Utc::now();
    Ok(picked
        .into_iter()
        .map(|i| VerificationSample {
            study_id: auto[i].study_id.clone(),
            sampled_at: now,
            machine_outcome: auto[i].outcome,
            human_verdict: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub kind: QueueKind,
    pub position: usize,
    pub decision: ScreeningDecision,
    pub sample: Option<VerificationSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub auto_include: usize,
    pub auto_exclude: usize,
    pub conflicts: usize,
    pub conflicts_pending: usize,
    pub human_decided: usize,
    pub decided: usize,
    pub verification_sampled: usize,
    pub verification_pending: usize,
    pub confirmed: usize,
    pub overturned: usize,
    /// Auto-decided over decided studies.
    pub automation_rate: f64,
    pub conflict_rate: f64,
    /// Overturned over sampled studies.
    pub overturn_rate: f64,
    pub overturn_threshold: f64,
    pub systematic_error_warning: bool,
}

#[derive(Default)]
struct State {
    decisions: Vec<ScreeningDecision>,
    by_id: HashMap<String, usize>,
    samples: Vec<VerificationSample>,
    sample_by_id: HashMap<String, usize>,
    events: usize,
}

impl State {
    fn index(&self, study_id: &str) -> Result<usize, ReviewError> {
        self.by_id
            .get(study_id)
            .copied()
            .ok_or_else(|| ReviewError::UnknownStudy(study_id.to_string()))
    }

    fn push(&mut self, d: ScreeningDecision) -> Result<(), ReviewError> {
        if self.by_id.contains_key(&d.study_id) {
            return Err(ReviewError::DuplicateStudy(d.study_id));
        }
        self.by_id.insert(d.study_id.clone(), self.decisions.len());
        self.decisions.push(d);
        Ok(())
    }

    fn pending_sample(&self, study_id: &str) -> Option<usize> {
        self.sample_by_id
            .get(study_id)
            .copied()
            .filter(|&i| self.samples[i].human_verdict.is_none())
    }

    fn apply(&mut self, event: &ReviewEvent) -> Result<(), ReviewError> {
        match event {
            ReviewEvent::VerificationDrawn { at, study_ids, .. } => {
                for id in study_ids {
                    let d = &self.decisions[self.index(id)?];
                    self.sample_by_id.insert(id.clone(), self.samples.len());
                    self.samples.push(VerificationSample {
                        study_id: id.clone(),
                        sampled_at: *at,
                        machine_outcome: d.outcome,
                        human_verdict: None,
                    });
                }
            }
            ReviewEvent::HumanDecision {
                study_id,
                queue,
                verdict,
                reviewer,
                ..
            } => {
                let i = self.index(study_id)?;
                if *queue == QueueKind::Verification {
                    if let Some(s) = self.pending_sample(study_id) {
                        let machine = self.samples[s].machine_outcome.machine_label();
                        let v = if machine == Some(*verdict) {
                            VerificationVerdict::Confirm
                        } else {
                            VerificationVerdict::Overturn
                        };
                        self.samples[s].human_verdict = Some(v);
                        if v == VerificationVerdict::Confirm {
                            self.decisions[i].version += 1;
                            self.events += 1;
                            return Ok(());
                        }
                    }
                }
                let d = &mut self.decisions[i];
                d.final_label = Some(*verdict);
                d.decided_by = Some(DecidedBy::Human {
                    reviewer: reviewer.clone(),
                });
                d.version += 1;
            }
            ReviewEvent::Amended {
                study_id,
                verdict,
                reviewer,
                ..
            } => {
                let i = self.index(study_id)?;
                let d = &mut self.decisions[i];
                d.final_label = Some(*verdict);
                d.decided_by = Some(DecidedBy::Human {
                    reviewer: reviewer.clone(),
                });
                d.version += 1;
            }
        }
        self.events += 1;
        Ok(())
    }
}

/// Shared review state. All mutations serialize behind one lock and are
/// appended to the audit log before they take effect.
pub struct ReviewStore {
    dir: PathBuf,
    state: Mutex<State>,
    overturn_threshold: f64,
}

impl std::fmt::Debug for ReviewStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewStore").field("dir", &self.dir).finish()
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReviewError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReviewError::Corrupt {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ReviewError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

impl ReviewStore {
    /// Opens the store in `dir`, enqueuing any decision whose study is not
    /// already present. Calling it again with the same decisions is a no-op.
    pub fn create(dir: &Path, decisions: &[ScreeningDecision]) -> Result<Self, ReviewError> {
        let mut seen = HashSet::new();
        for d in decisions {
            if !seen.insert(d.study_id.as_str()) {
                return Err(ReviewError::DuplicateStudy(d.study_id.clone()));
            }
        }
        fs::create_dir_all(dir)?;
        let store = Self::open(dir)?;
        {
            let mut state = store.state.lock().expect("review lock");
            let fresh: Vec<ScreeningDecision> = decisions
                .iter()
                .filter(|d| !state.by_id.contains_key(&d.study_id))
                .cloned()
                .collect();
            append_jsonl(&dir.join(DECISIONS_FILE), &fresh)?;
            for d in fresh {
                state.push(d)?;
            }
        }
        Ok(store)
    }

    /// Rebuilds state from the decision file and audit log in `dir`.
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        let mut state = State::default();
        for d in read_jsonl::<ScreeningDecision>(&dir.join(DECISIONS_FILE))? {
            state.push(d)?;
        }
        for e in read_jsonl::<ReviewEvent>(&dir.join(AUDIT_FILE))? {
            state.apply(&e)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            state: Mutex::new(state),
            overturn_threshold: DEFAULT_OVERTURN_WARNING,
        })
    }

    pub fn with_overturn_threshold(mut self, threshold: f64) -> Self {
        self.overturn_threshold = threshold;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn commit(&self, state: &mut State, event: ReviewEvent) -> Result<(), ReviewError> {
        append_jsonl(&self.dir.join(AUDIT_FILE), std::slice::from_ref(&event))?;
        state.apply(&event)
    }

    pub fn decision(&self, study_id: &str) -> Option<ScreeningDecision> {
        let state = self.state.lock().expect("review lock");
        state.by_id.get(study_id).map(|&i| state.decisions[i].clone())
    }

    pub fn decisions(&self) -> Vec<ScreeningDecision> {
        self.state.lock().expect("review lock").decisions.clone()
    }

    pub fn samples(&self) -> Vec<VerificationSample> {
        self.state.lock().expect("review lock").samples.clone()
    }

    pub fn sample(&self, study_id: &str) -> Option<VerificationSample> {
        let state = self.state.lock().expect("review lock");
        state.sample_by_id.get(study_id).map(|&i| state.samples[i].clone())
    }

    pub fn audit_events(&self) -> usize {
        self.state.lock().expect("review lock").events
    }

    /// Draws the verification sample once; later calls return it unchanged.
    pub fn draw_verification(&self, fraction: f64, seed: u64) -> Result<Vec<VerificationSample>, ReviewError> {
        let mut state = self.state.lock().expect("review lock");
        if !state.samples.is_empty() {
            return Ok(state.samples.clone());
        }
        let drawn = draw_verification_sample(&state.decisions, fraction, seed)?;
        let event = ReviewEvent::VerificationDrawn {
            at: Utc::now(),
            fraction,
            seed,
            study_ids: drawn.iter().map(|s| s.study_id.clone()).collect(),
        };
        self.commit(&mut state, event)?;
        Ok(state.samples.clone())
    }

    /// Pending items of one queue in corpus order.
    pub fn queue(&self, kind: QueueKind) -> Vec<QueueItem> {
        let state = self.state.lock().expect("review lock");
        let items: Vec<(ScreeningDecision, Option<VerificationSample>)> = match kind {
            QueueKind::Conflict => state
                .decisions
                .iter()
                .filter(|d| d.outcome == Outcome::Conflict && d.is_pending())
                .map(|d| (d.clone(), None))
                .collect(),
            QueueKind::Verification => state
                .samples
                .iter()
                .filter(|s| s.human_verdict.is_none())
                .map(|s| (state.decisions[state.by_id[&s.study_id]].clone(), Some(s.clone())))
                .collect(),
        };
        items
            .into_iter()
            .enumerate()
            .map(|(position, (decision, sample))| QueueItem {
                kind,
                position,
                decision,
                sample,
            })
            .collect()
    }

    /// Records a reviewer verdict on a pending conflict or verification
    /// sample. With `expected_version`, the write only succeeds if the study
    /// has not changed since the caller read it.
    pub fn record_human_decision(
        &self,
        study_id: &str,
        verdict: Label,
        reviewer: &str,
        expected_version: Option<u64>,
    ) -> Result<ScreeningDecision, ReviewError> {
        let mut state = self.state.lock().expect("review lock");
        let i = state.index(study_id)?;
        let current = &state.decisions[i];
        if expected_version.is_some_and(|v| v != current.version) {
            return Err(ReviewError::VersionMismatch {
                current: Box::new(current.clone()),
            });
        }
        let queue = if current.outcome == Outcome::Conflict && current.is_pending() {
            QueueKind::Conflict
        } else if state.pending_sample(study_id).is_some() {
            QueueKind::Verification
        } else {
            return Err(ReviewError::AlreadyFinal {
                current: Box::new(current.clone()),
            });
        };
        let event = ReviewEvent::HumanDecision {
            at: Utc::now(),
            study_id: study_id.to_string(),
            queue,
            verdict,
            reviewer: reviewer.to_string(),
            version: current.version + 1,
        };
        self.commit(&mut state, event)?;
        Ok(state.decisions[i].clone())
    }

    /// Explicitly replaces a final decision.
    pub fn amend(
        &self,
        study_id: &str,
        verdict: Label,
        reviewer: &str,
        reason: &str,
    ) -> Result<ScreeningDecision, ReviewError> {
        let mut state = self.state.lock().expect("review lock");
        let i = state.index(study_id)?;
        if state.decisions[i].is_pending() {
            return Err(ReviewError::NotFinal(study_id.to_string()));
        }
        let event = ReviewEvent::Amended {
            at: Utc::now(),
            study_id: study_id.to_string(),
            verdict,
            reviewer: reviewer.to_string(),
            reason: reason.to_string(),
            version: state.decisions[i].version + 1,
        };
        self.commit(&mut state, event)?;
        Ok(state.decisions[i].clone())
    }

    pub fn progress(&self) -> Progress {
        let state = self.state.lock().expect("review lock");
        let count = |o: Outcome| state.decisions.iter().filter(|d| d.outcome == o).count();
        let (auto_include, auto_exclude, conflicts) =
            (count(Outcome::AutoInclude), count(Outcome::AutoExclude), count(Outcome::Conflict));
        let conflicts_pending = state
            .decisions
            .iter()
            .filter(|d| d.outcome == Outcome::Conflict && d.is_pending())
            .count();
        let verdicts = |v: VerificationVerdict| {
            state
                .samples
                .iter()
                .filter(|s| s.human_verdict == Some(v))
                .count()
        };
        let (confirmed, overturned) = (
            verdicts(VerificationVerdict::Confirm),
            verdicts(VerificationVerdict::Overturn),
        );
        let human_decided = conflicts - conflicts_pending;
        let decided = auto_include + auto_exclude + human_decided;
        let total = state.decisions.len();
        let sampled = state.samples.len();
        let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let overturn_rate = rate(overturned, sampled);
        Progress {
            total,
            auto_include,
            auto_exclude,
            conflicts,
            conflicts_pending,
            human_decided,
            decided,
            verification_sampled: sampled,
            verification_pending: sampled - confirmed - overturned,
            confirmed,
            overturned,
            automation_rate: rate(auto_include + auto_exclude, decided),
            conflict_rate: rate(conflicts, total),
            overturn_rate,
            overturn_threshold: self.overturn_threshold,
            systematic_error_warning: overturn_rate > self.overturn_threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VariantTag;
    use crate::orchestrator::{AggregationRule, RoundDecision};

    fn decision(id: &str, outcome: Outcome) -> ScreeningDecision {
        let r = match outcome {
            Outcome::AutoInclude => vec![RoundDecision::Include; 5],
            Outcome::AutoExclude => vec![RoundDecision::Exclude; 5],
            Outcome::Conflict => vec![
                RoundDecision::Include,
                RoundDecision::Exclude,
                RoundDecision::Include,
                RoundDecision::Include,
                RoundDecision::Include,
            ],
        };
        ScreeningDecision {
            study_id: id.into(),
            model_id: "m".into(),
            variant: VariantTag::C,
            per_round_decisions: r,
            scores: vec![vec![Some(5), Some(6)]; 5],
            aggregation_rule: AggregationRule::Unanimity,
            outcome,
            decided_by: outcome.is_auto().then_some(DecidedBy::Machine),
            final_label: outcome.machine_label(),
            version: 0,
        }
    }

    #[test]
    fn sample_size_is_ceiling() {
        let ds: Vec<_> = (0..200).map(|i| decision(&format!("s{i}"), Outcome::AutoExclude)).collect();
        assert_eq!(draw_verification_sample(&ds, 0.1, 1).unwrap().len(), 20);
        assert_eq!(draw_verification_sample(&ds, 1.0, 1).unwrap().len(), 200);
        assert_eq!(draw_verification_sample(&ds[..7], 0.1, 1).unwrap().len(), 1);
        let ids = |seed| -> Vec<String> {
            draw_verification_sample(&ds, 0.1, seed)
                .unwrap()
                .into_iter()
                .map(|s| s.study_id)
                .collect()
        };
        assert_eq!(ids(5), ids(5));
        assert_ne!(ids(5), ids(6));
        assert!(matches!(
            draw_verification_sample(&ds, 0.0, 1),
            Err(ReviewError::InvalidFraction(_))
        ));
        assert!(matches!(
            draw_verification_sample(&[decision("c", Outcome::Conflict)], 0.5, 1),
            Err(ReviewError::NothingToSample)
        ));
    }
}
