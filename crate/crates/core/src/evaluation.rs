//! Classification metrics against reference labels, the constant-Excluded
//! baseline, and Gwet's AC2 agreement across repeated rounds.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("reference label missing at position {0}")]
    MissingLabel(usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("agreement needs at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("rating {value} at subject {subject} is outside 1..={categories}")]
    InvalidCategory {
        subject: usize,
        value: u8,
        categories: usize,
    },
    #[error("no subject has two or more ratings")]
    NoPairs,
    #[error("chance agreement is 1; AC2 undefined")]
    DegenerateChance,
}

/// Confusion counts with Included as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Included, Label::Included) => self.tp += 1,
            (Label::Included, Label::Excluded) => self.fp += 1,
            (Label::Excluded, Label::Excluded) => self.tn += 1,
            (Label::Excluded, Label::Included) => self.fn_ += 1,
        }
    }
}

pub fn confusion(predictions: &[Label], labels: &[Option<Label>]) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cc = ConfusionCounts::default();
    for (i, (p, l)) in predictions.iter().zip(labels).enumerate() {
        let l = l.ok_or(EvalError::MissingLabel(i))?;
        cc.record(*p, l);
    }
    Ok(cc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    /// tp + fp = 0; precision reported as 0.
    pub precision_undefined: bool,
    /// tp + fn = 0; recall reported as 0.
    pub recall_undefined: bool,
}

impl<T: Real> Metrics<T> {
    /// Set when any ratio fell back to the zero convention.
    pub fn degenerate(&self) -> bool {
        self.precision_undefined || self.recall_undefined || self.f1 == T::zero()
    }
}

fn ratio<T: Real>(num: usize, den: usize) -> (T, bool) {
    if den == 0 {
        (T::zero(), true)
    } else {
        (T::of_usize(num) / T::of_usize(den), false)
    }
}

pub fn metrics<T: Real>(cc: &ConfusionCounts) -> Result<Metrics<T>, EvalError> {
    let total = cc.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let (accuracy, _) = ratio::<T>(cc.tp + cc.tn, total);
    let (precision, precision_undefined) = ratio::<T>(cc.tp, cc.tp + cc.fp);
    let (recall, recall_undefined) = ratio::<T>(cc.tp, cc.tp + cc.fn_);
    let f1 = if precision + recall == T::zero() {
        T::zero()
    } else {
        T::of(2.0) * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialBaseline<T> {
    pub accuracy_all_excluded: T,
    /// Ties resolve to Excluded.
    pub majority_class: Label,
}

/// Accuracy of predicting Excluded for every study.
pub fn trivial_baseline<T: Real>(labels: &[Label]) -> Result<TrivialBaseline<T>, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let excluded = labels.iter().filter(|l| **l == Label::Excluded).count();
    let included = labels.len() - excluded;
    Ok(TrivialBaseline {
        accuracy_all_excluded: T::of_usize(excluded) / T::of_usize(labels.len()),
        majority_class: if included > excluded {
            Label::Included
        } else {
            Label::Excluded
        },
    })
}

/// Spread of a statistic across repeated rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary<T> {
    pub mean: T,
    pub median: T,
    /// Sample standard deviation (n - 1); 0 for a single round.
    pub std: T,
    pub min: T,
    pub max: T,
    pub rounds: usize,
}

pub fn summarize<T: Real>(values: &[T]) -> Result<RoundSummary<T>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let std = if values.len() > 1 {
        let ss: T = values.iter().map(|v| (*v - mean) * (*v - mean)).sum();
        (ss / (n - T::one())).sqrt()
    } else {
        T::zero()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / T::of(2.0)
    } else {
        sorted[mid]
    };
    Ok(RoundSummary {
        mean,
        median,
        std,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        rounds: values.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    Quadratic,
    Linear,
    Identity,
}

/// Agreement weights between categories `k` and `l` (0-based) on a `q`-point scale.
pub fn weight<T: Real>(scheme: WeightScheme, q: usize, k: usize, l: usize) -> T {
    let d = T::of_usize(k.abs_diff(l)) / T::of_usize(q - 1);
    match scheme {
        WeightScheme::Quadratic => T::one() - d * d,
        WeightScheme::Linear => T::one() - d,
        WeightScheme::Identity => {
            if k == l {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

pub fn weight_matrix<T: Real>(scheme: WeightScheme, q: usize) -> Vec<Vec<T>> {
    (0..q)
        .map(|k| (0..q).map(|l| weight(scheme, q, k, l)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport<T> {
    pub ac2: T,
    pub percent_agreement_weighted: T,
    pub chance_agreement: T,
    /// Subjects with at least one rating.
    pub n_subjects: usize,
    /// Subjects with at least two ratings (those entering `pa`).
    pub n_paired_subjects: usize,
    pub n_raters: usize,
    pub n_categories: usize,
    pub n_missing: usize,
    pub weight_scheme: WeightScheme,
}

/// Gwet's AC2 for a subjects x raters matrix of categories `1..=categories`,
/// `None` marking a missing rating.
///
/// Per subject `i`, with `r_ik` raters choosing `k`, `r_i = sum_k r_ik` and
/// `r*_ik = sum_l w_kl r_il`:
/// `pa = mean_{r_i >= 2} sum_k r_ik (r*_ik - 1) / (r_i (r_i - 1))`,
/// `pi_k = mean_{r_i >= 1} r_ik / r_i`,
/// `pe = T_w / (Q (Q - 1)) * sum_k pi_k (1 - pi_k)` where `T_w` sums all weights.
pub fn gwet_ac2<T: Real>(
    ratings: &[Vec<Option<u8>>],
    categories: usize,
    scheme: WeightScheme,
) -> Result<AgreementReport<T>, EvalError> {
    if categories < 2 {
        return Err(EvalError::TooFewCategories(categories));
    }
    let w = weight_matrix::<T>(scheme, categories);
    let n_raters = ratings.iter().map(Vec::len).max().unwrap_or(0);

    let mut counts: Vec<Vec<usize>> = Vec::with_capacity(ratings.len());
    let mut n_missing = 0;
    for (i, row) in ratings.iter().enumerate() {
        let mut c = vec![0usize; categories];
        n_missing += n_raters - row.len();
        for cell in row {
            match *cell {
                None => n_missing += 1,
                Some(v) if v == 0 || v as usize > categories => {
                    return Err(EvalError::InvalidCategory {
                        subject: i,
                        value: v,
                        categories,
                    })
                }
                Some(v) => c[v as usize - 1] += 1,
            }
        }
        counts.push(c);
    }

    let mut pa_sum = T::zero();
    let mut paired = 0usize;
    let mut pi = vec![T::zero(); categories];
    let mut rated = 0usize;
    for c in &counts {
        let r_i: usize = c.iter().sum();
        if r_i == 0 {
            continue;
        }
        rated += 1;
        let r_i_t = T::of_usize(r_i);
        for k in 0..categories {
            pi[k] = pi[k] + T::of_usize(c[k]) / r_i_t;
        }
        if r_i < 2 {
            continue;
        }
        paired += 1;
        let mut num = T::zero();
        for k in 0..categories {
            if c[k] == 0 {
                continue;
            }
            let r_star: T = (0..categories).map(|l| w[k][l] * T::of_usize(c[l])).sum();
            num = num + T::of_usize(c[k]) * (r_star - T::one());
        }
        pa_sum = pa_sum + num / (r_i_t * (r_i_t - T::one()));
    }
    if paired == 0 {
        return Err(EvalError::NoPairs);
    }
    let pa = pa_sum / T::of_usize(paired);
    let rated_t = T::of_usize(rated);
    let t_w: T = w.iter().flatten().copied().sum();
    let q = T::of_usize(categories);
    let spread: T = pi
        .iter()
        .map(|p| {
            let p = *p / rated_t;
            p * (T::one() - p)
        })
        .sum();
    let pe = t_w / (q * (q - T::one())) * spread;
    if pe >= T::one() {
        return Err(EvalError::DegenerateChance);
    }
    let ac2 = if pa == T::one() {
        T::one()
    } else {
        (pa - pe) / (T::one() - pe)
    };
    Ok(AgreementReport {
        ac2,
        percent_agreement_weighted: pa,
        chance_agreement: pe,
        n_subjects: rated,
        n_paired_subjects: paired,
        n_raters,
        n_categories: categories,
        n_missing,
        weight_scheme: scheme,
    })
}

/// One row of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub corpus: String,
    pub model_id: String,
    pub variant: String,
    pub rule: String,
    /// Round number, or `None` for an aggregate row.
    pub round: Option<u32>,
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
    pub trivial_baseline: f64,
}

impl MetricRow {
    pub fn new(
        context: (&str, &str, &str, &str),
        round: Option<u32>,
        cc: &ConfusionCounts,
        m: &Metrics<f64>,
        baseline: f64,
    ) -> Self {
        let (corpus, model_id, variant, rule) = context;
        Self {
            corpus: corpus.into(),
            model_id: model_id.into(),
            variant: variant.into(),
            rule: rule.into(),
            round,
            n: cc.total(),
            tp: cc.tp,
            fp: cc.fp,
            tn: cc.tn,
            fn_: cc.fn_,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            degenerate: m.degenerate(),
            trivial_baseline: baseline,
        }
    }
}

pub fn write_csv<R: Serialize, W: Write>(rows: &[R], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
