//! Train on a random split, cross-validate it, and compare all classifiers
//! and any LLM decisions on the held-out studies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    document_text, preprocess, stratified_kfold, train, ClassicalError, ClassifierKind,
    Hyperparameters, ModelBundle, TfIdfModel, TrainingMeta,
};
use crate::corpus::{Corpus, Label, StudyRecord};
use crate::evaluation::{metrics, trivial_baseline, ConfusionCounts, MetricRow, Metrics, TrivialBaseline};
use crate::metaanalysis::{bootstrap_statistic, BootstrapCI};
use crate::scalar::Real;

/// Held-out sets smaller than this get a warning in the report.
pub const SMALL_TEST_SET: usize = 30;
pub const ALL_EXCLUDED: &str = "all_excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase3Options {
    pub train_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub replicates: usize,
    pub level: f64,
    pub kinds: Vec<ClassifierKind>,
    pub hyperparameters: Hyperparameters,
}

impl Default for Phase3Options {
    fn default() -> Self {
        Self {
            train_size: 50,
            folds: 4,
            seed: 42,
            replicates: 2000,
            level: 0.95,
            kinds: ClassifierKind::ALL.to_vec(),
            hyperparameters: Hyperparameters::default(),
        }
    }
}

/// Final decisions of one LLM configuration, keyed by study id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmPredictions {
    pub model_id: String,
    pub predictions: BTreeMap<String, Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult<T> {
    pub kind: ClassifierKind,
    pub fold: usize,
    pub n_test: usize,
    pub accuracy: T,
    pub f1: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutResult<T> {
    pub name: String,
    pub n: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics<T>,
    pub accuracy_ci: BootstrapCI<T>,
    pub f1_ci: BootstrapCI<T>,
    pub degenerate: bool,
    pub beats_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase3Report<T> {
    pub corpus: String,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub trivial_baseline: TrivialBaseline<T>,
    pub cv: Vec<CvResult<T>>,
    pub classifiers: Vec<HeldOutResult<T>>,
    pub llm: Vec<HeldOutResult<T>>,
    pub warnings: Vec<String>,
}

impl<T: Real> Phase3Report<T> {
    pub fn result(&self, name: &str) -> Option<&HeldOutResult<T>> {
        self.classifiers.iter().chain(&self.llm).find(|r| r.name == name)
    }

    /// Rows in the evaluation CSV schema; LLM rows cover only their overlap.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let base = self.trivial_baseline.accuracy_all_excluded.as_f64();
        self.classifiers
            .iter()
            .chain(&self.llm)
            .map(|r| {
                let m = Metrics {
                    accuracy: r.metrics.accuracy.as_f64(),
                    precision: r.metrics.precision.as_f64(),
                    recall: r.metrics.recall.as_f64(),
                    f1: r.metrics.f1.as_f64(),
                    precision_undefined: r.metrics.precision_undefined,
                    recall_undefined: r.metrics.recall_undefined,
                };
                MetricRow::new((&self.corpus, &r.name, "C", "held_out"), None, &r.counts, &m, base)
            })
            .collect()
    }
}

fn label_of(s: &StudyRecord) -> Result<Label, ClassicalError> {
    s.label.ok_or_else(|| ClassicalError::Unlabeled(s.id.clone()))
}

fn tokens(studies: &[&StudyRecord]) -> Vec<Vec<String>> {
    studies.iter().map(|s| preprocess(&document_text(s))).collect()
}

fn f1_of<T: Real>(pred: &[Label], truth: &[Label], idx: &[usize]) -> T {
    let mut cc = ConfusionCounts::default();
    for &i in idx {
        cc.record(pred[i], truth[i]);
    }
    metrics::<T>(&cc).map_or(T::zero(), |m| m.f1)
}

fn held_out<T: Real>(
    name: &str,
    pred: &[Label],
    truth: &[Label],
    baseline: T,
    opts: &Phase3Options,
) -> Result<HeldOutResult<T>, ClassicalError> {
    let mut counts = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        counts.record(p, t);
    }
    let m = metrics::<T>(&counts)?;
    let correct: Vec<T> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| if p == t { T::one() } else { T::zero() })
        .collect();
    let n = pred.len();
    let accuracy_ci = bootstrap_statistic(n, opts.replicates, opts.seed, opts.level, m.accuracy, |idx| {
        idx.iter().map(|&i| correct[i]).sum::<T>() / T::of_usize(idx.len())
    })?;
    let f1_ci = bootstrap_statistic(n, opts.replicates, opts.seed, opts.level, m.f1, |idx| {
        f1_of(pred, truth, idx)
    })?;
    Ok(HeldOutResult {
        name: name.to_string(),
        n,
        counts,
        degenerate: m.degenerate(),
        beats_baseline: m.accuracy > baseline,
        metrics: m,
        accuracy_ci,
        f1_ci,
    })
}

/// Ids of the seeded training sample; everything else is held out.
pub fn training_ids(corpus: &Corpus, opts: &Phase3Options) -> Result<BTreeSet<String>, ClassicalError> {
    if opts.train_size == 0 || opts.train_size >= corpus.len() {
        return Err(ClassicalError::TrainSize {
            train_size: opts.train_size,
            corpus_size: corpus.len(),
        });
    }
    Ok(corpus
        .sample(opts.train_size, opts.seed)
        .map_err(|e| ClassicalError::Bundle(e.to_string()))?
        .studies
        .into_iter()
        .map(|s| s.id)
        .collect())
}

/// Runs the baseline comparison. Returns the report and one trained bundle
/// per classifier kind.
pub fn phase3_protocol<T: Real>(
    corpus: &Corpus,
    opts: &Phase3Options,
    comparisons: &[LlmPredictions],
) -> Result<(Phase3Report<T>, Vec<ModelBundle<T>>), ClassicalError> {
    for s in &corpus.studies {
        label_of(s)?;
    }
    let train_ids = training_ids(corpus, opts)?;
    let (train_set, test_set): (Vec<&StudyRecord>, Vec<&StudyRecord>) =
        corpus.studies.iter().partition(|s| train_ids.contains(&s.id));

    let mut leaked: Vec<String> = comparisons
        .iter()
        .flat_map(|c| c.predictions.keys())
        .filter(|id| train_ids.contains(*id))
        .cloned()
        .collect();
    leaked.sort();
    leaked.dedup();
    if !leaked.is_empty() {
        return Err(ClassicalError::Leakage(leaked));
    }

    let mut warnings = Vec::new();
    if test_set.len() < SMALL_TEST_SET {
        warnings.push(format!(
            "held-out set has only {} studies; intervals are unreliable",
            test_set.len()
        ));
    }
    let y_train: Vec<Label> = train_set.iter().map(|s| s.label.expect("checked")).collect();
    let y_test: Vec<Label> = test_set.iter().map(|s| s.label.expect("checked")).collect();
    let train_tokens = tokens(&train_set);
    let test_tokens = tokens(&test_set);
    let hyper = &opts.hyperparameters;

    let mut cv = Vec::new();
    let mut fold_assignment = None;
    match stratified_kfold(&y_train, opts.folds, opts.seed) {
        Ok(folds) => {
            let mut assignment = vec![0; y_train.len()];
            for (f, fold) in folds.iter().enumerate() {
                for &i in &fold.test {
                    assignment[i] = f;
                }
                let docs: Vec<Vec<String>> = fold.train.iter().map(|&i| train_tokens[i].clone()).collect();
                let vec = TfIdfModel::<T>::fit(&docs)?;
                let xtr: Vec<_> = docs.iter().map(|d| vec.transform(d)).collect();
                let ytr: Vec<Label> = fold.train.iter().map(|&i| y_train[i]).collect();
                let xte: Vec<_> = fold.test.iter().map(|&i| vec.transform(&train_tokens[i])).collect();
                let yte: Vec<Label> = fold.test.iter().map(|&i| y_train[i]).collect();
                for &kind in &opts.kinds {
                    let model = match train(kind, &xtr, &ytr, hyper, opts.seed) {
                        Ok(m) => m,
                        Err(e) => {
                            warnings.push(format!("fold {f}: {kind} not trained: {e}"));
                            continue;
                        }
                    };
                    let mut cc = ConfusionCounts::default();
                    for (p, t) in model.predict_all(&xte).into_iter().zip(&yte) {
                        cc.record(p, *t);
                    }
                    let m = metrics::<T>(&cc)?;
                    cv.push(CvResult {
                        kind,
                        fold: f,
                        n_test: yte.len(),
                        accuracy: m.accuracy,
                        f1: m.f1,
                    });
                }
            }
            fold_assignment = Some(assignment);
        }
        Err(e) => warnings.push(format!("cross-validation skipped: {e}")),
    }

    let vectorizer = TfIdfModel::<T>::fit(&train_tokens)?;
    let x_train: Vec<_> = train_tokens.iter().map(|d| vectorizer.transform(d)).collect();
    let x_test: Vec<_> = test_tokens.iter().map(|d| vectorizer.transform(d)).collect();
    let baseline = trivial_baseline::<T>(&y_test)?;
    let base_acc = baseline.accuracy_all_excluded;

    let mut classifiers = Vec::new();
    let mut bundles = Vec::new();
    let meta = TrainingMeta {
        seed: opts.seed,
        hyperparameters: *hyper,
        train_ids: train_set.iter().map(|s| s.id.clone()).collect(),
        fold_assignment,
    };
    for &kind in &opts.kinds {
        let model = train(kind, &x_train, &y_train, hyper, opts.seed)?;
        let pred = model.predict_all(&x_test);
        classifiers.push(held_out(&kind.to_string(), &pred, &y_test, base_acc, opts)?);
        bundles.push(ModelBundle::new(vectorizer.clone(), model, meta.clone()));
    }
    let all_excluded = vec![Label::Excluded; y_test.len()];
    classifiers.push(held_out(ALL_EXCLUDED, &all_excluded, &y_test, base_acc, opts)?);

    let mut llm = Vec::new();
    for c in comparisons {
        let (pred, truth): (Vec<Label>, Vec<Label>) = test_set
            .iter()
            .zip(&y_test)
            .filter_map(|(s, &t)| c.predictions.get(&s.id).map(|&p| (p, t)))
            .unzip();
        if pred.is_empty() {
            warnings.push(format!("{} covers none of the held-out studies", c.model_id));
            continue;
        }
        if pred.len() < test_set.len() {
            warnings.push(format!(
                "{} covers {} of {} held-out studies",
                c.model_id,
                pred.len(),
                test_set.len()
            ));
        }
        let base = trivial_baseline::<T>(&truth)?.accuracy_all_excluded;
        llm.push(held_out(&c.model_id, &pred, &truth, base, opts)?);
    }

    let report = Phase3Report {
        corpus: corpus.name.clone(),
        seed: opts.seed,
        train_ids: meta.train_ids.clone(),
        test_ids: test_set.iter().map(|s| s.id.clone()).collect(),
        trivial_baseline: baseline,
        cv,
        classifiers,
        llm,
        warnings,
    };
    Ok((report, bundles))
}
