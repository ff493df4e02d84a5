//! Classical text-classification baselines: TF-IDF features with naive
//! Bayes, logistic regression, a linear SVM and a random forest.

pub mod cv;
pub mod linear;
pub mod protocol;
pub mod tfidf;
pub mod trees;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cv::{fold_assignment, stratified_kfold, Fold};
pub use linear::{fit_linear_svm, fit_logistic, LinearModel, NaiveBayes, SolverSettings};
pub use protocol::{phase3_protocol, training_ids, LlmPredictions, Phase3Options, Phase3Report};
pub use tfidf::{preprocess, SparseVector, TfIdfModel};
pub use trees::{ForestSettings, RandomForest};

use crate::corpus::{render_keywords, Label, StudyRecord};
use crate::evaluation::EvalError;
use crate::metaanalysis::MetaError;
use crate::scalar::Real;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassicalError {
    #[error("cannot fit TF-IDF on zero documents")]
    NoDocuments,
    #[error("training documents contain no tokens")]
    EmptyVocabulary,
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
    #[error("vector dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least 2 training examples, got {0}")]
    TooFewExamples(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("fold count must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("class {label} has {size} members, fewer than {k} folds")]
    ClassTooSmall { label: Label, size: usize, k: usize },
    #[error("study {0} has no label")]
    Unlabeled(String),
    #[error("training size {train_size} must be below corpus size {corpus_size}")]
    TrainSize { train_size: usize, corpus_size: usize },
    #[error("comparison set overlaps the training split: {0:?}")]
    Leakage(Vec<String>),
    #[error("unknown classifier kind {0:?}")]
    UnknownKind(String),
    #[error("model bundle version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("model bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Bootstrap(#[from] MetaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    MultinomialNB,
    LogisticRegression,
    LinearSVM,
    RandomForest,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::MultinomialNB,
        ClassifierKind::LogisticRegression,
        ClassifierKind::LinearSVM,
        ClassifierKind::RandomForest,
    ];
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::MultinomialNB => "naive_bayes",
            ClassifierKind::LogisticRegression => "logistic_regression",
            ClassifierKind::LinearSVM => "linear_svm",
            ClassifierKind::RandomForest => "random_forest",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = ClassicalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "naive_bayes" | "nb" | "multinomialnb" => Ok(ClassifierKind::MultinomialNB),
            "logistic_regression" | "logreg" | "lr" => Ok(ClassifierKind::LogisticRegression),
            "linear_svm" | "svm" => Ok(ClassifierKind::LinearSVM),
            "random_forest" | "rf" => Ok(ClassifierKind::RandomForest),
            _ => Err(ClassicalError::UnknownKind(s.to_string())),
        }
    }
}

/// Fixed defaults, overridable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub nb_alpha: f64,
    pub logreg_lambda: f64,
    pub svm_lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub forest: ForestSettings,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            nb_alpha: 1.0,
            logreg_lambda: 1.0,
            svm_lambda: 1.0,
            tolerance: 1e-6,
            max_iterations: 10_000,
            forest: ForestSettings::default(),
        }
    }
}

impl Hyperparameters {
    fn solver<T: Real>(&self, lambda: f64) -> SolverSettings<T> {
        SolverSettings {
            lambda: T::of(lambda),
            tolerance: T::of(self.tolerance),
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters")]
pub enum TrainedClassifier<T> {
    MultinomialNB(NaiveBayes<T>),
    LogisticRegression(LinearModel<T>),
    LinearSVM(LinearModel<T>),
    RandomForest(RandomForest<T>),
}

impl<T: Real> TrainedClassifier<T> {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            TrainedClassifier::MultinomialNB(_) => ClassifierKind::MultinomialNB,
            TrainedClassifier::LogisticRegression(_) => ClassifierKind::LogisticRegression,
            TrainedClassifier::LinearSVM(_) => ClassifierKind::LinearSVM,
            TrainedClassifier::RandomForest(_) => ClassifierKind::RandomForest,
        }
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Label {
        match self {
            TrainedClassifier::MultinomialNB(m) => m.predict(x),
            TrainedClassifier::LogisticRegression(m) | TrainedClassifier::LinearSVM(m) => m.predict(x),
            TrainedClassifier::RandomForest(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, xs: &[SparseVector<T>]) -> Vec<Label> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

pub fn train<T: Real>(
    kind: ClassifierKind,
    x: &[SparseVector<T>],
    labels: &[Label],
    hyper: &Hyperparameters,
    seed: u64,
) -> Result<TrainedClassifier<T>, ClassicalError> {
    Ok(match kind {
        ClassifierKind::MultinomialNB => {
            TrainedClassifier::MultinomialNB(NaiveBayes::fit(x, labels, T::of(hyper.nb_alpha))?)
        }
        ClassifierKind::LogisticRegression => TrainedClassifier::LogisticRegression(fit_logistic(
            x,
            labels,
            hyper.solver(hyper.logreg_lambda),
        )?),
        ClassifierKind::LinearSVM => {
            TrainedClassifier::LinearSVM(fit_linear_svm(x, labels, hyper.solver(hyper.svm_lambda))?)
        }
        ClassifierKind::RandomForest => {
            TrainedClassifier::RandomForest(RandomForest::fit(x, labels, hyper.forest, seed)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    pub train_ids: Vec<String>,
    /// CV fold of each training study, when cross-validation ran.
    pub fold_assignment: Option<Vec<usize>>,
}

/// Versioned on-disk form of a vectorizer plus trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle<T> {
    pub format_version: u32,
    pub vectorizer: TfIdfModel<T>,
    pub classifier: TrainedClassifier<T>,
    pub meta: TrainingMeta,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(vectorizer: TfIdfModel<T>, classifier: TrainedClassifier<T>, meta: TrainingMeta) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            vectorizer,
            classifier,
            meta,
        }
    }

    pub fn predict_text(&self, text: &str) -> Label {
        self.classifier.predict(&self.vectorizer.transform_text(text))
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassicalError> {
        let json = serde_json::to_string(self).map_err(|e| ClassicalError::Bundle(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| ClassicalError::Bundle(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ClassicalError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClassicalError::Bundle(e.to_string()))?;
        let bundle: Self = serde_json::from_str(&text).map_err(|e| ClassicalError::Bundle(e.to_string()))?;
        if bundle.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassicalError::UnsupportedVersion(bundle.format_version));
        }
        Ok(bundle)
    }
}

/// Title, abstract and keywords joined with spaces.
pub fn document_text(study: &StudyRecord) -> String {
    let mut parts = vec![study.title.as_str().to_string()];
    if let Some(a) = study.abstract_present() {
        parts.push(a.to_string());
    }
    if let Some(k) = study.keywords_present() {
        parts.push(render_keywords(k));
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_roundtrip() {
        for k in ClassifierKind::ALL {
            assert_eq!(k.to_string().parse::<ClassifierKind>().unwrap(), k);
        }
        assert!("xgboost".parse::<ClassifierKind>().is_err());
    }

    #[test]
    fn document_text_concatenates_fields() {
        let s = StudyRecord::new("1", "Title")
            .with_abstract("Body")
            .with_keywords(["k1", "k2"]);
        assert_eq!(document_text(&s), "Title Body k1, k2");
        assert_eq!(document_text(&StudyRecord::new("2", "Only")), "Only");
    }
}
