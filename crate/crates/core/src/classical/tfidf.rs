//! Tokenization and TF-IDF vectorization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::ClassicalError;
use crate::scalar::Real;

const STOPWORDS_EN: &str = include_str!("../../assets/stopwords_en.txt");
pub const STOPWORD_LIST_ID: &str = "en-179";
pub const TOKEN_PATTERN: &str = "alphanumeric runs of length >= 2";

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS_EN.lines().map(str::trim).filter(|w| !w.is_empty()).collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercased alphanumeric tokens of two or more characters, minus stopwords.
pub fn preprocess(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2 && !is_stopword(t))
        .map(str::to_string)
        .collect()
}

/// Sorted-index sparse vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector<T> {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> SparseVector<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(dense: &[T]) -> Self {
        let mut v = Self::zeros(dense.len());
        for (i, &x) in dense.iter().enumerate() {
            if x != T::zero() {
                v.indices.push(i);
                v.values.push(x);
            }
        }
        v
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn dot(&self, dense: &[T]) -> T {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn get(&self, index: usize) -> T {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.dim];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub lowercase: bool,
    pub stopword_list: String,
    pub token_pattern: String,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopword_list: STOPWORD_LIST_ID.into(),
            token_pattern: TOKEN_PATTERN.into(),
        }
    }
}

/// Smoothed TF-IDF with raw term counts and L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel<T> {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<T>,
    pub doc_count: usize,
    pub preprocessing: PreprocessSpec,
}

impl<T: Real> TfIdfModel<T> {
    /// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
    pub fn fit<S: AsRef<str>>(documents: &[Vec<S>]) -> Result<Self, ClassicalError> {
        if documents.is_empty() {
            return Err(ClassicalError::NoDocuments);
        }
        let terms: BTreeSet<&str> = documents.iter().flatten().map(AsRef::as_ref).collect();
        if terms.is_empty() {
            return Err(ClassicalError::EmptyVocabulary);
        }
        let vocabulary: BTreeMap<String, usize> = terms
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        let mut df = vec![0usize; vocabulary.len()];
        for doc in documents {
            let uniq: BTreeSet<usize> = doc.iter().map(|t| vocabulary[t.as_ref()]).collect();
            for i in uniq {
                df[i] += 1;
            }
        }
        let n = T::of_usize(documents.len());
        let one = T::one();
        let idf = df
            .iter()
            .map(|&d| ((one + n) / (one + T::of_usize(d))).ln() + one)
            .collect();
        Ok(Self {
            vocabulary,
            idf,
            doc_count: documents.len(),
            preprocessing: PreprocessSpec::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    /// Out-of-vocabulary tokens are ignored; an all-OOV document maps to the
    /// zero vector.
    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector<T> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.vocabulary.get(t.as_ref()) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut v = SparseVector::zeros(self.dim());
        for (i, c) in counts {
            v.indices.push(i);
            v.values.push(T::of_usize(c) * self.idf[i]);
        }
        let norm = v.norm();
        if norm > T::zero() {
            for x in &mut v.values {
                *x = *x / norm;
            }
        }
        v
    }

    pub fn transform_text(&self, text: &str) -> SparseVector<T> {
        self.transform(&preprocess(text))
    }

    pub fn idf_of(&self, term: &str) -> Option<T> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer() {
        assert_eq!(preprocess("The SVM, the SVM!"), vec!["svm", "svm"]);
        assert!(preprocess("").is_empty());
        assert_eq!(preprocess("A x-ray of 3D data"), vec!["ray", "3d", "data"]);
    }

    #[test]
    fn idf_at_full_document_frequency_is_one() {
        let m = TfIdfModel::<f64>::fit(&[vec!["a", "b"], vec!["a"]]).unwrap();
        assert_eq!(m.idf_of("a"), Some(1.0));
        assert!(m.idf_of("b").unwrap() > 1.0);
    }

    #[test]
    fn oov_document_is_zero() {
        let m = TfIdfModel::<f64>::fit(&[vec!["a"]]).unwrap();
        let v = m.transform(&["zzz"]);
        assert!(v.is_zero());
        assert_eq!(v.dim, 1);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            TfIdfModel::<f64>::fit::<&str>(&[]),
            Err(ClassicalError::NoDocuments)
        );
        assert_eq!(
            TfIdfModel::<f64>::fit::<&str>(&[vec![]]),
            Err(ClassicalError::EmptyVocabulary)
        );
    }
}
