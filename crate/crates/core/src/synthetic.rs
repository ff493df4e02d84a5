//! Seeded synthetic corpora for tests, demos and calibration runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Label, StudyRecord};

const INCLUDED_TERMS: &[&str] = &[
    "randomized", "trial", "screening", "automation", "classifier", "recall", "precision",
    "systematic", "review", "eligibility", "language", "model", "prompt", "annotation",
    "benchmark", "evaluation",
];

const EXCLUDED_TERMS: &[&str] = &[
    "soil", "irrigation", "harvest", "livestock", "rainfall", "crop", "pasture", "fertilizer",
    "orchard", "drought", "grazing", "seedling", "tillage", "compost", "yield", "greenhouse",
];

const SHARED_TERMS: &[&str] = &[
    "study", "results", "method", "analysis", "data", "approach", "proposed", "paper",
    "findings", "framework",
];

pub const DEFAULT_CRITERIA: [&str; 2] = [
    "Does the paper evaluate automated screening of studies?",
    "Does the paper report quantitative results?",
];

fn words(rng: &mut ChaCha8Rng, topic: &[&str], n: usize) -> String {
    (0..n)
        .map(|i| {
            let pool = if i % 3 == 2 { SHARED_TERMS } else { topic };
            *pool.choose(rng).expect("non-empty pool")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Labeled corpus whose two classes use disjoint topical vocabularies, with
/// a shared filler vocabulary. Study ids are `S001`, `S002`, ...
pub fn separable_corpus(included: usize, excluded: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Included, included)
        .chain(std::iter::repeat_n(Label::Excluded, excluded))
        .collect();
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let studies = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let topic = match label {
                Label::Included => INCLUDED_TERMS,
                Label::Excluded => EXCLUDED_TERMS,
            };
            let keywords: Vec<String> = (0..3)
                .map(|_| topic.choose(&mut rng).expect("non-empty").to_string())
                .collect();
            StudyRecord::new(format!("S{:03}", i + 1), words(&mut rng, topic, 6))
                .with_abstract(words(&mut rng, topic, 40))
                .with_keywords(keywords)
                .with_label(label)
        })
        .collect();
    Corpus::new(
        "synthetic",
        studies,
        DEFAULT_CRITERIA.iter().map(|c| c.to_string()).collect(),
    )
    .expect("generated ids are unique")
}
