#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use screening_core::corpus::{Corpus, Label, ABSTRACT_LABEL};
use screening_core::gateway::{Gateway, MockProvider, MockScript, ProviderConfig, Replies};
use screening_core::synthetic::separable_corpus;

pub const MODEL: &str = "mock-model";

/// Studies whose first criterion drops below threshold in round 3.
pub const VARIABLE_STUDIES: [&str; 3] = ["S004", "S011", "S017"];

pub fn twenty_studies() -> Corpus {
    separable_corpus(8, 12, 11)
}

pub fn variability_script() -> MockScript {
    VARIABLE_STUDIES.iter().fold(MockScript::constant("6"), |s, id| {
        s.with_study(id, 0, Replies::PerRound(["6", "6", "3", "6", "6"].map(String::from).to_vec()))
    })
}

pub fn gateway(models: &[&str], provider: Arc<MockProvider>) -> Gateway {
    let mut gw = Gateway::new();
    for m in models {
        gw.register(ProviderConfig::mock("mock", m), provider.clone()).unwrap();
    }
    gw
}

fn coin(hash: &str, round: u32) -> bool {
    let h = u64::from_str_radix(&hash[..16], 16).unwrap();
    let mixed = (h ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (mixed >> 31) & 1 == 1
}

/// Answers with the true label whenever the prompt carries an abstract and
/// guesses from a hash of the prompt and round otherwise.
pub fn abstract_sensitive(corpora: &[Corpus]) -> MockProvider {
    let labels: HashMap<String, Label> = corpora
        .iter()
        .flat_map(|c| c.studies.iter())
        .filter_map(|s| s.label.map(|l| (s.id.clone(), l)))
        .collect();
    MockProvider::from_fn(move |req| {
        let include = if req.prompt.body.contains(ABSTRACT_LABEL) {
            labels[&req.prompt.study_id] == Label::Included
        } else {
            coin(req.prompt_hash, req.round_index)
        };
        Ok(if include { "7" } else { "1" }.to_string())
    })
}

/// Two synthetic corpora with disjoint study ids.
pub fn ablation_corpora() -> Vec<Corpus> {
    let a = separable_corpus(20, 40, 21);
    let mut b = separable_corpus(25, 35, 22);
    b.name = "synthetic-b".into();
    for s in &mut b.studies {
        s.id = format!("B{}", s.id);
    }
    vec![a, b]
}
