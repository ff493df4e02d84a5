//! Screening prompt instantiation and Likert reply handling.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError, FeatureVariant, StudyRecord};

pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/screening_prompt.txt");
pub const DEFAULT_THRESHOLD: u8 = 5;

const CRITERION_SLOT: &str = "{inclusion_criteria_question}";
const TITLE_SLOT: &str = "{title}";
const ABSTRACT_SLOT: &str = "{abstract}";
const KEYWORDS_SLOT: &str = "{keywords}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Metadata(#[from] CorpusError),
    #[error("template must contain {slot} exactly once (found {count})")]
    Template { slot: &'static str, count: usize },
    #[error("template line {line} mixes metadata placeholders")]
    TemplateLine { line: usize },
    #[error("likert value {0} is outside 1..=7")]
    OutOfRange(i64),
    #[error("decision needs at least one criterion score")]
    NoScores,
}

/// Likert agreement value, 1 = Strongly Disagree .. 7 = Strongly Agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LikertScore(u8);

impl LikertScore {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 7;

    pub fn new(value: i64) -> Result<Self, PromptError> {
        if (Self::MIN as i64..=Self::MAX as i64).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(PromptError::OutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for LikertScore {
    type Error = PromptError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v as i64)
    }
}

impl From<LikertScore> for u8 {
    fn from(s: LikertScore) -> u8 {
        s.0
    }
}

impl fmt::Display for LikertScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Why a reply could not be read as a Likert score. Stored in the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplyError {
    #[error("no unambiguous integer in reply")]
    Unparseable,
    #[error("reply value {value} is outside 1..=7")]
    OutOfRange { value: i64 },
}

#[derive(Debug, PartialEq)]
enum NumToken {
    Int(i64),
    Decimal,
}

fn number_tokens(text: &str) -> Vec<NumToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let mut decimal = false;
        if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
            decimal = true;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
        }
        let before = start.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i).copied();
        // digits glued to letters ("gpt4", "7th") are not standalone
        if before.is_some_and(|c| c.is_alphanumeric()) || after.is_some_and(|c| c.is_alphabetic()) {
            continue;
        }
        if decimal {
            tokens.push(NumToken::Decimal);
            continue;
        }
        let digits: String = chars[start..i].iter().collect();
        let negative = before == Some('-')
            && start
                .checked_sub(2)
                .map_or(true, |j| !chars[j].is_alphanumeric());
        let magnitude = digits.parse::<i64>().unwrap_or(i64::MAX);
        tokens.push(NumToken::Int(if negative { -magnitude } else { magnitude }));
    }
    tokens
}

/// Reads a model reply as a Likert score.
///
/// Accepts the bare number with surrounding whitespace or punctuation, and any
/// reply containing exactly one standalone integer. Anything else is an error;
/// values are never coerced into range.
pub fn parse_likert(raw_reply: &str) -> Result<LikertScore, ReplyError> {
    let tokens = number_tokens(raw_reply);
    match tokens.as_slice() {
        [NumToken::Int(v)] => LikertScore::new(*v).map_err(|_| ReplyError::OutOfRange { value: *v }),
        _ => Err(ReplyError::Unparseable),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Include,
    Exclude,
}

impl Decision {
    pub fn label(self) -> corpus::Label {
        match self {
            Decision::Include => corpus::Label::Included,
            Decision::Exclude => corpus::Label::Excluded,
        }
    }
}

/// Include iff every per-criterion score reaches `threshold`.
pub fn decide(scores: &[LikertScore], threshold: u8) -> Result<Decision, PromptError> {
    if scores.is_empty() {
        return Err(PromptError::NoScores);
    }
    if scores.iter().all(|s| s.value() >= threshold) {
        Ok(Decision::Include)
    } else {
        Ok(Decision::Exclude)
    }
}

/// SHA-256 hex digest of the UTF-8 prompt bytes.
pub fn prompt_hash(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub study_id: String,
    pub criterion_index: usize,
    pub criterion_text: String,
    pub variant: FeatureVariant,
    pub body: String,
}

impl PromptInstance {
    pub fn hash(&self) -> String {
        prompt_hash(&self.body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Title,
    Abstract,
    Keywords,
}

/// Prompt text with named placeholders. A line holding a metadata placeholder
/// is dropped entirely when the variant omits that field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    lines: Vec<(String, Option<Slot>)>,
    trailing_newline: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("embedded template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let count = text.matches(CRITERION_SLOT).count();
        if count != 1 {
            return Err(PromptError::Template {
                slot: CRITERION_SLOT,
                count,
            });
        }
        for slot in [TITLE_SLOT, ABSTRACT_SLOT, KEYWORDS_SLOT] {
            let count = text.matches(slot).count();
            if count > 1 {
                return Err(PromptError::Template { slot, count });
            }
        }
        let mut lines = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let slots: Vec<Slot> = [
                (TITLE_SLOT, Slot::Title),
                (ABSTRACT_SLOT, Slot::Abstract),
                (KEYWORDS_SLOT, Slot::Keywords),
            ]
            .into_iter()
            .filter(|(p, _)| line.contains(p))
            .map(|(_, s)| s)
            .collect();
            if slots.len() > 1 {
                return Err(PromptError::TemplateLine { line: n + 1 });
            }
            lines.push((line.to_string(), slots.first().copied()));
        }
        Ok(Self {
            lines,
            trailing_newline: text.ends_with('\n'),
        })
    }

    /// Renders the prompt for one (study, criterion, variant).
    pub fn render(
        &self,
        study: &StudyRecord,
        criterion_index: usize,
        criterion_text: &str,
        variant: FeatureVariant,
    ) -> Result<PromptInstance, PromptError> {
        // fails with MissingMetadata exactly when the variant cannot be served
        corpus::compose_metadata(study, variant)?;
        let keywords = study
            .keywords
            .as_deref()
            .map(corpus::render_keywords)
            .unwrap_or_default();
        let mut out = Vec::with_capacity(self.lines.len());
        for (line, slot) in &self.lines {
            let rendered = match slot {
                Some(Slot::Title) if !variant.includes_title() => continue,
                Some(Slot::Abstract) if !variant.includes_abstract() => continue,
                Some(Slot::Keywords) if !variant.includes_keywords() => continue,
                Some(Slot::Title) => line.replacen(TITLE_SLOT, &study.title, 1),
                Some(Slot::Abstract) => line.replacen(
                    ABSTRACT_SLOT,
                    study.abstract_text.as_deref().unwrap_or_default(),
                    1,
                ),
                Some(Slot::Keywords) => line.replacen(KEYWORDS_SLOT, &keywords, 1),
                None => line.replacen(CRITERION_SLOT, criterion_text, 1),
            };
            out.push(rendered);
        }
        let mut body = out.join("\n");
        if self.trailing_newline {
            body.push('\n');
        }
        Ok(PromptInstance {
            study_id: study.id.clone(),
            criterion_index,
            criterion_text: criterion_text.to_string(),
            variant,
            body,
        })
    }
}

/// Instantiates the default template.
pub fn build_prompt(
    study: &StudyRecord,
    criterion_index: usize,
    criterion_text: &str,
    variant: FeatureVariant,
) -> Result<PromptInstance, PromptError> {
    PromptTemplate::default().render(study, criterion_index, criterion_text, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VariantTag;
    use proptest::prelude::*;

    fn study() -> StudyRecord {
        StudyRecord::new("s1", "LLM Screening at Scale")
            .with_abstract("An abstract about {keywords} and screening.")
            .with_keywords(["llm", "slr"])
    }

    const Q1: &str = "Does the study evaluate an automated tool?";
    const Q2: &str = "Is the study a primary study?";

    #[test]
    fn full_variant_follows_template() {
        let p = build_prompt(&study(), 0, Q1, VariantTag::C.variant()).unwrap();
        assert!(p.body.starts_with("Assume you are a software engineering researcher \n"));
        assert!(p.body.contains(&format!("\"{Q1}\"")));
        assert!(p.body.contains("**Title:** LLM Screening at Scale\n"));
        // placeholders inside substituted text are not expanded again
        assert!(p.body.contains("**Abstract:** An abstract about {keywords} and screening.\n"));
        assert!(p.body.contains("**Keywords:** llm, slr\n"));
        assert!(p.body.contains("Return only a number from 1 to 7, with no additional \nexplanation."));
        let block = corpus::compose_metadata(&study(), VariantTag::C.variant()).unwrap();
        assert!(p.body.contains(&block));
    }

    #[test]
    fn variant_a_drops_title_and_keyword_lines() {
        let c = build_prompt(&study(), 0, Q1, VariantTag::C.variant()).unwrap();
        let a = build_prompt(&study(), 0, Q1, VariantTag::A.variant()).unwrap();
        let expected: Vec<&str> = c
            .body
            .lines()
            .filter(|l| !l.starts_with("**Title:**") && !l.starts_with("**Keywords:**"))
            .collect();
        assert_eq!(a.body.lines().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn criteria_only_change_the_question() {
        let a = build_prompt(&study(), 0, Q1, VariantTag::B.variant()).unwrap();
        let b = build_prompt(&study(), 1, Q2, VariantTag::B.variant()).unwrap();
        assert_eq!(a.body.replace(Q1, Q2), b.body);
        assert_eq!(a.body.matches(Q1).count(), 1);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn variant_e_never_leaks_abstract() {
        let s = study();
        let p = build_prompt(&s, 0, Q1, VariantTag::E.variant()).unwrap();
        assert!(!p.body.contains(s.abstract_text.as_deref().unwrap()));
        assert!(!p.body.contains("**Abstract:**"));
    }

    #[test]
    fn missing_metadata_propagates() {
        let s = StudyRecord::new("x", "Title only");
        assert!(matches!(
            build_prompt(&s, 0, Q1, VariantTag::A.variant()),
            Err(PromptError::Metadata(CorpusError::MissingMetadata { field: "abstract", .. }))
        ));
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::parse("no slots").is_err());
        assert!(PromptTemplate::parse("{inclusion_criteria_question} {title} {abstract}").is_err());
        assert!(PromptTemplate::parse("{inclusion_criteria_question}\n{title}\n").is_ok());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_likert("6").unwrap().value(), 6);
        assert_eq!(parse_likert("  7.\n").unwrap().value(), 7);
        assert_eq!(parse_likert("Score: 4").unwrap().value(), 4);
        assert_eq!(parse_likert("**5**").unwrap().value(), 5);
        assert_eq!(parse_likert("I would say 5, maybe 6"), Err(ReplyError::Unparseable));
        assert_eq!(parse_likert("maybe"), Err(ReplyError::Unparseable));
        assert_eq!(parse_likert(""), Err(ReplyError::Unparseable));
        assert_eq!(parse_likert("5.5"), Err(ReplyError::Unparseable));
        assert_eq!(parse_likert("1-7"), Err(ReplyError::Unparseable));
        assert_eq!(parse_likert("8"), Err(ReplyError::OutOfRange { value: 8 }));
        assert_eq!(parse_likert("0"), Err(ReplyError::OutOfRange { value: 0 }));
        assert_eq!(parse_likert("-3"), Err(ReplyError::OutOfRange { value: -3 }));
        assert_eq!(parse_likert("gpt4 answers 6").unwrap().value(), 6);
    }

    #[test]
    fn decide_examples() {
        let s = |v: &[i64]| v.iter().map(|&x| LikertScore::new(x).unwrap()).collect::<Vec<_>>();
        assert_eq!(decide(&s(&[5, 5]), 5).unwrap(), Decision::Include);
        assert_eq!(decide(&s(&[7, 4]), 5).unwrap(), Decision::Exclude);
        assert_eq!(decide(&s(&[6]), 5).unwrap(), Decision::Include);
        assert!(matches!(decide(&[], 5), Err(PromptError::NoScores)));
    }

    #[test]
    fn likert_serde_rejects_out_of_range() {
        assert!(serde_json::from_str::<LikertScore>("9").is_err());
        assert_eq!(serde_json::from_str::<LikertScore>("3").unwrap().value(), 3);
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(v in 1i64..=7, pre in "[ \t\n]{0,3}", post in "[ \t\n.!]{0,3}") {
            let reply = format!("{pre}{v}{post}");
            prop_assert_eq!(parse_likert(&reply).unwrap().value() as i64, v);
        }

        #[test]
        fn decide_is_min_rule_and_monotone(scores in prop::collection::vec(1i64..=7, 1..4), bump in 0usize..4) {
            let ls: Vec<_> = scores.iter().map(|&x| LikertScore::new(x).unwrap()).collect();
            let d = decide(&ls, 5).unwrap();
            prop_assert_eq!(d == Decision::Include, *scores.iter().min().unwrap() >= 5);
            let mut raised = ls.clone();
            let i = bump % raised.len();
            raised[i] = LikertScore::new((raised[i].value() as i64 + 1).min(7)).unwrap();
            if d == Decision::Include {
                prop_assert_eq!(decide(&raised, 5).unwrap(), Decision::Include);
            }
        }
    }
}
