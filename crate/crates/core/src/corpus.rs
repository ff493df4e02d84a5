//! Study metadata: ingest, validation, duplicate detection, sampling and
//! feature-variant composition.
//!
//! JSONL is the canonical on-disk format (one [`StudyRecord`] per line).
//! CSV is accepted through a [`ColumnMapping`] supplied by the run config.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {format} input at row {row}: {message}")]
    Malformed {
        format: &'static str,
        row: usize,
        message: String,
    },
    #[error("no valid study records in {0}")]
    Empty(PathBuf),
    #[error("duplicate study id {id:?} at rows {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("study {study_id} is missing required metadata: {field}")]
    MissingMetadata {
        study_id: String,
        field: &'static str,
    },
    #[error("sample size {requested} is invalid for a corpus of {available} studies")]
    SampleSize { requested: usize, available: usize },
    #[error("corpus declares no inclusion criteria")]
    NoCriteria,
    #[error("unknown feature variant {0:?}")]
    UnknownVariant(String),
    #[error("i/o error writing corpus: {0}")]
    Write(#[from] std::io::Error),
}

/// Reference screening decision of the original review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Included,
    Excluded,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Included => "included",
            Label::Excluded => "excluded",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "included" | "include" => Ok(Label::Included),
            "excluded" | "exclude" => Ok(Label::Excluded),
            other => Err(format!("malformed label {other:?}")),
        }
    }
}

/// One candidate study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub keywords: Option<Vec<String>>,
    pub label: Option<Label>,
    pub source: Option<String>,
}

impl StudyRecord {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            abstract_text: None,
            keywords: None,
            label: None,
            source: None,
        }
    }

    pub fn with_abstract(mut self, text: impl Into<String>) -> Self {
        self.abstract_text = Some(text.into());
        self
    }

    pub fn with_keywords<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.keywords = Some(keywords.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    /// Abstract text, treating blank strings as absent.
    pub fn abstract_present(&self) -> Option<&str> {
        self.abstract_text
            .as_deref()
            .filter(|a| !a.trim().is_empty())
    }

    /// Keywords, treating an empty list as absent.
    pub fn keywords_present(&self) -> Option<&[String]> {
        self.keywords.as_deref().filter(|k| !k.is_empty())
    }
}

/// Tag of one of the five metadata compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantTag {
    A,
    B,
    C,
    D,
    E,
}

impl VariantTag {
    pub const ALL: [VariantTag; 5] = [
        VariantTag::A,
        VariantTag::B,
        VariantTag::C,
        VariantTag::D,
        VariantTag::E,
    ];

    pub fn variant(self) -> FeatureVariant {
        FeatureVariant::from_tag(self)
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VariantTag::A => "A",
            VariantTag::B => "B",
            VariantTag::C => "C",
            VariantTag::D => "D",
            VariantTag::E => "E",
        };
        f.write_str(s)
    }
}

impl FromStr for VariantTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(VariantTag::A),
            "B" => Ok(VariantTag::B),
            "C" => Ok(VariantTag::C),
            "D" => Ok(VariantTag::D),
            "E" => Ok(VariantTag::E),
            _ => Err(CorpusError::UnknownVariant(s.to_string())),
        }
    }
}

/// Which metadata sections a prompt carries. Only constructible from a tag,
/// so the five fixed compositions are the only ones that exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "VariantTag", into = "VariantTag")]
pub struct FeatureVariant {
    tag: VariantTag,
    includes_title: bool,
    includes_abstract: bool,
    includes_keywords: bool,
}

impl From<VariantTag> for FeatureVariant {
    fn from(tag: VariantTag) -> Self {
        FeatureVariant::from_tag(tag)
    }
}

impl From<FeatureVariant> for VariantTag {
    fn from(v: FeatureVariant) -> Self {
        v.tag
    }
}

impl FeatureVariant {
    pub const fn from_tag(tag: VariantTag) -> Self {
        let (includes_title, includes_abstract, includes_keywords) = match tag {
            VariantTag::A => (false, true, false),
            VariantTag::B => (true, true, false),
            VariantTag::C => (true, true, true),
            VariantTag::D => (false, true, true),
            VariantTag::E => (true, false, true),
        };
        Self {
            tag,
            includes_title,
            includes_abstract,
            includes_keywords,
        }
    }

    pub fn all() -> [FeatureVariant; 5] {
        VariantTag::ALL.map(FeatureVariant::from_tag)
    }

    pub fn tag(&self) -> VariantTag {
        self.tag
    }

    pub fn includes_title(&self) -> bool {
        self.includes_title
    }

    pub fn includes_abstract(&self) -> bool {
        self.includes_abstract
    }

    pub fn includes_keywords(&self) -> bool {
        self.includes_keywords
    }

    /// First field the variant needs that `study` lacks, if any.
    pub fn missing_field(&self, study: &StudyRecord) -> Option<&'static str> {
        if self.includes_title && study.title.trim().is_empty() {
            return Some("title");
        }
        if self.includes_abstract && study.abstract_present().is_none() {
            return Some("abstract");
        }
        if self.includes_keywords && study.keywords_present().is_none() {
            return Some("keywords");
        }
        None
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag)
    }
}

/// Labels of the metadata lines, shared with the prompt template.
pub const TITLE_LABEL: &str = "**Title:**";
pub const ABSTRACT_LABEL: &str = "**Abstract:**";
pub const KEYWORDS_LABEL: &str = "**Keywords:**";

pub fn render_keywords(keywords: &[String]) -> String {
    keywords.join(", ")
}

/// Ordered labeled metadata block (Title, Abstract, Keywords) for a variant.
pub fn compose_metadata(study: &StudyRecord, variant: FeatureVariant) -> Result<String, CorpusError> {
    if let Some(field) = variant.missing_field(study) {
        return Err(CorpusError::MissingMetadata {
            study_id: study.id.clone(),
            field,
        });
    }
    let mut lines = Vec::with_capacity(3);
    if variant.includes_title() {
        lines.push(format!("{TITLE_LABEL} {}", study.title));
    }
    if let (true, Some(text)) = (variant.includes_abstract(), study.abstract_text.as_deref()) {
        lines.push(format!("{ABSTRACT_LABEL} {text}"));
    }
    if let (true, Some(kw)) = (variant.includes_keywords(), study.keywords.as_deref()) {
        lines.push(format!("{KEYWORDS_LABEL} {}", render_keywords(kw)));
    }
    Ok(lines.join("\n"))
}

/// Case-folded, whitespace-collapsed title used for duplicate detection.
pub fn normalize_title(title: &str) -> String {
    title
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits a CSV keyword cell on `;` if present, otherwise on `,`.
pub fn split_keywords(cell: &str) -> Vec<String> {
    let sep = if cell.contains(';') { ';' } else { ',' };
    cell.split(sep)
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub studies: Vec<StudyRecord>,
    pub inclusion_criteria: Vec<String>,
}

impl Corpus {
    /// Builds a corpus, enforcing id uniqueness and a non-empty criteria list.
    pub fn new(
        name: impl Into<String>,
        studies: Vec<StudyRecord>,
        inclusion_criteria: Vec<String>,
    ) -> Result<Self, CorpusError> {
        if inclusion_criteria.is_empty() {
            return Err(CorpusError::NoCriteria);
        }
        let mut seen = HashMap::new();
        for (row, s) in studies.iter().enumerate() {
            if let Some(first) = seen.insert(s.id.as_str(), row) {
                return Err(CorpusError::DuplicateId {
                    id: s.id.clone(),
                    first: first + 1,
                    second: row + 1,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            studies,
            inclusion_criteria,
        })
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StudyRecord> {
        self.studies.iter().find(|s| s.id == id)
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.studies.iter().map(|s| s.label).collect()
    }

    /// Pairs of study ids whose normalized titles coincide.
    pub fn duplicate_title_pairs(&self) -> Vec<(String, String)> {
        let mut by_title: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        for s in &self.studies {
            by_title
                .entry(normalize_title(&s.title))
                .or_default()
                .push(&s.id);
        }
        let mut pairs = Vec::new();
        for ids in by_title.values() {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    pairs.push((ids[i].to_string(), ids[j].to_string()));
                }
            }
        }
        pairs
    }

    /// Studies eligible for `variant`, plus `(id, field)` for those skipped.
    pub fn partition_by_variant(
        &self,
        variant: FeatureVariant,
    ) -> (Vec<&StudyRecord>, Vec<(String, &'static str)>) {
        let mut eligible = Vec::new();
        let mut skipped = Vec::new();
        for s in &self.studies {
            match variant.missing_field(s) {
                None => eligible.push(s),
                Some(field) => skipped.push((s.id.clone(), field)),
            }
        }
        (eligible, skipped)
    }

    /// `n` distinct studies drawn uniformly without replacement, ordered by id.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
        sample(self, n, seed)
    }

    pub fn export_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        for s in &self.studies {
            serde_json::to_writer(&mut out, s).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn sample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n == 0 || n > corpus.len() {
        return Err(CorpusError::SampleSize {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut studies: Vec<StudyRecord> = index::sample(&mut rng, corpus.len(), n)
        .into_iter()
        .map(|i| corpus.studies[i].clone())
        .collect();
    studies.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus {
        name: corpus.name.clone(),
        studies,
        inclusion_criteria: corpus.inclusion_criteria.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "ndjson" => Ok(InputFormat::Jsonl),
            other => Err(format!("unknown input format {other:?}")),
        }
    }
}

/// Source column (CSV) or field (JSONL) names for each study attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_col: String,
    pub keywords: String,
    pub label: String,
    pub source: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            id: "id".into(),
            title: "title".into(),
            abstract_col: "abstract".into(),
            keywords: "keywords".into(),
            label: "label".into(),
            source: "source".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingId,
    MissingTitle,
    MalformedLabel(String),
    Unparseable(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MissingId => f.write_str("missing id"),
            RejectReason::MissingTitle => f.write_str("missing title"),
            RejectReason::MalformedLabel(v) => write!(f, "malformed label {v:?}"),
            RejectReason::Unparseable(m) => write!(f, "unparseable row: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub id: Option<String>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
    pub duplicate_titles: Vec<(String, String)>,
    pub missing_abstract: usize,
    pub missing_keywords: usize,
}

/// Raw attribute values of one input row before validation.
struct RawRow {
    id: Option<String>,
    title: Option<String>,
    abstract_text: Option<String>,
    keywords: Option<Vec<String>>,
    label: Option<String>,
    source: Option<String>,
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

/// Reads a corpus file, rejecting invalid rows with a reason.
///
/// Duplicate ids abort the ingest instead of being silently dropped.
pub fn ingest(
    path: &Path,
    format: InputFormat,
    mapping: &ColumnMapping,
    name: &str,
    criteria: Vec<String>,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let rows = match format {
        InputFormat::Csv => read_csv_rows(file, mapping)?,
        InputFormat::Jsonl => read_jsonl_rows(file, mapping, path)?,
    };

    let mut report = IngestReport::default();
    let mut studies = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    for (i, raw) in rows.into_iter().enumerate() {
        let row = i + 1;
        let raw = match raw {
            Ok(r) => r,
            Err(message) => {
                report.rejected.push(RejectedRow {
                    row,
                    id: None,
                    reason: RejectReason::Unparseable(message),
                });
                continue;
            }
        };
        let Some(id) = non_blank(raw.id).map(|s| s.trim().to_string()) else {
            report.rejected.push(RejectedRow {
                row,
                id: None,
                reason: RejectReason::MissingId,
            });
            continue;
        };
        let Some(title) = non_blank(raw.title) else {
            report.rejected.push(RejectedRow {
                row,
                id: Some(id),
                reason: RejectReason::MissingTitle,
            });
            continue;
        };
        let label = match non_blank(raw.label) {
            None => None,
            Some(v) => match v.parse::<Label>() {
                Ok(l) => Some(l),
                Err(_) => {
                    report.rejected.push(RejectedRow {
                        row,
                        id: Some(id),
                        reason: RejectReason::MalformedLabel(v),
                    });
                    continue;
                }
            },
        };
        if let Some(first) = seen_ids.insert(id.clone(), row) {
            return Err(CorpusError::DuplicateId {
                id,
                first,
                second: row,
            });
        }
        let study = StudyRecord {
            id,
            title: title.trim().to_string(),
            abstract_text: non_blank(raw.abstract_text),
            keywords: raw.keywords.filter(|k| !k.is_empty()),
            label,
            source: non_blank(raw.source),
        };
        if study.abstract_text.is_none() {
            report.missing_abstract += 1;
        }
        if study.keywords.is_none() {
            report.missing_keywords += 1;
        }
        studies.push(study);
    }
    if studies.is_empty() {
        return Err(CorpusError::Empty(path.to_path_buf()));
    }
    let corpus = Corpus::new(name, studies, criteria)?;
    report.accepted = corpus.len();
    report.duplicate_titles = corpus.duplicate_title_pairs();
    Ok((corpus, report))
}

type RowResult = Result<RawRow, String>;

fn read_csv_rows(file: File, mapping: &ColumnMapping) -> Result<Vec<RowResult>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            format: "csv",
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_c, title_c) = (col(&mapping.id), col(&mapping.title));
    if id_c.is_none() || title_c.is_none() {
        return Err(CorpusError::Malformed {
            format: "csv",
            row: 0,
            message: format!(
                "header must contain id column {:?} and title column {:?}",
                mapping.id, mapping.title
            ),
        });
    }
    let abs_c = col(&mapping.abstract_col);
    let kw_c = col(&mapping.keywords);
    let label_c = col(&mapping.label);
    let src_c = col(&mapping.source);

    let mut rows = Vec::new();
    for record in reader.records() {
        let row = match record {
            Ok(rec) => {
                let get = |c: Option<usize>| c.and_then(|i| rec.get(i)).map(str::to_string);
                Ok(RawRow {
                    id: get(id_c),
                    title: get(title_c),
                    abstract_text: get(abs_c),
                    keywords: get(kw_c).map(|k| split_keywords(&k)),
                    label: get(label_c),
                    source: get(src_c),
                })
            }
            Err(e) => Err(e.to_string()),
        };
        rows.push(row);
    }
    Ok(rows)
}

fn json_text(v: Option<&Value>) -> Result<Option<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(other) => Err(format!("expected string, found {other}")),
    }
}

fn read_jsonl_rows(
    file: File,
    mapping: &ColumnMapping,
    path: &Path,
) -> Result<Vec<RowResult>, CorpusError> {
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                let obj = v.as_object().ok_or("expected a JSON object")?;
                let keywords = match obj.get(&mapping.keywords) {
                    None | Some(Value::Null) => None,
                    Some(Value::Array(items)) => Some(
                        items
                            .iter()
                            .map(|k| k.as_str().map(str::to_string).ok_or("keyword must be a string"))
                            .collect::<Result<Vec<_>, _>>()?,
                    ),
                    Some(Value::String(s)) => Some(split_keywords(s)),
                    Some(_) => return Err("keywords must be a list of strings".to_string()),
                };
                Ok(RawRow {
                    id: json_text(obj.get(&mapping.id))?,
                    title: json_text(obj.get(&mapping.title))?,
                    abstract_text: json_text(obj.get(&mapping.abstract_col))?,
                    keywords,
                    label: json_text(obj.get(&mapping.label))?,
                    source: json_text(obj.get(&mapping.source))?,
                })
            });
        rows.push(parsed);
    }
    Ok(rows)
}

/// Loads a canonical JSONL corpus written by [`Corpus::export_jsonl`].
pub fn load_jsonl(path: &Path, name: &str, criteria: Vec<String>) -> Result<Corpus, CorpusError> {
    ingest(path, InputFormat::Jsonl, &ColumnMapping::default(), name, criteria).map(|(c, _)| c)
}

/// Ids of studies in `ids` that do not belong to `corpus`.
pub fn unknown_ids<'a>(corpus: &Corpus, ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let known: HashSet<&str> = corpus.studies.iter().map(|s| s.id.as_str()).collect();
    ids.into_iter()
        .filter(|id| !known.contains(id))
        .map(str::to_string)
        .collect()
}
