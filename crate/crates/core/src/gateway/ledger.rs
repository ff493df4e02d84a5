//! Append-only JSONL run ledger of [`RoundTrace`]s.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::VariantTag;
use crate::prompting::{prompt_hash, LikertScore, ReplyError};

use super::ProviderErrorKind;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ledger {path} line {line} is corrupt: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("trace {0} already recorded")]
    Duplicate(TraceKey),
    #[error("trace {key} prompt hash does not match its stored prompt")]
    HashMismatch { key: TraceKey },
}

/// Identity of one (study, criterion, model, variant, round) exchange.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceKey {
    pub study_id: String,
    pub criterion_index: usize,
    pub model_id: String,
    pub variant: VariantTag,
    pub round_index: u32,
}

impl std::fmt::Display for TraceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/c{}/{}/{}/r{}",
            self.study_id, self.criterion_index, self.model_id, self.variant, self.round_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TraceOutcome {
    Score { value: LikertScore },
    ParseError { error: ReplyError },
    ProviderError { kind: ProviderErrorKind, message: String },
}

impl TraceOutcome {
    pub fn score(&self) -> Option<LikertScore> {
        match self {
            TraceOutcome::Score { value } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub study_id: String,
    pub criterion_index: usize,
    pub model_id: String,
    pub provider_name: String,
    pub variant: VariantTag,
    pub round_index: u32,
    pub prompt_hash: String,
    pub prompt: String,
    pub raw_reply: Option<String>,
    pub parsed: TraceOutcome,
    pub latency_ms: u64,
    pub timestamp: DateTime<Utc>,
    pub attempt_count: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub reasked: bool,
}

impl RoundTrace {
    pub fn key(&self) -> TraceKey {
        TraceKey {
            study_id: self.study_id.clone(),
            criterion_index: self.criterion_index,
            model_id: self.model_id.clone(),
            variant: self.variant,
            round_index: self.round_index,
        }
    }

    pub fn hash_matches(&self) -> bool {
        prompt_hash(&self.prompt) == self.prompt_hash
    }
}

struct Inner {
    file: Option<File>,
    index: HashMap<TraceKey, usize>,
    traces: Vec<RoundTrace>,
}

/// Append-only trace store. Appends are serialized through one writer and
/// flushed per line; existing lines are never rewritten.
pub struct Ledger {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger")
            .field("path", &self.path)
            .field("len", &self.len())
            .finish()
    }
}

impl Ledger {
    /// Opens (or creates) a ledger file, loading every stored trace.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let io = |source| LedgerError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut traces = Vec::new();
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let trace: RoundTrace =
                    serde_json::from_str(&line).map_err(|e| LedgerError::Corrupt {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                let key = trace.key();
                if index.insert(key.clone(), traces.len()).is_some() {
                    return Err(LedgerError::Duplicate(key));
                }
                traces.push(trace);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                file: Some(file),
                index,
                traces,
            }),
        })
    }

    /// Ledger without a backing file, for tests and dry runs.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                file: None,
                index: HashMap::new(),
                traces: Vec::new(),
            }),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("ledger lock").traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &TraceKey) -> Option<RoundTrace> {
        let inner = self.inner.lock().expect("ledger lock");
        inner.index.get(key).map(|&i| inner.traces[i].clone())
    }

    pub fn append(&self, trace: RoundTrace) -> Result<(), LedgerError> {
        let key = trace.key();
        let mut inner = self.inner.lock().expect("ledger lock");
        if inner.index.contains_key(&key) {
            return Err(LedgerError::Duplicate(key));
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&trace).expect("trace serializes");
            line.push(b'\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(&line)
                .and_then(|_| file.flush())
                .map_err(|source| LedgerError::Io { path, source })?;
        }
        let pos = inner.traces.len();
        inner.index.insert(key, pos);
        inner.traces.push(trace);
        Ok(())
    }

    /// All traces in append order.
    pub fn traces(&self) -> Vec<RoundTrace> {
        self.inner.lock().expect("ledger lock").traces.clone()
    }

    /// Checks every stored prompt hash against its prompt.
    pub fn verify(&self) -> Result<(), LedgerError> {
        let inner = self.inner.lock().expect("ledger lock");
        match inner.traces.iter().find(|t| !t.hash_matches()) {
            Some(t) => Err(LedgerError::HashMismatch { key: t.key() }),
            None => Ok(()),
        }
    }
}

/// Read-only keyed view over a set of traces.
#[derive(Debug, Clone, Default)]
pub struct TraceIndex {
    traces: HashMap<TraceKey, RoundTrace>,
}

impl TraceIndex {
    pub fn new(traces: impl IntoIterator<Item = RoundTrace>) -> Self {
        Self {
            traces: traces.into_iter().map(|t| (t.key(), t)).collect(),
        }
    }

    pub fn get(&self, key: &TraceKey) -> Option<&RoundTrace> {
        self.traces.get(key)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn for_study<'a>(&'a self, study_id: &'a str) -> impl Iterator<Item = &'a RoundTrace> + 'a {
        self.traces.values().filter(move |t| t.study_id == study_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RoundTrace> {
        self.traces.values()
    }
}

impl From<&Ledger> for TraceIndex {
    fn from(ledger: &Ledger) -> Self {
        TraceIndex::new(ledger.traces())
    }
}
