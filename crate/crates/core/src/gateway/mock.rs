//! Deterministic offline provider.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{CompletionRequest, Provider, ProviderError, ProviderErrorKind};

/// Either one reply for every round or one reply per round (1-based). Rounds
/// past the end of a sequence repeat its last entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Replies {
    One(String),
    PerRound(Vec<String>),
}

impl Replies {
    fn for_round(&self, round_index: u32) -> Option<&str> {
        match self {
            Replies::One(r) => Some(r),
            Replies::PerRound(seq) => {
                let i = (round_index.max(1) as usize - 1).min(seq.len().checked_sub(1)?);
                seq.get(i).map(String::as_str)
            }
        }
    }
}

impl From<&str> for Replies {
    fn from(s: &str) -> Self {
        Replies::One(s.to_string())
    }
}

/// Scripted replies, looked up by prompt hash first, then by
/// (study id, criterion index), then the default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub by_hash: HashMap<String, Replies>,
    pub by_study: HashMap<String, HashMap<usize, Replies>>,
    pub default: Option<Replies>,
    /// Transport failures injected before each (prompt, round) succeeds.
    pub transient_failures: u32,
}

impl MockScript {
    pub fn constant(reply: &str) -> Self {
        Self {
            default: Some(reply.into()),
            ..Self::default()
        }
    }

    pub fn with_study(mut self, study_id: &str, criterion_index: usize, replies: Replies) -> Self {
        self.by_study
            .entry(study_id.to_string())
            .or_default()
            .insert(criterion_index, replies);
        self
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read mock script {}: {e}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| format!("malformed mock script {}: {e}", path.display()))
    }

    fn reply(&self, req: &CompletionRequest<'_>) -> Option<&str> {
        let round = req.round_index;
        if let Some(r) = self.by_hash.get(req.prompt_hash) {
            return r.for_round(round);
        }
        if let Some(r) = self
            .by_study
            .get(&req.prompt.study_id)
            .and_then(|m| m.get(&req.prompt.criterion_index))
        {
            return r.for_round(round);
        }
        self.default.as_ref().and_then(|r| r.for_round(round))
    }
}

type ReplyFn = dyn Fn(&CompletionRequest<'_>) -> Result<String, ProviderError> + Send + Sync;

enum Responder {
    Script(MockScript),
    Func(Arc<ReplyFn>),
}

/// Provider answering from a [`MockScript`] or a closure, counting calls.
pub struct MockProvider {
    responder: Responder,
    transient_failures: u32,
    attempts: Mutex<HashMap<(String, u32), u32>>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider")
            .field("calls", &self.calls())
            .finish_non_exhaustive()
    }
}

/// Builds a scripted mock provider.
pub fn mock_provider(script: MockScript) -> MockProvider {
    MockProvider::new(script)
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            transient_failures: script.transient_failures,
            responder: Responder::Script(script),
            attempts: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Mock whose replies are computed from the request.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest<'_>) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        Self {
            responder: Responder::Func(Arc::new(f)),
            transient_failures: 0,
            attempts: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_transient_failures(mut self, n: u32) -> Self {
        self.transient_failures = n;
        self
    }

    /// Every `send`, including injected failures.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Provider for MockProvider {
    async fn send(&self, req: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.transient_failures > 0 {
            let mut attempts = self.attempts.lock().expect("mock lock");
            let n = attempts
                .entry((req.prompt_hash.to_string(), req.round_index))
                .or_insert(0);
            *n += 1;
            if *n <= self.transient_failures {
                return Err(ProviderError::new(
                    ProviderErrorKind::Transport,
                    format!("injected failure {n}"),
                ));
            }
        }
        match &self.responder {
            Responder::Func(f) => f(req),
            Responder::Script(script) => script.reply(req).map(str::to_string).ok_or_else(|| {
                ProviderError::new(
                    ProviderErrorKind::Unscripted,
                    format!("no scripted reply for prompt {}", req.prompt_hash),
                )
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_round_sequences_repeat_last() {
        let r = Replies::PerRound(vec!["5".into(), "4".into()]);
        assert_eq!(r.for_round(1), Some("5"));
        assert_eq!(r.for_round(2), Some("4"));
        assert_eq!(r.for_round(9), Some("4"));
        assert_eq!(Replies::PerRound(vec![]).for_round(1), None);
    }

    #[test]
    fn script_parses_from_json_and_toml() {
        let json: MockScript = serde_json::from_str(
            r#"{"default":"7","by_study":{"s1":{"0":["5","5","5","5","4"]}},"transient_failures":1}"#,
        )
        .unwrap();
        assert_eq!(json.default, Some("7".into()));
        assert_eq!(json.transient_failures, 1);
        let toml: MockScript = toml::from_str("default = \"6\"\ntransient_failures = 2\n").unwrap();
        assert_eq!(toml.default, Some("6".into()));
    }
}
