//! Provider-agnostic model access.
//!
//! A [`Gateway`] owns one [`Provider`] per configured model plus a token
//! bucket and an in-flight semaphore per provider. [`Gateway::complete`]
//! retries transient failures with exponential backoff;
//! [`Gateway::complete_cached`] consults the [`Ledger`] first so interrupted
//! runs resume without repeating calls. Round index is part of the cache key,
//! so repeated rounds always reach the provider.

pub mod http;
pub mod ledger;
pub mod mock;
pub mod ratelimit;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::prompting::{parse_likert, PromptInstance};

pub use ledger::{Ledger, LedgerError, RoundTrace, TraceIndex, TraceKey, TraceOutcome};
pub use mock::{mock_provider, MockProvider, MockScript, Replies};
use ratelimit::TokenBucket;

pub const DEFAULT_REQUESTS_PER_MINUTE: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    /// OpenAI chat completions, or any compatible endpoint (Together, vLLM).
    #[serde(alias = "openai_compatible")]
    OpenAi,
    Anthropic,
    Gemini,
}

fn default_max_output_tokens() -> u32 {
    8
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_name: String,
    pub kind: ProviderKind,
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the env var holding the API key. The value is never stored.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// `None` means 60/min for live providers and unlimited for mocks; 0 disables.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub fail_fast_on_rate_limit: bool,
    /// Ask once more when a reply cannot be parsed.
    #[serde(default)]
    pub reask_on_parse_failure: bool,
    #[serde(default)]
    pub mock_script: Option<std::path::PathBuf>,
}

impl ProviderConfig {
    /// Mock configuration with no backoff delay and no rate cap.
    pub fn mock(provider_name: &str, model_id: &str) -> Self {
        Self {
            provider_name: provider_name.into(),
            kind: ProviderKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
            credential_env: None,
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            requests_per_minute: None,
            max_retries: default_max_retries(),
            retry_base_ms: 0,
            max_in_flight: default_max_in_flight(),
            fail_fast_on_rate_limit: false,
            reask_on_parse_failure: false,
            mock_script: None,
        }
    }

    pub fn effective_rate(&self) -> u32 {
        match (self.requests_per_minute, self.kind) {
            (Some(r), _) => r,
            (None, ProviderKind::Mock) => 0,
            (None, _) => DEFAULT_REQUESTS_PER_MINUTE,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidConfig(format!(
                "{}: temperature must be >= 0, got {}",
                self.model_id, self.temperature
            )));
        }
        if self.model_id.is_empty() {
            return Err(GatewayError::InvalidConfig("model_id must not be empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig(format!(
                "{}: max_in_flight must be >= 1",
                self.model_id
            )));
        }
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.retry_base_ms.saturating_mul(1 << exp)).min(Duration::from_secs(30))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    Transport,
    AuthFailure,
    RateLimited,
    ProviderRefusal,
    Unscripted,
}

impl ProviderErrorKind {
    pub fn retryable(self) -> bool {
        matches!(self, ProviderErrorKind::Transport | ProviderErrorKind::RateLimited)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?}: {message}")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub message: String,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("model {0:?} is not configured")]
    UnknownModel(String),
    #[error("model {model_id}: credential env var {env} is not set")]
    MissingCredential { model_id: String, env: String },
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("provider call failed after {attempts} attempt(s): {error}")]
    Provider { error: ProviderError, attempts: u32 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Everything a provider sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a PromptInstance,
    pub prompt_hash: &'a str,
    pub round_index: u32,
    pub config: &'a ProviderConfig,
}

#[async_trait]
pub trait Provider: Send + Sync {
    async fn send(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub reply: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

/// Trace plus whether it came from a fresh provider call.
#[derive(Debug, Clone)]
pub struct CachedTrace {
    pub trace: RoundTrace,
    pub fresh: bool,
}

struct ModelSlot {
    config: ProviderConfig,
    provider: Arc<dyn Provider>,
}

struct ProviderLimits {
    bucket: TokenBucket,
    in_flight: Semaphore,
}

#[derive(Default)]
pub struct Gateway {
    models: HashMap<String, ModelSlot>,
    limits: HashMap<String, Arc<ProviderLimits>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("models", &self.models.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a model. Models sharing a `provider_name` share one rate
    /// limiter and in-flight cap, taken from the first registration.
    pub fn register(
        &mut self,
        config: ProviderConfig,
        provider: Arc<dyn Provider>,
    ) -> Result<&mut Self, GatewayError> {
        config.validate()?;
        self.limits
            .entry(config.provider_name.clone())
            .or_insert_with(|| {
                Arc::new(ProviderLimits {
                    bucket: TokenBucket::per_minute(config.effective_rate()),
                    in_flight: Semaphore::new(config.max_in_flight),
                })
            });
        self.models
            .insert(config.model_id.clone(), ModelSlot { config, provider });
        Ok(self)
    }

    /// Builds providers for every config, resolving credentials up front so
    /// a missing key fails before any call is made. Relative mock script
    /// paths resolve against `base_dir`.
    pub fn from_configs(configs: &[ProviderConfig], base_dir: &Path) -> Result<Self, GatewayError> {
        let mut gw = Gateway::new();
        for c in configs {
            let provider: Arc<dyn Provider> = match c.kind {
                ProviderKind::Mock => {
                    let path = c.mock_script.as_ref().ok_or_else(|| {
                        GatewayError::InvalidConfig(format!("mock model {} needs mock_script", c.model_id))
                    })?;
                    let script = MockScript::load(&base_dir.join(path)).map_err(GatewayError::InvalidConfig)?;
                    Arc::new(MockProvider::new(script))
                }
                _ => {
                    let env = c.credential_env.clone().ok_or_else(|| {
                        GatewayError::InvalidConfig(format!(
                            "live model {} needs credential_env",
                            c.model_id
                        ))
                    })?;
                    let key = std::env::var(&env)
                        .ok()
                        .filter(|v| !v.is_empty())
                        .ok_or_else(|| GatewayError::MissingCredential {
                            model_id: c.model_id.clone(),
                            env: env.clone(),
                        })?;
                    Arc::new(http::HttpProvider::new(c, key))
                }
            };
            gw.register(c.clone(), provider)?;
        }
        Ok(gw)
    }

    pub fn config(&self, model_id: &str) -> Option<&ProviderConfig> {
        self.models.get(model_id).map(|m| &m.config)
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.models.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// One provider reply, with rate limiting and retry of transient errors.
    pub async fn complete(
        &self,
        model_id: &str,
        prompt: &PromptInstance,
        round_index: u32,
    ) -> Result<Completion, GatewayError> {
        let slot = self
            .models
            .get(model_id)
            .ok_or_else(|| GatewayError::UnknownModel(model_id.to_string()))?;
        let limits = &self.limits[&slot.config.provider_name];
        let _permit = limits.in_flight.acquire().await.expect("semaphore open");
        let hash = prompt.hash();
        let request = CompletionRequest {
            prompt,
            prompt_hash: &hash,
            round_index,
            config: &slot.config,
        };
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            if slot.config.fail_fast_on_rate_limit {
                if !limits.bucket.try_acquire().await {
                    return Err(GatewayError::Provider {
                        error: ProviderError::new(
                            ProviderErrorKind::RateLimited,
                            "local request cap reached",
                        ),
                        attempts: attempt,
                    });
                }
            } else {
                limits.bucket.acquire().await;
            }
            match slot.provider.send(&request).await {
                Ok(reply) => {
                    return Ok(Completion {
                        reply,
                        attempts: attempt,
                        latency_ms: start.elapsed().as_millis() as u64,
                    })
                }
                Err(e) if e.kind.retryable() && attempt <= slot.config.max_retries => {
                    log::debug!("retrying {model_id} after {e} (attempt {attempt})");
                    tokio::time::sleep(slot.config.backoff(attempt)).await;
                }
                Err(error) => {
                    return Err(GatewayError::Provider {
                        error,
                        attempts: attempt,
                    })
                }
            }
        }
    }

    /// Returns the stored trace for this identity, or calls the provider,
    /// parses the reply and appends a new trace. Provider failures are
    /// recorded as traces; only configuration and ledger errors propagate.
    pub async fn complete_cached(
        &self,
        ledger: &Ledger,
        model_id: &str,
        prompt: &PromptInstance,
        round_index: u32,
    ) -> Result<CachedTrace, GatewayError> {
        let key = TraceKey {
            study_id: prompt.study_id.clone(),
            criterion_index: prompt.criterion_index,
            model_id: model_id.to_string(),
            variant: prompt.variant.tag(),
            round_index,
        };
        if let Some(trace) = ledger.get(&key) {
            return Ok(CachedTrace { trace, fresh: false });
        }
        let config = self
            .config(model_id)
            .ok_or_else(|| GatewayError::UnknownModel(model_id.to_string()))?
            .clone();

        let (raw_reply, parsed, attempts, latency_ms, reasked) =
            match self.complete(model_id, prompt, round_index).await {
                Ok(first) => match parse_likert(&first.reply) {
                    Ok(value) => (Some(first.reply), TraceOutcome::Score { value }, first.attempts, first.latency_ms, false),
                    Err(_) if config.reask_on_parse_failure => {
                        match self.complete(model_id, prompt, round_index).await {
                            Ok(second) => {
                                let parsed = match parse_likert(&second.reply) {
                                    Ok(value) => TraceOutcome::Score { value },
                                    Err(error) => TraceOutcome::ParseError { error },
                                };
                                (
                                    Some(second.reply),
                                    parsed,
                                    first.attempts + second.attempts,
                                    first.latency_ms + second.latency_ms,
                                    true,
                                )
                            }
                            Err(GatewayError::Provider { error, attempts }) => (
                                Some(first.reply),
                                TraceOutcome::ProviderError { kind: error.kind, message: error.message },
                                first.attempts + attempts,
                                first.latency_ms,
                                true,
                            ),
                            Err(e) => return Err(e),
                        }
                    }
                    Err(error) => (Some(first.reply), TraceOutcome::ParseError { error }, first.attempts, first.latency_ms, false),
                },
                Err(GatewayError::Provider { error, attempts }) => (
                    None,
                    TraceOutcome::ProviderError {
                        kind: error.kind,
                        message: error.message,
                    },
                    attempts,
                    0,
                    false,
                ),
                Err(e) => return Err(e),
            };

        let trace = RoundTrace {
            study_id: key.study_id.clone(),
            criterion_index: key.criterion_index,
            model_id: key.model_id.clone(),
            provider_name: config.provider_name.clone(),
            variant: key.variant,
            round_index,
            prompt_hash: prompt.hash(),
            prompt: prompt.body.clone(),
            raw_reply,
            parsed,
            latency_ms,
            timestamp: Utc::now(),
            attempt_count: attempts,
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
            reasked,
        };
        match ledger.append(trace.clone()) {
            Ok(()) => Ok(CachedTrace { trace, fresh: true }),
            Err(LedgerError::Duplicate(_)) => Ok(CachedTrace {
                trace: ledger.get(&key).expect("duplicate implies present"),
                fresh: false,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{StudyRecord, VariantTag};
    use crate::prompting::build_prompt;

    fn prompt() -> PromptInstance {
        let s = StudyRecord::new("s1", "T").with_abstract("A").with_keywords(["k"]);
        build_prompt(&s, 0, "Q?", VariantTag::C.variant()).unwrap()
    }

    fn gateway_with(provider: Arc<dyn Provider>, config: ProviderConfig) -> Gateway {
        let mut gw = Gateway::new();
        gw.register(config, provider).unwrap();
        gw
    }

    #[tokio::test]
    async fn scripted_by_hash() {
        let p = prompt();
        let mut script = MockScript::default();
        script.by_hash.insert(p.hash(), "6".into());
        let gw = gateway_with(Arc::new(mock_provider(script)), ProviderConfig::mock("mock", "m"));
        let c = gw.complete("m", &p, 1).await.unwrap();
        assert_eq!(c.reply, "6");
        assert_eq!(c.attempts, 1);
    }

    #[tokio::test]
    async fn retries_until_success() {
        let provider = Arc::new(MockProvider::new(MockScript::constant("6")).with_transient_failures(2));
        let gw = gateway_with(provider.clone(), ProviderConfig::mock("mock", "m"));
        let c = gw.complete("m", &prompt(), 1).await.unwrap();
        assert_eq!(c.attempts, 3);
        assert_eq!(provider.calls(), 3);
    }

    #[tokio::test]
    async fn zero_retries_surfaces_transport() {
        let provider = Arc::new(MockProvider::new(MockScript::constant("6")).with_transient_failures(1));
        let config = ProviderConfig {
            max_retries: 0,
            ..ProviderConfig::mock("mock", "m")
        };
        let gw = gateway_with(provider, config);
        match gw.complete("m", &prompt(), 1).await {
            Err(GatewayError::Provider { error, attempts }) => {
                assert_eq!(error.kind, ProviderErrorKind::Transport);
                assert_eq!(attempts, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn unscripted_prompt_names_hash() {
        let gw = gateway_with(Arc::new(mock_provider(MockScript::default())), ProviderConfig::mock("mock", "m"));
        let p = prompt();
        match gw.complete("m", &p, 1).await {
            Err(GatewayError::Provider { error, .. }) => {
                assert_eq!(error.kind, ProviderErrorKind::Unscripted);
                assert!(error.message.contains(&p.hash()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn auth_failures_are_not_retried() {
        let provider = Arc::new(MockProvider::from_fn(|_| {
            Err(ProviderError::new(ProviderErrorKind::AuthFailure, "bad key"))
        }));
        let gw = gateway_with(provider.clone(), ProviderConfig::mock("mock", "m"));
        assert!(gw.complete("m", &prompt(), 1).await.is_err());
        assert_eq!(provider.calls(), 1);
    }

    #[tokio::test]
    async fn fail_fast_rate_cap() {
        let config = ProviderConfig {
            requests_per_minute: Some(1),
            fail_fast_on_rate_limit: true,
            ..ProviderConfig::mock("mock", "m")
        };
        let gw = gateway_with(Arc::new(mock_provider(MockScript::constant("5"))), config);
        gw.complete("m", &prompt(), 1).await.unwrap();
        match gw.complete("m", &prompt(), 2).await {
            Err(GatewayError::Provider { error, .. }) => assert_eq!(error.kind, ProviderErrorKind::RateLimited),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn cached_rounds_are_distinct_and_resumable() {
        let provider = Arc::new(mock_provider(MockScript::constant("6")));
        let gw = gateway_with(provider.clone(), ProviderConfig::mock("mock", "m"));
        let ledger = Ledger::in_memory();
        let p = prompt();
        let r1 = gw.complete_cached(&ledger, "m", &p, 1).await.unwrap();
        let r2 = gw.complete_cached(&ledger, "m", &p, 2).await.unwrap();
        assert!(r1.fresh && r2.fresh);
        assert_eq!(provider.calls(), 2);
        let again = gw.complete_cached(&ledger, "m", &p, 1).await.unwrap();
        assert!(!again.fresh);
        assert_eq!(provider.calls(), 2);
        assert_eq!(again.trace, r1.trace);
        assert_eq!(ledger.len(), 2);
    }

    #[tokio::test]
    async fn parse_errors_are_captured_not_retried() {
        let provider = Arc::new(mock_provider(MockScript::constant("maybe")));
        let gw = gateway_with(provider.clone(), ProviderConfig::mock("mock", "m"));
        let ledger = Ledger::in_memory();
        let t = gw.complete_cached(&ledger, "m", &prompt(), 1).await.unwrap().trace;
        assert!(matches!(t.parsed, TraceOutcome::ParseError { .. }));
        assert_eq!(t.raw_reply.as_deref(), Some("maybe"));
        assert_eq!(provider.calls(), 1);
        assert!(t.hash_matches());
    }

    #[tokio::test]
    async fn reask_flag_allows_one_more_call() {
        let provider = Arc::new(mock_provider(
            MockScript::default().with_study("s1", 0, Replies::PerRound(vec!["?".into()])),
        ));
        let config = ProviderConfig {
            reask_on_parse_failure: true,
            ..ProviderConfig::mock("mock", "m")
        };
        let gw = gateway_with(provider.clone(), config);
        let t = gw.complete_cached(&Ledger::in_memory(), "m", &prompt(), 1).await.unwrap().trace;
        assert!(t.reasked);
        assert_eq!(provider.calls(), 2);
    }

    #[tokio::test]
    async fn provider_failures_become_traces() {
        let provider = Arc::new(MockProvider::new(MockScript::constant("6")).with_transient_failures(10));
        let config = ProviderConfig {
            max_retries: 1,
            ..ProviderConfig::mock("mock", "m")
        };
        let gw = gateway_with(provider, config);
        let t = gw.complete_cached(&Ledger::in_memory(), "m", &prompt(), 1).await.unwrap().trace;
        assert_eq!(t.attempt_count, 2);
        assert!(matches!(t.parsed, TraceOutcome::ProviderError { kind: ProviderErrorKind::Transport, .. }));
    }

    #[test]
    fn missing_credential_fails_before_any_call() {
        let config = ProviderConfig {
            kind: ProviderKind::OpenAi,
            credential_env: Some("SCREENING_TEST_SURELY_UNSET_KEY".into()),
            ..ProviderConfig::mock("openai", "gpt-4o")
        };
        match Gateway::from_configs(&[config], Path::new(".")) {
            Err(GatewayError::MissingCredential { env, .. }) => assert_eq!(env, "SCREENING_TEST_SURELY_UNSET_KEY"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_temperature_rejected() {
        let config = ProviderConfig {
            temperature: -0.1,
            ..ProviderConfig::mock("mock", "m")
        };
        assert!(config.validate().is_err());
        let parsed: ProviderConfig =
            toml::from_str("provider_name = \"openai\"\nkind = \"openai\"\nmodel_id = \"gpt-4o\"\n").unwrap();
        assert_eq!(parsed.temperature, 0.0);
        assert_eq!(parsed.max_output_tokens, 8);
        assert_eq!(parsed.effective_rate(), 60);
    }
}
