//! Request adapters for chat-completion style provider APIs.

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{CompletionRequest, Provider, ProviderConfig, ProviderError, ProviderErrorKind, ProviderKind};

pub const OPENAI_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const ANTHROPIC_ENDPOINT: &str = "https://api.anthropic.com/v1/messages";
pub const GEMINI_ENDPOINT: &str = "https://generativelanguage.googleapis.com/v1beta/models";
const ANTHROPIC_VERSION: &str = "2023-06-01";

pub fn endpoint_url(config: &ProviderConfig) -> String {
    match config.kind {
        ProviderKind::OpenAi => config.endpoint.clone().unwrap_or_else(|| OPENAI_ENDPOINT.into()),
        ProviderKind::Anthropic => config
            .endpoint
            .clone()
            .unwrap_or_else(|| ANTHROPIC_ENDPOINT.into()),
        ProviderKind::Gemini => {
            let base = config.endpoint.as_deref().unwrap_or(GEMINI_ENDPOINT);
            format!("{}/{}:generateContent", base.trim_end_matches('/'), config.model_id)
        }
        ProviderKind::Mock => String::new(),
    }
}

pub fn request_body(config: &ProviderConfig, prompt: &str) -> Value {
    match config.kind {
        ProviderKind::OpenAi => json!({
            "model": config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }),
        ProviderKind::Anthropic => json!({
            "model": config.model_id,
            "max_tokens": config.max_output_tokens,
            "temperature": config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }),
        ProviderKind::Gemini => json!({
            "contents": [{"role": "user", "parts": [{"text": prompt}]}],
            "generationConfig": {
                "temperature": config.temperature,
                "maxOutputTokens": config.max_output_tokens,
            },
        }),
        ProviderKind::Mock => Value::Null,
    }
}

pub fn classify_status(status: u16) -> ProviderErrorKind {
    match status {
        401 | 403 => ProviderErrorKind::AuthFailure,
        408 | 429 => ProviderErrorKind::RateLimited,
        500..=599 => ProviderErrorKind::Transport,
        _ => ProviderErrorKind::ProviderRefusal,
    }
}

fn refusal(msg: impl Into<String>) -> ProviderError {
    ProviderError::new(ProviderErrorKind::ProviderRefusal, msg)
}

/// Pulls the reply text out of a successful response body.
pub fn extract_reply(kind: ProviderKind, body: &Value) -> Result<String, ProviderError> {
    let text = match kind {
        ProviderKind::OpenAi => body["choices"][0]["message"]["content"].as_str(),
        ProviderKind::Anthropic => body["content"]
            .as_array()
            .and_then(|blocks| blocks.iter().find(|b| b["type"] == "text"))
            .and_then(|b| b["text"].as_str()),
        ProviderKind::Gemini => {
            if let Some(reason) = body["promptFeedback"]["blockReason"].as_str() {
                return Err(refusal(format!("prompt blocked: {reason}")));
            }
            body["candidates"][0]["content"]["parts"][0]["text"].as_str()
        }
        ProviderKind::Mock => None,
    };
    text.map(str::to_string)
        .ok_or_else(|| refusal(format!("response carries no reply text: {body}")))
}

/// Live provider over HTTPS.
#[derive(Debug)]
pub struct HttpProvider {
    client: reqwest::Client,
    kind: ProviderKind,
    url: String,
    api_key: String,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig, api_key: String) -> Self {
        Self {
            client: reqwest::Client::new(),
            kind: config.kind,
            url: endpoint_url(config),
            api_key,
        }
    }
}

#[async_trait]
impl Provider for HttpProvider {
    async fn send(&self, req: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let body = request_body(req.config, &req.prompt.body);
        let builder = self.client.post(&self.url).json(&body);
        let builder = match self.kind {
            ProviderKind::OpenAi => builder.bearer_auth(&self.api_key),
            ProviderKind::Anthropic => builder
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", ANTHROPIC_VERSION),
            ProviderKind::Gemini => builder.header("x-goog-api-key", &self.api_key),
            ProviderKind::Mock => builder,
        };
        let resp = builder
            .send()
            .await
            .map_err(|e| ProviderError::new(ProviderErrorKind::Transport, e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ProviderError::new(ProviderErrorKind::Transport, e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::new(
                classify_status(status.as_u16()),
                format!("HTTP {status}: {}", text.chars().take(300).collect::<String>()),
            ));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::new(ProviderErrorKind::Transport, format!("bad JSON: {e}")))?;
        extract_reply(self.kind, &value)
    }
}
