//! HTTPS provider speaking the common chat-completion and embedding JSON shapes.
//!
//! Chat request: `{"model", "messages": [{"role": "user", "content"}], "max_completion_tokens",
//! "temperature", "reasoning_effort"}`; the reply text is `choices[0].message.content`, and a
//! non-null `choices[0].message.refusal` is surfaced as [`ProviderError::Refusal`].
//! Embedding request: `{"model", "input": [..]}`; vectors are read from `data[*].embedding`,
//! ordered by `data[*].index`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, Provider, ProviderError};

pub const API_KEY_ENV: &str = "CODA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteProfile {
    pub chat_url: String,
    pub embedding_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Send `reasoning_effort` with chat requests (reasoning models only).
    #[serde(default = "default_true")]
    pub send_reasoning_effort: bool,
}

fn default_timeout() -> u64 {
    120
}

fn default_true() -> bool {
    true
}

pub struct RemoteProvider {
    profile: RemoteProfile,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteProvider {
    /// Builds a provider, reading the API key from `CODA_API_KEY`.
    pub fn from_env(profile: RemoteProfile) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(profile, key)
    }

    pub fn new(profile: RemoteProfile, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(profile.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            profile,
            api_key,
            agent,
        }
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transport(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(ProviderError::Api(format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Api(format!("invalid JSON: {e}")))
    }

    pub fn chat_body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.profile.chat_model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_completion_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        if self.profile.send_reasoning_effort {
            body["reasoning_effort"] = json!(request.reasoning_effort.as_str());
        }
        body
    }
}

pub fn parse_chat_reply(v: &Value) -> Result<String, ProviderError> {
    let message = &v["choices"][0]["message"];
    if let Some(refusal) = message["refusal"].as_str() {
        return Err(ProviderError::Refusal(refusal.to_string()));
    }
    message["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Api(format!("no choices[0].message.content in {v}")))
}

pub fn parse_embedding_reply(v: &Value, expected: usize) -> Result<Vec<Vec<f32>>, ProviderError> {
    let data = v["data"]
        .as_array()
        .ok_or_else(|| ProviderError::Api("missing data array".into()))?;
    let mut rows: Vec<(u64, Vec<f32>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item["index"].as_u64().unwrap_or(pos as u64);
        let values = item["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::Api(format!("data[{pos}] has no embedding")))?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| ProviderError::Api(format!("data[{pos}] has non-numeric values")))?;
        rows.push((index, values));
    }
    rows.sort_by_key(|r| r.0);
    if rows.len() != expected {
        return Err(ProviderError::Api(format!(
            "expected {expected} embeddings, got {}",
            rows.len()
        )));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

impl Provider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let reply = self.post(&self.profile.chat_url, &self.chat_body(request))?;
        parse_chat_reply(&reply)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = json!({"model": self.profile.embedding_model, "input": texts});
        let reply = self.post(&self.profile.embedding_url, &body)?;
        parse_embedding_reply(&reply, texts.len())
    }

    fn embedding_model(&self) -> &str {
        &self.profile.embedding_model
    }

    fn embedding_dimension(&self) -> usize {
        self.profile.embedding_dimension
    }
}
