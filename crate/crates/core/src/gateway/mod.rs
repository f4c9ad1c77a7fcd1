//! Uniform access to text generation, embedding and judging.
//!
//! A [`Provider`] only knows how to complete a prompt and embed texts. The [`Gateway`] layers
//! the rest on top: precondition checks, retries on transport failures, a concurrency bound,
//! embedding normalization, prompt rendering from [`prompts`] and parsing of judge replies.
//! Because judging goes through the same templates for every provider, the mock exercises the
//! same parsers as a remote model.

pub mod mock;
pub mod prompts;
pub mod remote;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use mock::{AnswerStyle, MergeRule, MockConfig, MockProvider};
pub use prompts::TemplateId;
pub use remote::{RemoteProfile, RemoteProvider};

use crate::graph::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    #[default]
    Low,
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub reasoning_effort: ReasoningEffort,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_tokens: 2048,
            temperature: 0.0,
            reasoning_effort: ReasoningEffort::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_id: String,
}

impl From<EmbeddingVector> for Embedding {
    fn from(v: EmbeddingVector) -> Self {
        Embedding(v.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    /// Is a claim supported by a context (S(c, C))?
    Support,
    /// Is a required evidence element reflected in an answer (M(k, G))?
    Reflects,
    /// Do two entity records denote the same real-world entity?
    Merge,
    /// Should a retrieved evidence item be kept for a query?
    Eliminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Supported,
    Unsupported,
    Merge,
    KeepDistinct,
    Keep,
    Eliminate,
}

impl QuestionKind {
    pub fn legal(self) -> &'static [Decision] {
        match self {
            QuestionKind::Support | QuestionKind::Reflects => {
                &[Decision::Supported, Decision::Unsupported]
            }
            QuestionKind::Merge => &[Decision::Merge, Decision::KeepDistinct],
            QuestionKind::Eliminate => &[Decision::Keep, Decision::Eliminate],
        }
    }
}

impl Decision {
    pub fn token(self) -> &'static str {
        match self {
            Decision::Supported => "SUPPORTED",
            Decision::Unsupported => "UNSUPPORTED",
            Decision::Merge => "MERGE",
            Decision::KeepDistinct => "KEEP_DISTINCT",
            Decision::Keep => "KEEP",
            Decision::Eliminate => "ELIMINATE",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Decision::Supported | Decision::Merge | Decision::Keep)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub decision: Decision,
    pub rationale: String,
}

/// Entity fields shown to the merge judge.
#[derive(Debug, Clone, Copy)]
pub struct EntitySummary<'a> {
    pub name: &'a str,
    pub description: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub enum JudgeQuestion<'a> {
    Support { claim: &'a str, context: &'a str },
    Reflects { evidence: &'a str, answer: &'a str },
    Merge { a: EntitySummary<'a>, b: EntitySummary<'a> },
}

impl JudgeQuestion<'_> {
    pub fn kind(&self) -> QuestionKind {
        match self {
            JudgeQuestion::Support { .. } => QuestionKind::Support,
            JudgeQuestion::Reflects { .. } => QuestionKind::Reflects,
            JudgeQuestion::Merge { .. } => QuestionKind::Merge,
        }
    }
}

/// One of the two independent context-relevance graders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grader {
    A,
    B,
}

/// Failures reported by a provider.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Connection failures, timeouts, 5xx and 429 responses. Retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("provider error: {0}")]
    Api(String),
    #[error("operation not supported by provider: {0}")]
    Unsupported(&'static str),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn embedding_model(&self) -> &str;

    fn embedding_dimension(&self) -> usize;

    /// Token byte ranges under the provider's own tokenizer, when it exposes one.
    fn token_spans(&self, _text: &str) -> Result<Vec<std::ops::Range<usize>>, ProviderError> {
        Err(ProviderError::Unsupported("tokenizer"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error(transparent)]
    Provider(ProviderError),
    #[error("provider returned an empty reply")]
    EmptyReply,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("provider returned a zero embedding for input {index}")]
    DegenerateEmbedding { index: usize },
    #[error("unparseable {kind} reply: {reply:?}")]
    JudgeFormat { kind: &'static str, reply: String },
    #[error(transparent)]
    Template(#[from] prompts::TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Counting semaphore bounding in-flight provider calls.
#[derive(Debug)]
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.freed.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut p = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *p += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    limiter: Arc<Limiter>,
    parallelism: usize,
    reasoning_effort: ReasoningEffort,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("retry", &self.retry)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            limiter: Arc::new(Limiter::new(4)),
            parallelism: 4,
            reasoning_effort: ReasoningEffort::Low,
        }
    }

    /// Gateway over the deterministic mock provider.
    pub fn mock(config: MockConfig) -> Self {
        Self::new(Arc::new(MockProvider::new(config)))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self.limiter = Arc::new(Limiter::new(self.parallelism));
        self
    }

    pub fn with_reasoning_effort(mut self, effort: ReasoningEffort) -> Self {
        self.reasoning_effort = effort;
        self
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn embedding_model(&self) -> &str {
        self.provider.embedding_model()
    }

    pub fn embedding_dimension(&self) -> usize {
        self.provider.embedding_dimension()
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let result = {
                let _permit = self.limiter.acquire();
                call()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(ProviderError::Transport(m)) => {
                    warn!(attempt, attempts, error = %m, "transport failure");
                    last = m;
                    if attempt < attempts {
                        thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
                Err(other) => return Err(GatewayError::Provider(other)),
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::Precondition("prompt must be non-empty".into()));
        }
        if request.max_output_tokens == 0 {
            return Err(GatewayError::Precondition("max_output_tokens must be positive".into()));
        }
        if !(request.temperature >= 0.0) {
            return Err(GatewayError::Precondition("temperature must be >= 0".into()));
        }
        let text = self.with_retries(|| self.provider.complete(request))?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyReply);
        }
        Ok(text)
    }

    /// Renders `template` and completes it with default sampling parameters.
    pub fn run(
        &self,
        template: TemplateId,
        values: &BTreeMap<&str, String>,
    ) -> Result<String, GatewayError> {
        let prompt = prompts::render(template, values)?;
        self.run_prompt(prompt)
    }

    /// Completes an already-rendered prompt with the gateway's sampling settings.
    pub fn run_prompt(&self, prompt: String) -> Result<String, GatewayError> {
        let mut req = CompletionRequest::new(prompt);
        req.reasoning_effort = self.reasoning_effort;
        self.complete(&req)
    }

    /// Like [`Gateway::run`], but an [`GatewayError::EmptyReply`] becomes `Ok("")`.
    pub fn run_allow_empty(
        &self,
        template: TemplateId,
        values: &BTreeMap<&str, String>,
    ) -> Result<String, GatewayError> {
        match self.run(template, values) {
            Err(GatewayError::EmptyReply) => Ok(String::new()),
            other => other,
        }
    }

    /// Embeds `texts`, returning one unit-norm vector per input in order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("embed needs at least one text".into()));
        }
        let raw = self.with_retries(|| self.provider.embed(texts))?;
        if raw.len() != texts.len() {
            return Err(GatewayError::Provider(ProviderError::Api(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                raw.len()
            ))));
        }
        let dim = self.provider.embedding_dimension();
        let model = self.provider.embedding_model().to_string();
        raw.into_iter()
            .enumerate()
            .map(|(index, mut values)| {
                if values.len() != dim {
                    return Err(GatewayError::DimensionMismatch {
                        expected: dim,
                        actual: values.len(),
                    });
                }
                if !crate::vector::normalize(&mut values) {
                    return Err(GatewayError::DegenerateEmbedding { index });
                }
                Ok(EmbeddingVector {
                    values,
                    model_id: model.clone(),
                })
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    /// Verifies that this gateway's embedder matches what a persisted graph was built with.
    pub fn check_embedding_space(
        &self,
        model: Option<&str>,
        dimension: Option<usize>,
    ) -> Result<(), GatewayError> {
        if let Some(expected) = dimension {
            let actual = self.embedding_dimension();
            if expected != actual {
                return Err(GatewayError::DimensionMismatch { expected, actual });
            }
        }
        if let Some(m) = model {
            if m != self.embedding_model() {
                return Err(GatewayError::Precondition(format!(
                    "graph was embedded with {m:?} but the gateway uses {:?}",
                    self.embedding_model()
                )));
            }
        }
        Ok(())
    }

    /// Asks a binary judge question. An unparseable reply is retried once with a stricter
    /// instruction before surfacing [`GatewayError::JudgeFormat`].
    pub fn judge(&self, question: &JudgeQuestion<'_>) -> Result<JudgeVerdict, GatewayError> {
        let (template, values): (TemplateId, BTreeMap<&str, String>) = match question {
            JudgeQuestion::Support { claim, context } => (
                TemplateId::JudgeSupport,
                BTreeMap::from([("claim", claim.to_string()), ("context", context.to_string())]),
            ),
            JudgeQuestion::Reflects { evidence, answer } => (
                TemplateId::JudgeReflects,
                BTreeMap::from([
                    ("evidence", evidence.to_string()),
                    ("answer", answer.to_string()),
                ]),
            ),
            JudgeQuestion::Merge { a, b } => (
                TemplateId::MergeJudge,
                BTreeMap::from([
                    ("name_a", a.name.to_string()),
                    ("description_a", a.description.to_string()),
                    ("name_b", b.name.to_string()),
                    ("description_b", b.description.to_string()),
                ]),
            ),
        };
        let kind = question.kind();
        let prompt = prompts::render(template, &values)?;
        let reply = self.run_prompt(prompt.clone())?;
        match parse_verdict(&reply, kind) {
            Some(v) => Ok(v),
            None => {
                let reply = self.run_prompt(format!("{prompt}{}", prompts::STRICT_SUFFIX))?;
                parse_verdict(&reply, kind).ok_or(GatewayError::JudgeFormat {
                    kind: "verdict",
                    reply,
                })
            }
        }
    }

    /// Judges a numbered batch of evidence items for a query. Items without a parseable
    /// verdict line come back as `None`.
    pub fn judge_elimination(
        &self,
        query: &str,
        items: &[String],
    ) -> Result<Vec<Option<JudgeVerdict>>, GatewayError> {
        let listing = items
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {}", i + 1, t.replace('\n', " ")))
            .collect::<Vec<_>>()
            .join("\n");
        let values = BTreeMap::from([("query", query.to_string()), ("items", listing)]);
        let prompt = prompts::render(TemplateId::Eliminate, &values)?;
        let reply = self.run_prompt(prompt.clone())?;
        let mut verdicts = parse_numbered_verdicts(&reply, items.len());
        if verdicts.iter().all(Option::is_none) {
            let reply = self.run_prompt(format!("{prompt}{}", prompts::STRICT_SUFFIX))?;
            verdicts = parse_numbered_verdicts(&reply, items.len());
            if verdicts.iter().all(Option::is_none) {
                return Err(GatewayError::JudgeFormat {
                    kind: "elimination batch",
                    reply,
                });
            }
        }
        Ok(verdicts)
    }

    /// A graded relevance judgement in {0, 0.5, 1}.
    pub fn grade_relevance(
        &self,
        query: &str,
        context: &str,
        grader: Grader,
    ) -> Result<f64, GatewayError> {
        let template = match grader {
            Grader::A => TemplateId::GradeRelevanceA,
            Grader::B => TemplateId::GradeRelevanceB,
        };
        let values = BTreeMap::from([("query", query.to_string()), ("context", context.to_string())]);
        let prompt = prompts::render(template, &values)?;
        let reply = self.run_prompt(prompt.clone())?;
        if let Some(g) = parse_grade(&reply) {
            return Ok(g);
        }
        let reply = self.run_prompt(format!("{prompt}{}", prompts::STRICT_SUFFIX))?;
        parse_grade(&reply).ok_or(GatewayError::JudgeFormat {
            kind: "relevance grade",
            reply,
        })
    }

    /// Splits `text` into atomic claims.
    pub fn extract_claims(&self, text: &str) -> Result<Vec<String>, GatewayError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let values = BTreeMap::from([("text", text.to_string())]);
        let reply = self.run_allow_empty(TemplateId::ExtractClaims, &values)?;
        Ok(parse_claims(&reply))
    }

    pub fn token_spans(&self, text: &str) -> Result<Vec<std::ops::Range<usize>>, GatewayError> {
        self.provider.token_spans(text).map_err(GatewayError::Provider)
    }
}

fn first_token(reply: &str) -> Option<(String, String)> {
    let mut lines = reply.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines.next()?;
    let token_end = first
        .find(|c: char| c.is_whitespace() || matches!(c, ':' | ','))
        .unwrap_or(first.len());
    let token = first[..token_end]
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_uppercase();
    let mut rationale = first[token_end..]
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ':' | '-' | ',' | '.'))
        .to_string();
    for l in lines {
        if !rationale.is_empty() {
            rationale.push(' ');
        }
        rationale.push_str(l);
    }
    Some((token, rationale))
}

/// Parses a single-line verdict token (case-insensitive) followed by an optional rationale.
pub fn parse_verdict(reply: &str, kind: QuestionKind) -> Option<JudgeVerdict> {
    let (token, rationale) = first_token(reply)?;
    let token = token.replace('-', "_");
    kind.legal()
        .iter()
        .find(|d| d.token() == token)
        .map(|&decision| JudgeVerdict {
            decision,
            rationale,
        })
}

/// Parses `<n>: KEEP|ELIMINATE - rationale` lines into a vector indexed by item.
pub fn parse_numbered_verdicts(reply: &str, count: usize) -> Vec<Option<JudgeVerdict>> {
    let mut out = vec![None; count];
    for line in reply.lines() {
        let line = line.trim();
        let digits: String = line.chars().take_while(char::is_ascii_digit).collect();
        let Ok(n) = digits.parse::<usize>() else {
            continue;
        };
        if n == 0 || n > count {
            continue;
        }
        let rest = line[digits.len()..].trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, ':' | '.' | ')' | '-')
        });
        if let Some(v) = parse_verdict(rest, QuestionKind::Eliminate) {
            out[n - 1].get_or_insert(v);
        }
    }
    out
}

/// Parses a relevance grade in {0, 0.5, 1} from the first line.
pub fn parse_grade(reply: &str) -> Option<f64> {
    let (token, _) = first_token(reply)?;
    match token.as_str() {
        "0" | "0.0" => Some(0.0),
        "0.5" => Some(0.5),
        "1" | "1.0" => Some(1.0),
        _ => None,
    }
}

/// One claim per non-empty line; leading list markers are removed.
pub fn parse_claims(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            let l = l.trim();
            l.strip_prefix("- ")
                .or_else(|| l.strip_prefix("* "))
                .unwrap_or(l)
                .trim()
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}
