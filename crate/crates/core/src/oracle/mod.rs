//! Answer-generating oracles.
//!
//! An [`Oracle`] turns a question plus an optional context into one answer
//! attempt. Evidentiality is defined by whether that attempt is correct, so
//! every oracle must be deterministic for a fixed request (HTTP oracles are
//! queried at temperature 0 and cached).

mod cache;
mod http;
mod prompt;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contains_token_run, normalize_answer, normalized_tokens};

pub use cache::{request_hash, CacheCounters, CachedOracle};
pub use http::{HttpConfig, HttpOracle, HttpResponse, Transport, UreqTransport, API_KEY_ENV};
pub use prompt::{
    render_prompt, PromptError, PromptTemplate, TemplateId, EVIDENTIALITY_TEMPLATE, QA_TEMPLATE,
};
pub use scripted::{Condition, ScriptRule, ScriptedOracle, ScriptedOracleTable};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint answered with status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OracleRequest {
    pub question: String,
    /// `None` asks closed-book.
    pub context: Option<String>,
    #[serde(default)]
    pub template: TemplateId,
}

impl OracleRequest {
    pub fn closed_book(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            context: None,
            template: TemplateId::Qa,
        }
    }

    pub fn with_context(question: impl Into<String>, context: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            context: Some(context.into()),
            template: TemplateId::Qa,
        }
    }

    pub fn render(&self) -> Result<String, PromptError> {
        render_prompt(self.template, &self.question, self.context.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptSource {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAttempt {
    /// Verbatim model output.
    pub raw_text: String,
    #[serde(with = "duration_secs")]
    pub latency: Duration,
    pub source: AttemptSource,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

pub trait Oracle: Send + Sync {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError>;

    /// Stable name of the underlying model; namespaces cache keys.
    fn identity(&self) -> String;

    fn cache_counters(&self) -> Option<CacheCounters> {
        None
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        (**self).generate(request)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn cache_counters(&self) -> Option<CacheCounters> {
        (**self).cache_counters()
    }
}

impl<O: Oracle + ?Sized> Oracle for Arc<O> {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        (**self).generate(request)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn cache_counters(&self) -> Option<CacheCounters> {
        (**self).cache_counters()
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        (**self).generate(request)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn cache_counters(&self) -> Option<CacheCounters> {
        (**self).cache_counters()
    }
}

pub fn generate_answer(
    oracle: &dyn Oracle,
    request: &OracleRequest,
) -> Result<AnswerAttempt, OracleError> {
    oracle.generate(request)
}

/// How an attempt is compared against the gold aliases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Normalized strings must be equal.
    Exact,
    /// Some normalized alias occurs as a whole-token run of the normalized
    /// attempt.
    #[default]
    Containment,
}

pub fn is_correct(attempt: &AnswerAttempt, gold_answers: &[String], mode: MatchMode) -> bool {
    answer_matches(&attempt.raw_text, gold_answers, mode)
}

pub fn answer_matches(text: &str, gold_answers: &[String], mode: MatchMode) -> bool {
    match mode {
        MatchMode::Exact => {
            let pred = normalize_answer(text);
            gold_answers.iter().any(|g| normalize_answer(g) == pred)
        }
        MatchMode::Containment => {
            let pred = normalized_tokens(text);
            gold_answers
                .iter()
                .any(|g| contains_token_run(&pred, &normalized_tokens(g)))
        }
    }
}

/// Counts calls that reach the wrapped oracle.
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O: Oracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Oracle> Oracle for CountingOracle<O> {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.generate(request)
    }
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn cache_counters(&self) -> Option<CacheCounters> {
        self.inner.cache_counters()
    }
}
