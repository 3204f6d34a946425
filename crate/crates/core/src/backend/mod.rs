//! The pluggable mapping function: prompt construction, prompt variants,
//! response parsing, and the backend implementations.
//!
//! - [`HttpBackend`]: chat-completion endpoint configured from the environment
//! - [`ReplayBackend`]: serves recorded completions keyed by request hash
//! - [`ScriptedBackend`]: canned responses keyed by (scope, variant, iteration)
//! - `sim::OracleBackend`: the simulated noisy oracle

mod http;
mod mock;
mod parse;
mod prompt;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::Conflict;
use crate::evidence::EvidenceContext;
use crate::schema::{Prediction, Schema, SchemaField};

pub use http::{
    request_hash, HttpBackend, HttpConfig, ReplayBackend, ReplayRecord, ENV_API_KEY, ENV_ENDPOINT_URL,
    ENV_MODEL_NAME,
};
pub use mock::{ScopeKey, ScriptEntry, ScriptedBackend};
pub use parse::{parse_response, render_response};
pub use prompt::{
    build_search_prompt, build_system_prompt, build_user_prompt, make_variant, PHRASINGS,
    RESPONSE_FORMAT, SAMPLED_TEMPERATURE,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskScope {
    FullSchema,
    SingleField(String),
}

/// One mapping call. `iteration` is carried so seeded backends can key their
/// randomness; it never appears in prompt text.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingRequest {
    pub scope: TaskScope,
    pub source_fields: Vec<SchemaField>,
    pub target: Arc<Schema>,
    pub context_blocks: Vec<String>,
    pub variant_index: usize,
    pub iteration: u32,
    pub temperature: f64,
}

impl MappingRequest {
    pub fn full_schema(source: &Schema, target: Arc<Schema>, context_blocks: Vec<String>, iteration: u32) -> Self {
        Self {
            scope: TaskScope::FullSchema,
            source_fields: source.fields().to_vec(),
            target,
            context_blocks,
            variant_index: 0,
            iteration,
            temperature: 0.0,
        }
    }

    /// Request scoped to one source field. Fails if the field is unknown.
    pub fn single_field(
        source: &Schema,
        field: &str,
        target: Arc<Schema>,
        context_blocks: Vec<String>,
        iteration: u32,
    ) -> Result<Self, BackendError> {
        let f = source
            .field(field)
            .ok_or_else(|| BackendError::InvalidRequest(format!("unknown source field '{field}'")))?;
        Ok(Self {
            scope: TaskScope::SingleField(field.to_string()),
            source_fields: vec![f.clone()],
            target,
            context_blocks,
            variant_index: 0,
            iteration,
            temperature: 0.0,
        })
    }

    pub fn has_source_field(&self, name: &str) -> bool {
        self.source_fields.iter().any(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub raw_text: String,
    /// One entry per requested source field, in request order.
    pub decisions: Vec<(String, Prediction)>,
}

impl BackendResponse {
    pub fn prediction_for(&self, field: &str) -> Option<&Prediction> {
        self.decisions.iter().find(|(f, _)| f == field).map(|(_, p)| p)
    }

    /// Every requested field as `MISSING`, used when a call fails outright.
    pub fn all_missing(request: &MappingRequest) -> Self {
        Self {
            raw_text: String::new(),
            decisions: request
                .source_fields
                .iter()
                .map(|f| (f.name.clone(), Prediction::missing()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("quota exhausted (HTTP 429)")]
    Quota,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unexpected reply shape: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for {0}")]
    ScriptMissing(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Quota | BackendError::Transport(_) => true,
            BackendError::Status(code) => *code >= 500,
            _ => false,
        }
    }
}

/// The mapping function `F(S, E)` plus the search-query generator.
pub trait MapperBackend: Send + Sync {
    fn name(&self) -> &str;

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError>;

    /// Produces one search query for a conflicted field.
    fn formulate_query(
        &self,
        conflict: &Conflict,
        context: &EvidenceContext,
        source: &Schema,
        target: &Schema,
    ) -> Result<String, BackendError>;
}

impl<B: MapperBackend + ?Sized> MapperBackend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError> {
        (**self).map_fields(request)
    }

    fn formulate_query(
        &self,
        conflict: &Conflict,
        context: &EvidenceContext,
        source: &Schema,
        target: &Schema,
    ) -> Result<String, BackendError> {
        (**self).formulate_query(conflict, context, source, target)
    }
}

/// Exponential backoff: `attempts` tries, sleeping `base_delay * 2^k` between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay_ms: 0,
        }
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let attempts = self.attempts.max(1);
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                    let delay = self.base_delay_ms.saturating_mul(1 << attempt.min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    tracing::debug!(attempt, error = %e, "retrying backend call");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
