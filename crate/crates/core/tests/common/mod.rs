#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use schemalign::agent::{RunConfig, SearchKind};
use schemalign::backend::{
    BackendError, BackendResponse, MapperBackend, MappingRequest, RetryPolicy, ScopeKey, ScriptedBackend,
};
use schemalign::confidence::Conflict;
use schemalign::evidence::EvidenceContext;
use schemalign::providers::{EvidenceProvider, ProviderError, SearchResult};
use schemalign::schema::{Prediction, Schema, SchemaField, SchemaSide};

pub fn source(fields: &[&str]) -> Schema {
    Schema::new(
        "Acme",
        SchemaSide::Source,
        fields.iter().map(|f| SchemaField::new(*f, format!("{f} value"), "string")).collect(),
    )
    .unwrap()
}

pub fn target(fields: &[&str]) -> Schema {
    Schema::new(
        "Common",
        SchemaSide::Target,
        fields.iter().map(|f| SchemaField::new(*f, format!("{f} value"), "string")).collect(),
    )
    .unwrap()
}

/// Mock-backend config: no retries, no sleeps.
pub fn mock_config(alpha: u32) -> RunConfig {
    RunConfig {
        alpha,
        n: 3,
        search: SearchKind::Corpus,
        deterministic: true,
        retry: RetryPolicy::immediate(1),
        ..RunConfig::default()
    }
}

pub fn p(t: &str) -> Prediction {
    Prediction::target(t)
}

/// Full-schema reply for one variant.
pub fn full(backend: ScriptedBackend, variant: Option<usize>, iteration: Option<u32>, rows: &[(&str, &str)]) -> ScriptedBackend {
    let decisions: Vec<(&str, Prediction)> = rows
        .iter()
        .map(|(f, t)| (*f, if *t == "NOT_COVERED" { Prediction::not_covered() } else { p(t) }))
        .collect();
    backend.respond(ScopeKey::Full, variant, iteration, &decisions)
}

pub fn single(backend: ScriptedBackend, field: &str, variant: Option<usize>, t: &str) -> ScriptedBackend {
    backend.respond(ScopeKey::Field(field.into()), variant, None, &[(field, p(t))])
}

/// Returns the same documents for every query and counts calls.
#[derive(Default)]
pub struct StaticProvider {
    pub docs: Vec<SearchResult>,
    pub calls: AtomicUsize,
}

impl StaticProvider {
    pub fn with(snippets: &[&str]) -> Self {
        Self {
            docs: snippets
                .iter()
                .enumerate()
                .map(|(i, s)| SearchResult {
                    title: format!("doc {i}"),
                    locator: format!("doc-{i}"),
                    snippet: s.to_string(),
                })
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }
}

impl EvidenceProvider for StaticProvider {
    fn name(&self) -> &str {
        "static"
    }

    fn search(&self, _query: &str) -> Result<Vec<SearchResult>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.docs.clone())
    }
}

pub struct FailingProvider;

impl EvidenceProvider for FailingProvider {
    fn name(&self) -> &str {
        "failing"
    }

    fn search(&self, _query: &str) -> Result<Vec<SearchResult>, ProviderError> {
        Err(ProviderError::Network("connection refused".into()))
    }
}

/// Delegates mapping but cannot write search queries.
pub struct NoQueryBackend(pub ScriptedBackend);

impl MapperBackend for NoQueryBackend {
    fn name(&self) -> &str {
        "no-query"
    }

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError> {
        self.0.map_fields(request)
    }

    fn formulate_query(
        &self,
        _conflict: &Conflict,
        _context: &EvidenceContext,
        _source: &Schema,
        _target: &Schema,
    ) -> Result<String, BackendError> {
        Err(BackendError::Status(400))
    }
}
