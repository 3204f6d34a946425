//! The iterative mapping loop.
//!
//! Each iteration:
//! 1. maps every source field with `n` prompt variants, using the retained
//!    evidence as facts;
//! 2. collects the fields whose variants disagree;
//! 3. for each such field (ascending name): asks the backend for a search
//!    query, retrieves and sanitizes excerpts, re-maps the field with the
//!    candidate evidence added, and retains the evidence only if the field's
//!    confidence strictly rises.
//!
//! Ground truth, when supplied, is read only after an iteration's decisions
//! are final, to fill [`IterationRecord::accuracy`].

mod checkpoint;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{make_variant, BackendError, MapperBackend, MappingRequest, RetryPolicy, TaskScope};
use crate::confidence::{compute_confidence, detect_conflicts, evaluate_accuracy, Conflict};
use crate::error::{Error, Result};
use crate::evidence::{render_tuple, EvidenceContext, EvidenceTuple, Ledger, LedgerEntry, RetentionDecision, TupleRecord, Incident};
use crate::providers::{resolution_plan, sanitize, template_query, EvidenceProvider, EXCERPTS_PER_QUERY};
use crate::schema::{Decision, GroundTruth, MappingHypothesis, Prediction, Schema};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    Mock,
    OracleSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchKind {
    Web,
    Corpus,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Iteration limit.
    pub alpha: u32,
    /// Prompt variants per mapping.
    pub n: usize,
    /// Fields below this confidence are flagged for review.
    pub review_threshold: f64,
    /// Retained-evidence cap; `None` is unbounded.
    pub context_cap: Option<usize>,
    pub seed: u64,
    pub backend: BackendKind,
    pub search: SearchKind,
    pub stop_on_no_conflicts: bool,
    /// Accepted evidence becomes visible to later fields of the same
    /// iteration instead of from the next iteration on.
    pub immediate_context_updates: bool,
    /// Re-map the whole schema when evaluating candidate evidence.
    pub full_remap_evaluation: bool,
    /// Issue variant requests and candidate evaluations on worker threads.
    pub parallel: bool,
    pub deterministic: bool,
    pub retry: RetryPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 100,
            n: 3,
            review_threshold: 1.0,
            context_cap: Some(crate::evidence::DEFAULT_CONTEXT_CAP),
            seed: 0,
            backend: BackendKind::OracleSim,
            search: SearchKind::Corpus,
            stop_on_no_conflicts: true,
            immediate_context_updates: false,
            full_remap_evaluation: false,
            parallel: false,
            deterministic: true,
            retry: RetryPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::Config("iteration limit must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("at least 2 variants are needed to detect conflicts".into()));
        }
        if !(self.review_threshold > 0.0 && self.review_threshold <= 1.0) {
            return Err(Error::Config("review threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub iteration: u32,
    pub hypothesis: MappingHypothesis,
    pub context: EvidenceContext,
    /// Confidence each field must beat for evidence to be kept; seeded from
    /// the first hypothesis and raised only on acceptance.
    pub per_field_confidence: BTreeMap<String, f64>,
}

impl AgentState {
    pub fn fresh(context_cap: Option<usize>) -> Self {
        Self {
            iteration: 0,
            hypothesis: MappingHypothesis::default(),
            context: EvidenceContext::with_cap(context_cap),
            per_field_confidence: BTreeMap::new(),
        }
    }
}

/// Investigating one conflicted field with one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub field: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub modal_prediction: Decision,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub mean_confidence: f64,
    pub conflict_fields: Vec<String>,
    pub tuples_proposed: usize,
    pub tuples_accepted: usize,
    pub tuples_rejected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub per_field: BTreeMap<String, FieldSnapshot>,
}

impl IterationRecord {
    /// Fields whose confidence is below `threshold`.
    pub fn flagged(&self, threshold: f64) -> Vec<&str> {
        self.per_field
            .iter()
            .filter(|(_, s)| s.confidence < threshold)
            .map(|(f, _)| f.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_accuracy: Option<f64>,
    pub final_mean_confidence: f64,
    pub initial_conflicts: usize,
    pub final_conflicts: usize,
    pub tuples_accepted: usize,
    pub tuples_rejected: usize,
}

impl RunSummary {
    pub fn from_records(records: &[IterationRecord]) -> Self {
        let last = records.last();
        Self {
            iterations: last.map_or(0, |r| r.iteration),
            final_accuracy: last.and_then(|r| r.accuracy),
            final_mean_confidence: last.map_or(0.0, |r| r.mean_confidence),
            initial_conflicts: records.first().map_or(0, |r| r.conflict_fields.len()),
            final_conflicts: last.map_or(0, |r| r.conflict_fields.len()),
            tuples_accepted: records.iter().map(|r| r.tuples_accepted).sum(),
            tuples_rejected: records.iter().map(|r| r.tuples_rejected).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub state: AgentState,
    pub records: Vec<IterationRecord>,
    /// Ledger entries written during this session.
    pub ledger_entries: Vec<LedgerEntry>,
    /// Set when the run stopped early because the backend was unreachable.
    pub aborted: Option<String>,
}

impl RunOutcome {
    pub fn hypothesis(&self) -> &MappingHypothesis {
        &self.state.hypothesis
    }

    pub fn context(&self) -> &EvidenceContext {
        &self.state.context
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary::from_records(&self.records)
    }
}

/// Result of investigating one conflicted field, before the retention
/// decision is applied.
struct Investigation {
    tuple: EvidenceTuple,
    incidents: Vec<(String, String)>,
}

pub struct Agent<'a> {
    config: RunConfig,
    source: Arc<Schema>,
    target: Arc<Schema>,
    backend: &'a dyn MapperBackend,
    provider: &'a dyn EvidenceProvider,
    truth: Option<&'a GroundTruth>,
    ledger: Option<Ledger>,
    checkpoint_path: Option<PathBuf>,
    entries: Vec<LedgerEntry>,
    /// Ledger lines present before this session started.
    ledger_base: usize,
}

impl<'a> Agent<'a> {
    pub fn new(
        config: RunConfig,
        source: &Schema,
        target: &Schema,
        backend: &'a dyn MapperBackend,
        provider: &'a dyn EvidenceProvider,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            source: Arc::new(source.clone()),
            target: Arc::new(target.clone()),
            backend,
            provider,
            truth: None,
            ledger: None,
            checkpoint_path: None,
            entries: Vec::new(),
            ledger_base: 0,
        })
    }

    pub fn with_truth(mut self, truth: &'a GroundTruth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_ledger(mut self, ledger: Ledger) -> Self {
        self.ledger = Some(ledger);
        self
    }

    /// Writes a checkpoint after every completed iteration.
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::fresh(self.config.context_cap)
    }

    pub fn run(&mut self) -> Result<RunOutcome> {
        let state = self.initial_state();
        self.drive(state, Vec::new())
    }

    /// Continues a checkpointed run. The checkpoint must come from the same
    /// schemas; the stored configuration is used except for `alpha`, which is
    /// taken from this agent so a resumed run can extend the limit.
    pub fn resume(&mut self, checkpoint: Checkpoint) -> Result<RunOutcome> {
        checkpoint.validate_against(&self.source, &self.target)?;
        let alpha = self.config.alpha;
        self.config = checkpoint.config.clone();
        self.config.alpha = alpha;
        if let Some(ledger) = &self.ledger {
            checkpoint.trim_ledger(ledger)?;
        }
        self.drive(checkpoint.state, checkpoint.records)
    }

    fn drive(&mut self, mut state: AgentState, mut records: Vec<IterationRecord>) -> Result<RunOutcome> {
        self.entries.clear();
        self.ledger_base = match &self.ledger {
            Some(l) if l.path().exists() => l.load()?.len(),
            _ => 0,
        };
        let mut aborted = None;
        let stopped = self.config.stop_on_no_conflicts
            && records.last().is_some_and(|r| r.conflict_fields.is_empty());
        if !stopped {
            while state.iteration < self.config.alpha {
                let mut next = state.clone();
                match self.run_iteration(&mut next) {
                    Ok(record) => {
                        let done = self.config.stop_on_no_conflicts && record.conflict_fields.is_empty();
                        state = next;
                        records.push(record);
                        self.save_checkpoint(&state, &records)?;
                        if done {
                            break;
                        }
                    }
                    Err(Error::Aborted { iteration, reason }) => {
                        tracing::error!(iteration, %reason, "run aborted");
                        aborted = Some(reason);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(RunOutcome {
            state,
            records,
            ledger_entries: std::mem::take(&mut self.entries),
            aborted,
        })
    }

    fn save_checkpoint(&self, state: &AgentState, records: &[IterationRecord]) -> Result<()> {
        let Some(path) = &self.checkpoint_path else {
            return Ok(());
        };
        let ledger_entries = match &self.ledger {
            Some(_) => self.ledger_base + self.entries.len(),
            None => 0,
        };
        Checkpoint::new(&self.config, &self.source, &self.target, state.clone(), records.to_vec(), ledger_entries)
            .save(path)
    }

    fn log_entry(&mut self, entry: LedgerEntry) -> Result<()> {
        if let Some(ledger) = &self.ledger {
            ledger.append_entry(&entry)?;
        }
        self.entries.push(entry);
        Ok(())
    }

    fn timestamp(&self) -> String {
        match &self.ledger {
            Some(l) => l.timestamp(),
            None => Ledger::new("", self.config.deterministic).timestamp(),
        }
    }

    fn log_incident(&mut self, iteration: u32, kind: &str, field: Option<&str>, detail: &str) -> Result<()> {
        let entry = LedgerEntry::Incident(Incident {
            iteration,
            incident: kind.to_string(),
            field: field.map(str::to_string),
            detail: detail.to_string(),
            timestamp: self.timestamp(),
        });
        self.log_entry(entry)
    }

    /// One pass of generate → detect → investigate → retain.
    pub fn run_iteration(&mut self, state: &mut AgentState) -> Result<IterationRecord> {
        let iteration = state.iteration + 1;
        let frozen_blocks = state.context.render();

        let (hypothesis, failures) = self.generate_hypothesis(&frozen_blocks, iteration);
        if failures.len() == self.config.n {
            return Err(Error::Aborted {
                iteration,
                reason: format!("all {} variant requests failed: {}", self.config.n, failures[0]),
            });
        }
        for failure in &failures {
            self.log_incident(iteration, "backend_variant_failure", None, &failure.to_string())?;
        }
        let hypothesis = hypothesis?;
        let conflicts = detect_conflicts(&hypothesis, self.config.n)?;

        if state.per_field_confidence.is_empty() {
            state.per_field_confidence = hypothesis
                .entries
                .iter()
                .map(|(f, e)| (f.clone(), e.confidence))
                .collect();
        }

        let mut accepted = 0;
        let mut rejected = 0;
        let batched = !self.config.immediate_context_updates;
        let investigations: Vec<Option<Investigation>> = if batched && self.config.parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = conflicts
                    .iter()
                    .map(|c| {
                        let blocks = &frozen_blocks;
                        let ctx = &state.context;
                        let agent = &*self;
                        let before = previous_confidence(&state.per_field_confidence, c);
                        scope.spawn(move || agent.investigate(c, before, ctx, blocks, iteration))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| Some(h.join().expect("investigation thread panicked")))
                    .collect()
            })
        } else {
            conflicts.iter().map(|_| None).collect()
        };

        for (conflict, done) in conflicts.iter().zip(investigations) {
            let before = previous_confidence(&state.per_field_confidence, conflict);
            let investigation = match done {
                Some(inv) => inv,
                None if batched => self.investigate(conflict, before, &state.context, &frozen_blocks, iteration),
                None => {
                    let live = state.context.render();
                    self.investigate(conflict, before, &state.context, &live, iteration)
                }
            };
            let Investigation { mut tuple, incidents } = investigation;
            for (kind, detail) in incidents {
                self.log_incident(iteration, &kind, Some(&conflict.field), &detail)?;
            }
            let decision = state.context.update(&mut tuple);
            if decision == RetentionDecision::Accepted {
                accepted += 1;
                // Acceptance implies after > stored, so the map never decreases.
                state
                    .per_field_confidence
                    .insert(tuple.field.clone(), tuple.confidence_after);
            } else {
                rejected += 1;
            }
            let entry = LedgerEntry::Tuple(TupleRecord {
                tuple,
                decision,
                timestamp: self.timestamp(),
            });
            self.log_entry(entry)?;
        }

        let accuracy = self.truth.map(|t| evaluate_accuracy(&hypothesis, t).accuracy);
        let record = IterationRecord {
            iteration,
            mean_confidence: hypothesis.mean_confidence(),
            conflict_fields: conflicts.iter().map(|c| c.field.clone()).collect(),
            tuples_proposed: conflicts.len(),
            tuples_accepted: accepted,
            tuples_rejected: rejected,
            accuracy,
            per_field: hypothesis
                .entries
                .iter()
                .map(|(f, e)| {
                    (
                        f.clone(),
                        FieldSnapshot {
                            modal_prediction: e.modal_prediction.decision.clone(),
                            confidence: e.confidence,
                        },
                    )
                })
                .collect(),
        };
        state.iteration = iteration;
        state.hypothesis = hypothesis;
        Ok(record)
    }

    fn call(&self, request: &MappingRequest) -> std::result::Result<crate::backend::BackendResponse, BackendError> {
        self.config.retry.run(|| self.backend.map_fields(request))
    }

    fn variant_requests(&self, base: &MappingRequest) -> Vec<MappingRequest> {
        (0..self.config.n)
            .map(|k| make_variant(base, k, self.config.n, self.config.seed).expect("k < n"))
            .collect()
    }

    fn call_variants(
        &self,
        requests: &[MappingRequest],
    ) -> Vec<std::result::Result<crate::backend::BackendResponse, BackendError>> {
        if self.config.parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = requests
                    .iter()
                    .map(|r| scope.spawn(move || self.call(r)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("variant thread panicked"))
                    .collect()
            })
        } else {
            requests.iter().map(|r| self.call(r)).collect()
        }
    }

    /// Maps every source field with `n` variants. A failed variant
    /// contributes `MISSING` for all fields; its error is returned alongside.
    pub fn generate_hypothesis(
        &self,
        context_blocks: &[String],
        iteration: u32,
    ) -> (Result<MappingHypothesis>, Vec<BackendError>) {
        let base = MappingRequest::full_schema(&self.source, self.target.clone(), context_blocks.to_vec(), iteration);
        let requests = self.variant_requests(&base);
        let mut per_field: BTreeMap<String, Vec<Prediction>> = self
            .source
            .field_names()
            .map(|f| (f.to_string(), Vec::with_capacity(self.config.n)))
            .collect();
        let mut failures = Vec::new();
        for (request, response) in requests.iter().zip(self.call_variants(&requests)) {
            let response = response.unwrap_or_else(|e| {
                failures.push(e);
                crate::backend::BackendResponse::all_missing(request)
            });
            for (field, preds) in per_field.iter_mut() {
                preds.push(response.prediction_for(field).cloned().unwrap_or_else(Prediction::missing));
            }
        }
        (MappingHypothesis::from_variants(per_field), failures)
    }

    /// Re-maps `field` with the candidate evidence prepended to the facts and
    /// returns the resulting confidence plus the first self-reported
    /// confidence among modal answers. Any backend failure scores 0.
    pub fn evaluate_candidate(
        &self,
        field: &str,
        draft: &EvidenceTuple,
        context_blocks: &[String],
        iteration: u32,
    ) -> std::result::Result<(f64, Option<u8>), BackendError> {
        let mut blocks = Vec::with_capacity(context_blocks.len() + 1);
        blocks.push(render_tuple(draft));
        blocks.extend_from_slice(context_blocks);
        let base = if self.config.full_remap_evaluation {
            MappingRequest::full_schema(&self.source, self.target.clone(), blocks, iteration)
        } else {
            MappingRequest::single_field(&self.source, field, self.target.clone(), blocks, iteration)?
        };
        let requests = self.variant_requests(&base);
        let mut preds = Vec::with_capacity(requests.len());
        for response in self.call_variants(&requests) {
            let response = response?;
            preds.push(response.prediction_for(field).cloned().unwrap_or_else(Prediction::missing));
        }
        let score = compute_confidence(&preds).map_err(|e| BackendError::Decode(e.to_string()))?;
        let reported = preds
            .iter()
            .find(|p| p.decision == score.modal)
            .and_then(|p| p.self_reported_confidence);
        Ok((score.value, reported))
    }

    fn investigate(
        &self,
        conflict: &Conflict,
        before: f64,
        context: &EvidenceContext,
        blocks: &[String],
        iteration: u32,
    ) -> Investigation {
        let mut incidents = Vec::new();
        let query = match self
            .config
            .retry
            .run(|| self.backend.formulate_query(conflict, context, &self.source, &self.target))
        {
            Ok(q) if !q.trim().is_empty() => q,
            outcome => {
                let detail = match outcome {
                    Err(e) => e.to_string(),
                    Ok(_) => "empty query".to_string(),
                };
                incidents.push(("query_fallback".to_string(), detail));
                template_query(conflict, self.source.name(), self.target.name())
            }
        };
        let summary = conflict.summary();
        let plan = resolution_plan(conflict);

        let results = match self.provider.search(&query) {
            Ok(r) => r,
            Err(e) => {
                incidents.push(("provider_failure".to_string(), e.to_string()));
                let tuple = EvidenceTuple::new(iteration, &conflict.field, summary, plan, query, Vec::new(), before, before);
                return Investigation { tuple, incidents };
            }
        };
        let excerpts = sanitize(&results, EXCERPTS_PER_QUERY);
        let draft = EvidenceTuple::new(iteration, &conflict.field, &summary, &plan, &query, excerpts.clone(), before, before);
        let (after, reported) = match self.evaluate_candidate(&conflict.field, &draft, blocks, iteration) {
            Ok(v) => v,
            Err(e) => {
                incidents.push(("evaluation_failure".to_string(), e.to_string()));
                (0.0, None)
            }
        };
        let mut tuple = EvidenceTuple::new(iteration, &conflict.field, summary, plan, query, excerpts, before, after);
        tuple.self_reported_confidence = reported;
        Investigation { tuple, incidents }
    }
}

/// The confidence a candidate must beat: the stored per-field value, which
/// starts at the field's first-iteration confidence.
fn previous_confidence(stored: &BTreeMap<String, f64>, conflict: &Conflict) -> f64 {
    stored
        .get(&conflict.field)
        .copied()
        .unwrap_or(conflict.confidence.value)
}

/// Runs the loop from scratch with the given collaborators.
pub fn run(
    config: RunConfig,
    source: &Schema,
    target: &Schema,
    truth: Option<&GroundTruth>,
    backend: &dyn MapperBackend,
    provider: &dyn EvidenceProvider,
) -> Result<RunOutcome> {
    let mut agent = Agent::new(config, source, target, backend, provider)?;
    if let Some(t) = truth {
        agent = agent.with_truth(t);
    }
    agent.run()
}

/// The scope a request targets, for diagnostics.
pub fn describe_scope(scope: &TaskScope) -> String {
    match scope {
        TaskScope::FullSchema => "full schema".to_string(),
        TaskScope::SingleField(f) => format!("field {f}"),
    }
}
