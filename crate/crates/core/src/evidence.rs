//! Evidence tuples, the retained evidence context, and the append-only
//! JSONL ledger every proposed tuple is written to.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retained-context size used when none is configured.
pub const DEFAULT_CONTEXT_CAP: usize = 50;

/// Timestamp written in deterministic mode.
pub const FIXED_EPOCH: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TupleWire")]
pub struct EvidenceTuple {
    pub iteration: u32,
    pub field: String,
    pub conflict_summary: String,
    pub resolution_plan: String,
    pub query: String,
    pub excerpts: Vec<String>,
    pub confidence_before: f64,
    pub confidence_after: f64,
    pub reward: f64,
    pub accepted: bool,
    #[serde(default)]
    pub self_reported_confidence: Option<u8>,
    #[serde(skip)]
    dedupe_key: String,
}

impl EvidenceTuple {
    /// Builds an undecided tuple; `reward` is derived from the two confidences.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        iteration: u32,
        field: impl Into<String>,
        conflict_summary: impl Into<String>,
        resolution_plan: impl Into<String>,
        query: impl Into<String>,
        excerpts: Vec<String>,
        confidence_before: f64,
        confidence_after: f64,
    ) -> Self {
        let field = field.into();
        let query = query.into();
        let dedupe_key = dedupe_key(&field, &query, &excerpts);
        Self {
            iteration,
            field,
            conflict_summary: conflict_summary.into(),
            resolution_plan: resolution_plan.into(),
            query,
            excerpts,
            confidence_before,
            confidence_after,
            reward: compute_reward(confidence_after, confidence_before),
            accepted: false,
            self_reported_confidence: None,
            dedupe_key,
        }
    }

    pub fn dedupe_key(&self) -> &str {
        &self.dedupe_key
    }

}

/// Serialized form of [`EvidenceTuple`]; the dedupe key is recomputed on load.
#[derive(Deserialize)]
struct TupleWire {
    iteration: u32,
    field: String,
    conflict_summary: String,
    resolution_plan: String,
    query: String,
    excerpts: Vec<String>,
    confidence_before: f64,
    confidence_after: f64,
    reward: f64,
    accepted: bool,
    #[serde(default)]
    self_reported_confidence: Option<u8>,
}

impl From<TupleWire> for EvidenceTuple {
    fn from(w: TupleWire) -> Self {
        let dedupe_key = dedupe_key(&w.field, &w.query, &w.excerpts);
        Self {
            iteration: w.iteration,
            field: w.field,
            conflict_summary: w.conflict_summary,
            resolution_plan: w.resolution_plan,
            query: w.query,
            excerpts: w.excerpts,
            confidence_before: w.confidence_before,
            confidence_after: w.confidence_after,
            reward: w.reward,
            accepted: w.accepted,
            self_reported_confidence: w.self_reported_confidence,
            dedupe_key,
        }
    }
}

/// Reward for a candidate piece of evidence: the confidence change it caused.
pub fn compute_reward(confidence_after: f64, confidence_before: f64) -> f64 {
    confidence_after - confidence_before
}

pub fn dedupe_key(field: &str, query: &str, excerpts: &[String]) -> String {
    let mut parts: Vec<&[u8]> = vec![field.as_bytes(), query.as_bytes()];
    parts.extend(excerpts.iter().map(|e| e.as_bytes()));
    hex::encode(crate::util::sha256_parts(parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RetentionDecision {
    Accepted,
    RejectedNoImprovement,
    RejectedDuplicate,
}

impl RetentionDecision {
    pub fn is_accepted(self) -> bool {
        self == RetentionDecision::Accepted
    }
}

/// Accepted evidence carried into every later mapping prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceContext {
    retained: Vec<EvidenceTuple>,
    /// `None` means unbounded.
    cap: Option<usize>,
}

impl Default for EvidenceContext {
    fn default() -> Self {
        Self::with_cap(Some(DEFAULT_CONTEXT_CAP))
    }
}

impl EvidenceContext {
    pub fn with_cap(cap: Option<usize>) -> Self {
        Self {
            retained: Vec::new(),
            cap,
        }
    }

    pub fn unbounded() -> Self {
        Self::with_cap(None)
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn retained(&self) -> &[EvidenceTuple] {
        &self.retained
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.retained.iter().any(|t| t.dedupe_key == key)
    }

    /// Decides whether `tuple` is retained. Acceptance requires a strictly
    /// positive confidence change and a dedupe key not currently retained.
    /// The tuple's `accepted` flag is set to match the decision.
    pub fn update(&mut self, tuple: &mut EvidenceTuple) -> RetentionDecision {
        let decision = self.judge(tuple);
        tuple.accepted = decision.is_accepted();
        if tuple.accepted {
            self.retained.push(tuple.clone());
            if let Some(cap) = self.cap {
                if self.retained.len() > cap {
                    let excess = self.retained.len() - cap;
                    self.retained.drain(..excess);
                }
            }
        }
        decision
    }

    fn judge(&self, tuple: &EvidenceTuple) -> RetentionDecision {
        if !(tuple.confidence_after > tuple.confidence_before) {
            RetentionDecision::RejectedNoImprovement
        } else if self.contains_key(&tuple.dedupe_key) {
            RetentionDecision::RejectedDuplicate
        } else {
            RetentionDecision::Accepted
        }
    }

    /// One text block per retained tuple, newest first.
    pub fn render(&self) -> Vec<String> {
        self.retained.iter().rev().map(render_tuple).collect()
    }
}

pub fn context_update(context: &mut EvidenceContext, tuple: &mut EvidenceTuple) -> RetentionDecision {
    context.update(tuple)
}

pub fn render_context(context: &EvidenceContext) -> Vec<String> {
    context.render()
}

pub fn render_tuple(tuple: &EvidenceTuple) -> String {
    let mut block = format!(
        "field: {}\nplan: {}\nevidence:",
        tuple.field, tuple.resolution_plan
    );
    if tuple.excerpts.is_empty() {
        block.push_str(" (none)");
    }
    for excerpt in &tuple.excerpts {
        block.push_str("\n- ");
        block.push_str(excerpt);
    }
    block
}

/// A backend or provider failure worth auditing next to the evidence trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub iteration: u32,
    pub incident: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub detail: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    #[serde(flatten)]
    pub tuple: EvidenceTuple,
    pub decision: RetentionDecision,
    pub timestamp: String,
}

/// One ledger line. Incidents carry an `incident` key; tuples never do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LedgerEntry {
    Incident(Incident),
    Tuple(TupleRecord),
}

impl LedgerEntry {
    pub fn as_tuple(&self) -> Option<&TupleRecord> {
        match self {
            LedgerEntry::Tuple(t) => Some(t),
            LedgerEntry::Incident(_) => None,
        }
    }
}

/// Append-only JSONL ledger.
#[derive(Debug, Clone)]
pub struct Ledger {
    path: PathBuf,
    deterministic: bool,
}

impl Ledger {
    pub fn new(path: impl Into<PathBuf>, deterministic: bool) -> Self {
        Self {
            path: path.into(),
            deterministic,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn timestamp(&self) -> String {
        if self.deterministic {
            FIXED_EPOCH.to_string()
        } else {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
        }
    }

    pub fn append_tuple(&self, tuple: &EvidenceTuple, decision: RetentionDecision) -> Result<()> {
        let record = TupleRecord {
            tuple: tuple.clone(),
            decision,
            timestamp: self.timestamp(),
        };
        self.append_entry(&LedgerEntry::Tuple(record))
    }

    pub fn append_incident(&self, iteration: u32, kind: &str, field: Option<&str>, detail: &str) -> Result<()> {
        let incident = Incident {
            iteration,
            incident: kind.to_string(),
            field: field.map(str::to_string),
            detail: detail.to_string(),
            timestamp: self.timestamp(),
        };
        self.append_entry(&LedgerEntry::Incident(incident))
    }

    pub fn append_entry(&self, entry: &LedgerEntry) -> Result<()> {
        let line = serde_json::to_string(entry).expect("ledger entries serialize");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn load(&self) -> Result<Vec<LedgerEntry>> {
        load_ledger(&self.path)
    }
}

pub fn append_ledger(path: &Path, tuple: &EvidenceTuple, decision: RetentionDecision, deterministic: bool) -> Result<()> {
    Ledger::new(path, deterministic).append_tuple(tuple, decision)
}

/// Reads every entry back. A line that does not parse (including a
/// truncated final line) fails with its 1-based line number.
pub fn load_ledger(path: &Path) -> Result<Vec<LedgerEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LedgerEntry = serde_json::from_str(&line).map_err(|e| Error::CorruptLedger {
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Only the tuple records of a ledger, in order.
pub fn load_tuples(path: &Path) -> Result<Vec<TupleRecord>> {
    Ok(load_ledger(path)?
        .into_iter()
        .filter_map(|e| match e {
            LedgerEntry::Tuple(t) => Some(t),
            LedgerEntry::Incident(_) => None,
        })
        .collect())
}

/// Every dedupe key ever retained, used by tests for the retention invariant.
pub fn retained_keys(context: &EvidenceContext) -> HashSet<&str> {
    context.retained.iter().map(|t| t.dedupe_key.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(iter: u32, field: &str, before: f64, after: f64) -> EvidenceTuple {
        EvidenceTuple::new(
            iter,
            field,
            format!("{field}: [A, A, B]"),
            "disambiguate",
            format!("{field} A vs B"),
            vec![format!("excerpt for {field} {iter}")],
            before,
            after,
        )
    }

    #[test]
    fn improvement_accepted() {
        let mut ctx = EvidenceContext::default();
        let mut t = tuple(1, "dpt", 0.67, 1.0);
        assert_eq!(ctx.update(&mut t), RetentionDecision::Accepted);
        assert!(t.accepted);
        assert_eq!(ctx.len(), 1);
    }

    #[test]
    fn equal_confidence_rejected() {
        let mut ctx = EvidenceContext::default();
        let mut t = tuple(1, "dpt", 0.67, 0.67);
        assert_eq!(ctx.update(&mut t), RetentionDecision::RejectedNoImprovement);
        let mut t = tuple(1, "dpt", 0.8, 0.6);
        assert_eq!(ctx.update(&mut t), RetentionDecision::RejectedNoImprovement);
        assert!(ctx.is_empty());
    }

    #[test]
    fn duplicate_rejected_while_retained() {
        let mut ctx = EvidenceContext::default();
        let mut a = tuple(1, "dpt", 0.5, 1.0);
        let mut b = tuple(1, "dpt", 0.5, 1.0);
        assert!(ctx.update(&mut a).is_accepted());
        assert_eq!(ctx.update(&mut b), RetentionDecision::RejectedDuplicate);
    }

    #[test]
    fn render_newest_first_and_capped() {
        let mut ctx = EvidenceContext::default();
        assert!(ctx.render().is_empty());
        for i in 1..=81 {
            let mut t = tuple(i, &format!("f{i}"), 0.5, 1.0);
            ctx.update(&mut t);
        }
        let blocks = ctx.render();
        assert_eq!(blocks.len(), 50);
        assert!(blocks[0].starts_with("field: f81\n"));
        assert!(blocks[49].starts_with("field: f32\n"));
    }

    #[test]
    fn reward_sign() {
        assert!((compute_reward(1.0, 0.67) - 0.33).abs() < 1e-12);
        assert_eq!(compute_reward(0.4, 0.4), 0.0);
        assert!((compute_reward(0.5, 0.8) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn ledger_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let ledger = Ledger::new(&path, true);
        let mut t = tuple(3, "dpt", 0.67, 1.0);
        t.self_reported_confidence = Some(4);
        let mut ctx = EvidenceContext::default();
        let d = ctx.update(&mut t);
        ledger.append_tuple(&t, d).unwrap();
        ledger.append_incident(3, "provider_failure", Some("dpt"), "timeout").unwrap();

        let loaded = ledger.load().unwrap();
        assert_eq!(loaded.len(), 2);
        let rec = loaded[0].as_tuple().unwrap();
        assert_eq!(rec.tuple, t);
        assert_eq!(rec.tuple.dedupe_key(), t.dedupe_key());
        assert_eq!(rec.timestamp, FIXED_EPOCH);
        assert!(matches!(loaded[1], LedgerEntry::Incident(_)));

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 10]).unwrap();
        match load_ledger(&path) {
            Err(Error::CorruptLedger { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corrupt ledger, got {other:?}"),
        }
    }

    #[test]
    fn ledger_line_has_expected_keys() {
        let t = tuple(1, "dpt", 0.5, 1.0);
        let entry = LedgerEntry::Tuple(TupleRecord {
            tuple: t,
            decision: RetentionDecision::Accepted,
            timestamp: FIXED_EPOCH.into(),
        });
        let value: serde_json::Value = serde_json::to_value(&entry).unwrap();
        for key in [
            "iteration",
            "field",
            "conflict_summary",
            "resolution_plan",
            "query",
            "excerpts",
            "confidence_before",
            "confidence_after",
            "reward",
            "accepted",
            "decision",
            "timestamp",
        ] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["decision"], "ACCEPTED");
    }
}
