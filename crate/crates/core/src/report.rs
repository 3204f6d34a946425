//! The expert-review report: the full mapping table plus every field still
//! below the review threshold, with how it got there.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::{IterationRecord, RunSummary};
use crate::error::{Error, Result};
use crate::evidence::{LedgerEntry, RetentionDecision};
use crate::schema::{Decision, MappingHypothesis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRow {
    pub field: String,
    pub modal_prediction: Decision,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub iteration: u32,
    pub modal_prediction: Decision,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEvent {
    pub iteration: u32,
    pub query: String,
    pub decision: RetentionDecision,
    pub confidence_before: f64,
    pub confidence_after: f64,
    pub excerpts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedField {
    pub field: String,
    pub modal_prediction: Decision,
    pub confidence: f64,
    /// Every variant answer from the final iteration.
    pub variant_predictions: Vec<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub conflict_history: Vec<ConflictEvent>,
    pub evidence_trail: Vec<EvidenceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub threshold: f64,
    pub mappings: Vec<MappingRow>,
    /// Ascending by confidence, then field name.
    pub flagged: Vec<FlaggedField>,
    pub summary: RunSummary,
}

/// Builds the report from the final hypothesis, the iteration records and the
/// ledger. Pure: reads its inputs only.
pub fn build_report(
    hypothesis: &MappingHypothesis,
    records: &[IterationRecord],
    ledger: &[LedgerEntry],
    threshold: f64,
) -> Result<ReviewReport> {
    if records.is_empty() || hypothesis.entries.is_empty() {
        return Err(Error::EmptyInput("the run has no completed iterations"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config("review threshold must lie in (0, 1]".into()));
    }
    let mappings: Vec<MappingRow> = hypothesis
        .entries
        .iter()
        .map(|(field, e)| MappingRow {
            field: field.clone(),
            modal_prediction: e.modal_prediction.decision.clone(),
            confidence: e.confidence,
            reasoning: e.modal_prediction.reasoning.clone(),
        })
        .collect();

    let mut flagged: Vec<FlaggedField> = hypothesis
        .entries
        .iter()
        .filter(|(_, e)| e.confidence < threshold)
        .map(|(field, e)| FlaggedField {
            field: field.clone(),
            modal_prediction: e.modal_prediction.decision.clone(),
            confidence: e.confidence,
            variant_predictions: e.variant_predictions.iter().map(|p| p.decision.clone()).collect(),
            reasoning: e.modal_prediction.reasoning.clone(),
            conflict_history: records
                .iter()
                .filter(|r| r.conflict_fields.iter().any(|f| f == field))
                .filter_map(|r| {
                    r.per_field.get(field).map(|s| ConflictEvent {
                        iteration: r.iteration,
                        modal_prediction: s.modal_prediction.clone(),
                        confidence: s.confidence,
                    })
                })
                .collect(),
            evidence_trail: ledger
                .iter()
                .filter_map(LedgerEntry::as_tuple)
                .filter(|t| &t.tuple.field == field)
                .map(|t| EvidenceEvent {
                    iteration: t.tuple.iteration,
                    query: t.tuple.query.clone(),
                    decision: t.decision,
                    confidence_before: t.tuple.confidence_before,
                    confidence_after: t.tuple.confidence_after,
                    excerpts: t.tuple.excerpts.clone(),
                })
                .collect(),
        })
        .collect();
    flagged.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then_with(|| a.field.cmp(&b.field)));

    Ok(ReviewReport {
        threshold,
        mappings,
        flagged,
        summary: RunSummary::from_records(records),
    })
}

impl ReviewReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn flagged_fields(&self) -> Vec<&str> {
        self.flagged.iter().map(|f| f.field.as_str()).collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let s = &self.summary;
        let _ = writeln!(out, "Schema mapping review");
        let _ = writeln!(out, "=====================");
        let _ = writeln!(out, "iterations:            {}", s.iterations);
        let _ = writeln!(out, "mean confidence:       {:.4}", s.final_mean_confidence);
        if let Some(a) = s.final_accuracy {
            let _ = writeln!(out, "accuracy:              {:.2}%", a * 100.0);
        }
        let _ = writeln!(out, "conflicts:             {} -> {}", s.initial_conflicts, s.final_conflicts);
        let _ = writeln!(out, "evidence kept/dropped: {} / {}", s.tuples_accepted, s.tuples_rejected);
        let _ = writeln!(out, "{:<23}{}", format!("flagged (< {}):", self.threshold), self.flagged.len());
        let _ = writeln!(out);

        let _ = writeln!(out, "Flagged for review");
        let _ = writeln!(out, "------------------");
        if self.flagged.is_empty() {
            let _ = writeln!(out, "(none)");
        }
        for f in &self.flagged {
            let _ = writeln!(out, "{}  ->  {}  (confidence {:.3})", f.field, f.modal_prediction, f.confidence);
            let answers: Vec<String> = f.variant_predictions.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "  answers: {}", answers.join(", "));
            if let Some(r) = &f.reasoning {
                let _ = writeln!(out, "  reasoning: {r}");
            }
            if !f.conflict_history.is_empty() {
                let _ = writeln!(out, "  conflicted in iterations: {}", compress_runs(&f.conflict_history));
            }
            for e in &f.evidence_trail {
                let _ = writeln!(
                    out,
                    "  [{}] {:?} {:.3} -> {:.3}  query: {}",
                    e.iteration, e.decision, e.confidence_before, e.confidence_after, e.query
                );
                for x in &e.excerpts {
                    let short: String = x.chars().take(120).collect();
                    let _ = writeln!(out, "      - {short}");
                }
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "All mappings");
        let _ = writeln!(out, "------------");
        for m in &self.mappings {
            let _ = writeln!(out, "{:<28} {:<32} {:.3}", m.field, m.modal_prediction.to_string(), m.confidence);
        }
        out
    }
}

/// "1-4, 7" style listing of iteration numbers.
fn compress_runs(events: &[ConflictEvent]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut iter = events.iter().map(|e| e.iteration).peekable();
    while let Some(start) = iter.next() {
        let mut end = start;
        while iter.peek() == Some(&(end + 1)) {
            end = iter.next().unwrap_or(end);
        }
        parts.push(if start == end { start.to_string() } else { format!("{start}-{end}") });
    }
    parts.join(", ")
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::agent::FieldSnapshot;
    use crate::schema::Prediction;

    fn hypothesis() -> MappingHypothesis {
        let mut per_field = BTreeMap::new();
        per_field.insert("a".to_string(), vec![Prediction::target("X"); 3]);
        per_field.insert(
            "b".to_string(),
            vec![Prediction::target("X"), Prediction::target("Y"), Prediction::target("X")],
        );
        per_field.insert(
            "c".to_string(),
            vec![Prediction::target("X"), Prediction::target("Y"), Prediction::not_covered()],
        );
        MappingHypothesis::from_variants(per_field).unwrap()
    }

    fn record(h: &MappingHypothesis) -> IterationRecord {
        IterationRecord {
            iteration: 1,
            mean_confidence: h.mean_confidence(),
            conflict_fields: vec!["b".into(), "c".into()],
            tuples_proposed: 2,
            tuples_rejected: 2,
            per_field: h
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
            ..Default::default()
        }
    }

    #[test]
    fn flagged_sorted_by_confidence_then_name() {
        let h = hypothesis();
        let report = build_report(&h, &[record(&h)], &[], 1.0).unwrap();
        assert_eq!(report.flagged_fields(), vec!["c", "b"]);
        assert_eq!(report.mappings.len(), 3);
        assert_eq!(report.flagged[1].conflict_history.len(), 1);
    }

    #[test]
    fn lower_threshold_never_grows_flagged_set() {
        let h = hypothesis();
        let r = [record(&h)];
        let strict = build_report(&h, &r, &[], 1.0).unwrap();
        let loose = build_report(&h, &r, &[], 0.5).unwrap();
        assert!(loose.flagged.len() <= strict.flagged.len());
        assert_eq!(loose.flagged_fields(), vec!["c"]);
    }

    #[test]
    fn empty_run_is_an_error() {
        assert!(build_report(&MappingHypothesis::default(), &[], &[], 1.0).is_err());
    }

    #[test]
    fn text_and_json_agree_on_flagged() {
        let h = hypothesis();
        let report = build_report(&h, &[record(&h)], &[], 1.0).unwrap();
        let text = report.render_text();
        let json: ReviewReport = serde_json::from_str(&report.to_json()).unwrap();
        for f in json.flagged_fields() {
            assert!(text.contains(&format!("{f}  ->")));
        }
        assert_eq!(json, report);
    }

    #[test]
    fn runs_are_compressed() {
        let ev = |i| ConflictEvent {
            iteration: i,
            modal_prediction: Decision::NotCovered,
            confidence: 0.5,
        };
        assert_eq!(compress_runs(&[ev(1), ev(2), ev(3), ev(5)]), "1-3, 5");
    }
}
