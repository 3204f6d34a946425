//! Consistency-based confidence over the `n` prompt-variant predictions,
//! conflict detection, and evaluation-only accuracy/calibration metrics.
//!
//! A parseable prediction (a target field or `NOT_COVERED`) weighs 1.0, a
//! `MISSING` one weighs 0.5. Confidence is the weight of the modal
//! parseable value over the total weight. `MISSING` never wins the mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::IterationRecord;
use crate::error::{Error, Result};
use crate::schema::{Decision, GroundTruth, MappingHypothesis, Prediction};

pub const PARSED_WEIGHT: f64 = 1.0;
pub const MISSING_WEIGHT: f64 = 0.5;

/// Default number of trailing iterations averaged by [`calibration_gap`].
pub const CALIBRATION_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub value: f64,
    pub numerator_weight: f64,
    pub denominator_weight: f64,
    pub modal: Decision,
}

fn weight(decision: &Decision) -> f64 {
    if decision.is_missing() {
        MISSING_WEIGHT
    } else {
        PARSED_WEIGHT
    }
}

/// Scores one field's variant predictions.
pub fn compute_confidence(predictions: &[Prediction]) -> Result<ConfidenceScore> {
    score_decisions(predictions.iter().map(|p| &p.decision))
}

pub(crate) fn score_decisions<'a>(
    decisions: impl IntoIterator<Item = &'a Decision>,
) -> Result<ConfidenceScore> {
    let mut denominator = 0.0;
    let mut tally: BTreeMap<&Decision, f64> = BTreeMap::new();
    let mut count = 0usize;
    for decision in decisions {
        count += 1;
        let w = weight(decision);
        denominator += w;
        if !decision.is_missing() {
            *tally.entry(decision).or_insert(0.0) += w;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("confidence needs at least one prediction"));
    }

    // BTreeMap order puts TargetField (lexicographic) before NotCovered, so the
    // first maximum encountered is the tie-break winner.
    let mut best: Option<(&Decision, f64)> = None;
    for (decision, w) in tally {
        match best {
            Some((_, bw)) if w <= bw => {}
            _ => best = Some((decision, w)),
        }
    }

    Ok(match best {
        Some((modal, numerator)) => ConfidenceScore {
            value: numerator / denominator,
            numerator_weight: numerator,
            denominator_weight: denominator,
            modal: modal.clone(),
        },
        None => ConfidenceScore {
            value: 0.0,
            numerator_weight: 0.0,
            denominator_weight: denominator,
            modal: Decision::Missing,
        },
    })
}

/// A source field whose variants did not agree on a single parseable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub field: String,
    pub variant_predictions: Vec<Prediction>,
    pub confidence: ConfidenceScore,
}

impl Conflict {
    /// Distinct target-field candidates among the variants, sorted.
    pub fn candidates(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .variant_predictions
            .iter()
            .filter_map(|p| p.decision.target_name())
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    pub fn has_not_covered(&self) -> bool {
        self.variant_predictions
            .iter()
            .any(|p| p.decision == Decision::NotCovered)
    }

    pub fn missing_count(&self) -> usize {
        self.variant_predictions
            .iter()
            .filter(|p| p.decision.is_missing())
            .count()
    }

    /// Compact description of the disagreement, e.g. `dpt: [RemotePort, RemotePort, LocalPort]`.
    pub fn summary(&self) -> String {
        let preds: Vec<String> = self
            .variant_predictions
            .iter()
            .map(|p| p.decision.to_string())
            .collect();
        format!("{}: [{}]", self.field, preds.join(", "))
    }
}

/// Returns every field whose confidence is below 1, sorted by field name.
///
/// Any disagreement counts, including a `MISSING` variant next to otherwise
/// unanimous ones. A field where every variant is `MISSING` has confidence 0
/// and is reported as well.
pub fn detect_conflicts(hypothesis: &MappingHypothesis, n: usize) -> Result<Vec<Conflict>> {
    let mut conflicts = Vec::new();
    for (field, entry) in &hypothesis.entries {
        if entry.variant_predictions.len() != n {
            return Err(Error::Validation(format!(
                "field '{field}' has {} variant predictions, expected {n}",
                entry.variant_predictions.len()
            )));
        }
        let score = compute_confidence(&entry.variant_predictions)?;
        if score.value < 1.0 {
            conflicts.push(Conflict {
                field: field.clone(),
                variant_predictions: entry.variant_predictions.clone(),
                confidence: score,
            });
        }
    }
    Ok(conflicts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOutcome {
    pub predicted: Decision,
    pub expected: Decision,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_field: BTreeMap<String, FieldOutcome>,
}

impl AccuracyReport {
    pub fn from_counts(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_field: BTreeMap::new(),
        }
    }

    /// Accuracy as a percentage rounded to two decimals, e.g. `93.94`.
    pub fn percent(&self) -> f64 {
        (self.accuracy * 10_000.0).round() / 100.0
    }
}

/// Compares modal predictions against ground truth. A field absent from the
/// hypothesis counts as `MISSING`, which never matches.
pub fn evaluate_accuracy(hypothesis: &MappingHypothesis, truth: &GroundTruth) -> AccuracyReport {
    let decisions: BTreeMap<String, Decision> = hypothesis
        .entries
        .iter()
        .map(|(f, e)| (f.clone(), e.modal_prediction.decision.clone()))
        .collect();
    evaluate_decisions(&decisions, truth)
}

/// [`evaluate_accuracy`] over bare per-field decisions, e.g. the snapshots
/// stored in iteration records.
pub fn evaluate_decisions(decisions: &BTreeMap<String, Decision>, truth: &GroundTruth) -> AccuracyReport {
    let mut per_field = BTreeMap::new();
    let mut correct = 0;
    for (field, expected) in truth.pairs() {
        let predicted = decisions.get(field).cloned().unwrap_or(Decision::Missing);
        let ok = !predicted.is_missing() && &predicted == expected;
        if ok {
            correct += 1;
        }
        per_field.insert(
            field.clone(),
            FieldOutcome {
                predicted,
                expected: expected.clone(),
                correct: ok,
            },
        );
    }
    let total = truth.len();
    AccuracyReport {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        per_field,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGap {
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
    /// Positive means overconfident.
    pub gap: f64,
}

impl CalibrationGap {
    pub fn from_means(mean_confidence: f64, mean_accuracy: f64) -> Self {
        Self {
            mean_confidence,
            mean_accuracy,
            gap: mean_confidence - mean_accuracy,
        }
    }
}

/// Mean confidence minus mean accuracy over the last `window` records.
pub fn calibration_gap(records: &[IterationRecord], window: usize) -> Result<CalibrationGap> {
    if records.is_empty() || window == 0 {
        return Err(Error::EmptyInput("calibration needs at least one iteration record"));
    }
    let tail = &records[records.len().saturating_sub(window)..];
    let mut conf = 0.0;
    let mut acc = 0.0;
    for record in tail {
        let a = record.accuracy.ok_or_else(|| {
            Error::Validation(format!(
                "iteration {} has no accuracy; calibration requires ground truth",
                record.iteration
            ))
        })?;
        conf += record.mean_confidence;
        acc += a;
    }
    let k = tail.len() as f64;
    Ok(CalibrationGap::from_means(conf / k, acc / k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::HypothesisEntry;

    fn t(name: &str) -> Prediction {
        Prediction::target(name)
    }

    fn m() -> Prediction {
        Prediction::missing()
    }

    fn nc() -> Prediction {
        Prediction::not_covered()
    }

    #[test]
    fn two_of_three_agree() {
        let s = compute_confidence(&[t("RemotePort"), t("RemotePort"), t("LocalPort")]).unwrap();
        assert!((s.value - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.modal, Decision::target("RemotePort"));
    }

    #[test]
    fn missing_weighs_half() {
        let s = compute_confidence(&[t("A"), m(), m()]).unwrap();
        assert_eq!(s.denominator_weight, 2.0);
        assert!((s.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unanimous_not_covered_is_full_confidence() {
        let s = compute_confidence(&[nc(), nc(), nc()]).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.modal, Decision::NotCovered);
    }

    #[test]
    fn all_missing_is_zero() {
        let s = compute_confidence(&[m(), m(), m()]).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.modal, Decision::Missing);
    }

    #[test]
    fn ties_prefer_target_then_lexicographic() {
        let s = compute_confidence(&[nc(), t("b"), t("a")]).unwrap();
        assert_eq!(s.modal, Decision::target("a"));
        let s = compute_confidence(&[nc(), t("zz")]).unwrap();
        assert_eq!(s.modal, Decision::target("zz"));
    }

    #[test]
    fn empty_list_is_error() {
        assert!(compute_confidence(&[]).is_err());
    }

    fn hyp(rows: &[(&str, Vec<Prediction>)]) -> MappingHypothesis {
        let mut h = MappingHypothesis::default();
        for (f, preds) in rows {
            let s = compute_confidence(preds).unwrap();
            h.entries.insert(
                f.to_string(),
                HypothesisEntry {
                    modal_prediction: Prediction::new(s.modal),
                    confidence: s.value,
                    variant_predictions: preds.clone(),
                },
            );
        }
        h
    }

    #[test]
    fn conflicts_only_disagreeing_fields() {
        let h = hyp(&[
            ("b", vec![t("A"), t("A"), t("B")]),
            ("a", vec![t("A"), t("A"), t("A")]),
            ("c", vec![t("A"), m(), t("A")]),
        ]);
        let c = detect_conflicts(&h, 3).unwrap();
        let names: Vec<_> = c.iter().map(|c| c.field.as_str()).collect();
        assert_eq!(names, ["b", "c"]);
        assert!(detect_conflicts(&h, 4).is_err());
    }

    #[test]
    fn accuracy_counts_modal_matches() {
        use crate::schema::{Schema, SchemaField, SchemaSide};
        let src = Schema::new(
            "s",
            SchemaSide::Source,
            vec![SchemaField::new("x", "", ""), SchemaField::new("y", "", ""), SchemaField::new("z", "", "")],
        )
        .unwrap();
        let tgt = Schema::new("t", SchemaSide::Target, vec![SchemaField::new("A", "", "")]).unwrap();
        let truth = GroundTruth::new(
            [
                ("x".to_string(), Decision::target("A")),
                ("y".to_string(), Decision::NotCovered),
                ("z".to_string(), Decision::NotCovered),
            ]
            .into_iter()
            .collect(),
            &src,
            &tgt,
        )
        .unwrap();
        let h = hyp(&[
            ("x", vec![t("A"), t("A"), t("A")]),
            ("y", vec![nc(), nc(), t("A")]),
            ("z", vec![m(), m(), m()]),
        ]);
        let r = evaluate_accuracy(&h, &truth);
        assert_eq!((r.correct, r.total), (2, 3));
        assert!(!r.per_field["z"].correct);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(AccuracyReport::from_counts(62, 66).percent(), 93.94);
        assert_eq!(AccuracyReport::from_counts(48, 66).percent(), 72.73);
        assert_eq!(AccuracyReport::from_counts(66, 66).percent(), 100.0);
    }

    #[test]
    fn calibration_requires_accuracy() {
        let rec = IterationRecord {
            iteration: 1,
            mean_confidence: 0.9,
            ..IterationRecord::default()
        };
        assert!(calibration_gap(&[rec], 10).is_err());
    }

    #[test]
    fn calibration_table_rows() {
        let g = CalibrationGap::from_means(0.952, 0.9394);
        assert!((g.gap - 0.0126).abs() < 1e-9);
        let g = CalibrationGap::from_means(0.893, 0.921);
        assert!((g.gap + 0.028).abs() < 1e-9);
    }

    #[test]
    fn calibration_window_uses_tail() {
        let recs: Vec<_> = (1..=12)
            .map(|i| IterationRecord {
                iteration: i,
                mean_confidence: if i > 2 { 0.9 } else { 0.1 },
                accuracy: Some(0.9),
                ..IterationRecord::default()
            })
            .collect();
        let g = calibration_gap(&recs, 10).unwrap();
        assert!(g.gap.abs() < 1e-12);
    }
}
