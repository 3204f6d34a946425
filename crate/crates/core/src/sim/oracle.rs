use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FieldClass, Scenario, SimField};
use crate::backend::{render_response, BackendError, BackendResponse, MapperBackend, MappingRequest};
use crate::confidence::Conflict;
use crate::error::{Error, Result};
use crate::evidence::EvidenceContext;
use crate::providers::template_query;
use crate::schema::{Decision, Prediction, Schema};
use crate::util::sha256_parts;

const SETTLES_TARGET: &str = " corresponds to ";
const SETTLES_NONE: &str = " has no equivalent";

/// What the facts in a prompt state about one field.
type Statement = (String, Option<String>);

fn word_before(text: &str, end: usize) -> &str {
    let start = text[..end]
        .char_indices()
        .rev()
        .find(|(_, c)| !c.is_alphanumeric())
        .map_or(0, |(i, c)| i + c.len_utf8());
    &text[start..end]
}

fn word_after(text: &str, start: usize) -> &str {
    let rest = &text[start..];
    let end = rest.find(|c: char| !c.is_alphanumeric()).unwrap_or(rest.len());
    &rest[..end]
}

/// Collects every "X corresponds to Y" and "X has no equivalent" statement in
/// the prompt facts.
fn statements(blocks: &[String]) -> BTreeSet<Statement> {
    let mut found = BTreeSet::new();
    for block in blocks {
        for (pos, _) in block.match_indices(SETTLES_TARGET) {
            let field = word_before(block, pos);
            let target = word_after(block, pos + SETTLES_TARGET.len());
            if !field.is_empty() && !target.is_empty() {
                found.insert((field.to_string(), Some(target.to_string())));
            }
        }
        for (pos, _) in block.match_indices(SETTLES_NONE) {
            let field = word_before(block, pos);
            if !field.is_empty() {
                found.insert((field.to_string(), None));
            }
        }
    }
    found
}

fn settles(statements: &BTreeSet<Statement>, field: &str, sim: &SimField) -> bool {
    let key = (field.to_string(), sim.truth.target_name().map(str::to_string));
    statements.contains(&key)
}

/// One oracle answer. The draw depends only on (seed, field, variant,
/// whether the decisive statement is present), so an unchanged prompt gives
/// an unchanged answer regardless of iteration, call order or thread.
fn answer(seed: u64, field: &str, sim: &SimField, variant: usize, settled: bool, noise: super::NoiseModel) -> Prediction {
    let key = sha256_parts([
        &seed.to_le_bytes()[..],
        field.as_bytes(),
        &(variant as u64).to_le_bytes()[..],
        &[settled as u8][..],
    ]);
    let mut rng = ChaCha8Rng::from_seed(key);
    if rng.gen::<f64>() < noise.missing {
        return Prediction::missing();
    }
    let (decision, confidence, reasoning) = if settled {
        (sim.truth.clone(), 5, "A fact states this mapping directly.".to_string())
    } else {
        match &sim.class {
            FieldClass::Easy => {
                if rng.gen::<f64>() < noise.easy {
                    (Decision::target(&sim.distractors[0]), 3, "Closest name match.".to_string())
                } else {
                    (sim.truth.clone(), 4, "Name and description match.".to_string())
                }
            }
            FieldClass::Ambiguous { candidates, .. } => {
                let pick = &candidates[rng.gen_range(0..candidates.len())];
                (
                    Decision::target(pick),
                    3,
                    format!("Direction is unclear; {} is plausible.", pick),
                )
            }
            FieldClass::Unmapped => {
                if !sim.distractors.is_empty() && rng.gen::<f64>() < noise.unmapped {
                    let pick = &sim.distractors[rng.gen_range(0..sim.distractors.len())];
                    (Decision::target(pick), 3, format!("{pick} looks related."))
                } else {
                    (Decision::NotCovered, 4, "No target field carries this data.".to_string())
                }
            }
        }
    };
    Prediction {
        decision,
        self_reported_confidence: Some(confidence),
        reasoning: Some(reasoning),
    }
}

/// Answers a mapping request from the scenario's noisy oracle.
pub fn oracle_map(request: &MappingRequest, scenario: &Scenario, seed: u64) -> BackendResponse {
    let facts = statements(&request.context_blocks);
    let decisions: Vec<(String, Prediction)> = request
        .source_fields
        .iter()
        .map(|f| {
            let prediction = match scenario.fields.get(&f.name) {
                Some(sim) => answer(
                    seed,
                    &f.name,
                    sim,
                    request.variant_index,
                    settles(&facts, &f.name, sim),
                    scenario.noise(),
                ),
                None => Prediction::missing(),
            };
            (f.name.clone(), prediction)
        })
        .collect();
    BackendResponse {
        raw_text: render_response(&decisions),
        decisions,
    }
}

/// The simulated mapper; queries come from the deterministic template.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    scenario: Arc<Scenario>,
    seed: u64,
}

impl OracleBackend {
    pub fn new(scenario: Scenario) -> Self {
        let seed = scenario.seed();
        Self {
            scenario: Arc::new(scenario),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl MapperBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle-sim"
    }

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError> {
        if let Some(f) = request.source_fields.iter().find(|f| !self.scenario.fields.contains_key(&f.name)) {
            return Err(BackendError::InvalidRequest(format!("{} is not a scenario field", f.name)));
        }
        Ok(oracle_map(request, &self.scenario, self.seed))
    }

    fn formulate_query(
        &self,
        conflict: &Conflict,
        _context: &EvidenceContext,
        source: &Schema,
        target: &Schema,
    ) -> Result<String, BackendError> {
        Ok(template_query(conflict, source.name(), target.name()))
    }
}

/// Consistency confidence by direct enumeration in half-weight units: a
/// parsed answer counts 2, a missing one 1. Kept deliberately separate from
/// the production scorer so the two can be cross-checked.
pub fn brute_force_confidence(predictions: &[Prediction]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let mut distinct: Vec<&Decision> = Vec::new();
    for p in predictions {
        if !p.decision.is_missing() && !distinct.contains(&&p.decision) {
            distinct.push(&p.decision);
        }
    }
    let units_total: u32 = predictions
        .iter()
        .map(|p| if p.decision.is_missing() { 1 } else { 2 })
        .sum();
    let best_units = distinct
        .iter()
        .map(|d| 2 * predictions.iter().filter(|p| &p.decision == *d).count() as u32)
        .max()
        .unwrap_or(0);
    Ok(best_units as f64 / units_total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MappingRequest;
    use crate::confidence::compute_confidence;
    use crate::sim::{build_scenario, ClassCounts, ScenarioSpec};

    fn ambiguous_field(s: &Scenario) -> (String, SimField) {
        s.fields
            .iter()
            .find(|(_, f)| matches!(f.class, FieldClass::Ambiguous { .. }))
            .map(|(k, v)| (k.clone(), v.clone()))
            .unwrap()
    }

    fn request(s: &Scenario, field: &str, blocks: Vec<String>, variant: usize) -> MappingRequest {
        let mut r = MappingRequest::single_field(&s.source, field, Arc::new(s.target.clone()), blocks, 1).unwrap();
        r.variant_index = variant;
        r
    }

    #[test]
    fn statements_respect_word_boundaries() {
        let facts = statements(&["- LocalPort corresponds to csSourcePort. XLocalPort has no equivalent.".into()]);
        assert!(facts.contains(&("LocalPort".into(), Some("csSourcePort".into()))));
        assert!(facts.contains(&("XLocalPort".into(), None)));
        assert!(!facts.contains(&("LocalPort".into(), None)));
    }

    #[test]
    fn planted_document_makes_field_unanimous() {
        let s = build_scenario(7, ClassCounts { easy: 2, ambiguous: 2, unmapped: 2 }, 0).unwrap();
        let (field, sim) = ambiguous_field(&s);
        let doc = s.corpus.iter().find(|d| d.id == sim.evidence_doc_id).unwrap();
        let preds: Vec<Prediction> = (0..10)
            .map(|v| oracle_map(&request(&s, &field, vec![doc.text.clone()], v), &s, 7).decisions[0].1.clone())
            .collect();
        assert!(preds.iter().all(|p| p.decision == sim.truth || p.decision.is_missing()));
    }

    #[test]
    fn ambiguous_without_evidence_disagrees() {
        // Over many seeds, three uniform draws between two candidates agree
        // a quarter of the time.
        let mut unanimous = 0;
        let trials = 400;
        for seed in 0..trials {
            let s = build_scenario(seed, ClassCounts { easy: 0, ambiguous: 1, unmapped: 0 }, 0).unwrap();
            let (field, _) = ambiguous_field(&s);
            let preds: Vec<Prediction> = (0..3)
                .map(|v| oracle_map(&request(&s, &field, vec![], v), &s, seed).decisions[0].1.clone())
                .collect();
            if compute_confidence(&preds).unwrap().value == 1.0 {
                unanimous += 1;
            }
        }
        let rate = unanimous as f64 / trials as f64;
        assert!((rate - 0.25).abs() < 0.07, "{rate}");
    }

    #[test]
    fn irrelevant_facts_change_nothing() {
        let s = build_from_spec_std(11);
        let (field, _) = ambiguous_field(&s);
        let plain = oracle_map(&request(&s, &field, vec![], 1), &s, 11);
        let noisy = oracle_map(
            &request(&s, &field, vec!["field: Other\nplan: p\nevidence:\n- Other corresponds to csX.".into()], 1),
            &s,
            11,
        );
        assert_eq!(plain.decisions, noisy.decisions);
    }

    fn build_from_spec_std(seed: u64) -> Scenario {
        crate::sim::build_from_spec(&ScenarioSpec::standard(seed)).unwrap()
    }

    #[test]
    fn unmapped_modal_is_not_covered_with_its_document() {
        let s = build_from_spec_std(2);
        let (field, sim) = s
            .fields
            .iter()
            .find(|(_, f)| f.class == FieldClass::Unmapped)
            .map(|(k, v)| (k.clone(), v.clone()))
            .unwrap();
        let doc = s.corpus.iter().find(|d| d.id == sim.evidence_doc_id).unwrap();
        let preds: Vec<Prediction> = (0..3)
            .map(|v| oracle_map(&request(&s, &field, vec![doc.text.clone()], v), &s, 2).decisions[0].1.clone())
            .collect();
        assert_eq!(compute_confidence(&preds).unwrap().modal, Decision::NotCovered);
    }

    #[test]
    fn brute_force_examples() {
        let a = Prediction::target("A");
        let b = Prediction::target("B");
        let m = Prediction::missing();
        assert!((brute_force_confidence(&[a.clone(), a.clone(), b]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(brute_force_confidence(&[m.clone(), m.clone(), m]).unwrap(), 0.0);
        assert!(brute_force_confidence(&[]).is_err());
    }
}
