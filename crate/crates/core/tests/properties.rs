use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use proptest::prelude::*;
use schemalign::backend::{parse_response, render_response, MappingRequest};
use schemalign::confidence::{compute_confidence, detect_conflicts};
use schemalign::evidence::{EvidenceContext, EvidenceTuple, Ledger, LedgerEntry, RetentionDecision, TupleRecord};
use schemalign::schema::{Decision, MappingHypothesis, Prediction, Schema, SchemaField, SchemaSide};
use schemalign::sim::brute_force_confidence;

const NAMES: [&str; 4] = ["csAlpha", "csBeta", "csGamma", "csDelta"];

fn arb_decision() -> impl Strategy<Value = Decision> {
    prop_oneof![
        4 => (0..NAMES.len()).prop_map(|i| Decision::target(NAMES[i])),
        1 => Just(Decision::NotCovered),
        1 => Just(Decision::Missing),
    ]
}

fn arb_predictions(max: usize) -> impl Strategy<Value = Vec<Prediction>> {
    proptest::collection::vec(arb_decision().prop_map(Prediction::new), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn confidence_is_bounded_and_order_free(preds in arb_predictions(12), rot in 0usize..12) {
        let score = compute_confidence(&preds).unwrap();
        prop_assert!((0.0..=1.0).contains(&score.value));
        let mut rotated = preds.clone();
        rotated.rotate_left(rot % preds.len());
        prop_assert_eq!(compute_confidence(&rotated).unwrap(), score.clone());
        prop_assert!((score.value - brute_force_confidence(&preds).unwrap()).abs() < 1e-12);
        prop_assert!(!(score.modal.is_missing()) || score.value == 0.0);
    }

    #[test]
    fn full_confidence_iff_unanimous_and_parsed(preds in arb_predictions(8)) {
        let score = compute_confidence(&preds).unwrap();
        let first = &preds[0].decision;
        let unanimous = !first.is_missing() && preds.iter().all(|p| &p.decision == first);
        prop_assert_eq!(score.value == 1.0, unanimous);
    }

    #[test]
    fn conflicts_are_fields_without_one_parsed_answer(
        rows in proptest::collection::vec(proptest::collection::vec(arb_decision(), 3), 1..8)
    ) {
        let per_field: BTreeMap<String, Vec<Prediction>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("f{i:02}"), r.iter().cloned().map(Prediction::new).collect()))
            .collect();
        let hypothesis = MappingHypothesis::from_variants(per_field.clone()).unwrap();
        let conflicts = detect_conflicts(&hypothesis, 3).unwrap();
        let expected: Vec<String> = per_field
            .iter()
            // A field with no parseable answer at all also needs evidence.
            .filter(|(_, p)| p[0].decision.is_missing() || p.iter().any(|x| x.decision != p[0].decision))
            .map(|(f, _)| f.clone())
            .collect();
        let got: Vec<String> = conflicts.iter().map(|c| c.field.clone()).collect();
        prop_assert_eq!(got, expected);
    }
}

#[derive(Debug, Clone)]
struct Draw {
    field: usize,
    query: usize,
    excerpt: usize,
    before: f64,
    after: f64,
}

fn arb_draw() -> impl Strategy<Value = Draw> {
    let level = prop_oneof![Just(0.0), Just(1.0 / 3.0), Just(0.5), Just(2.0 / 3.0), Just(0.8), Just(1.0), 0.0..=1.0f64];
    (0..3usize, 0..3usize, 0..3usize, level.clone(), level).prop_map(|(field, query, excerpt, before, after)| Draw {
        field,
        query,
        excerpt,
        before,
        after,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn retention_accepts_only_strict_new_improvements(
        draws in proptest::collection::vec(arb_draw(), 1..60),
        cap in prop_oneof![Just(None), (1usize..6).prop_map(Some)],
    ) {
        let mut context = EvidenceContext::with_cap(cap);
        let mut accepted_ids = HashSet::new();
        for (id, d) in draws.iter().enumerate() {
            // The marker makes each tuple's rendering traceable; the excerpt
            // index alone drives deduplication.
            let mut tuple = EvidenceTuple::new(
                1,
                format!("f{}", d.field),
                "summary",
                format!("plan #{id}#"),
                format!("q{}", d.query),
                vec![format!("excerpt {}", d.excerpt)],
                d.before,
                d.after,
            );
            let duplicate = context.contains_key(tuple.dedupe_key());
            let decision = context.update(&mut tuple);
            prop_assert_eq!(decision.is_accepted(), d.after > d.before && !duplicate);
            prop_assert_eq!(tuple.accepted, decision.is_accepted());
            if d.after > d.before && duplicate {
                prop_assert_eq!(decision, RetentionDecision::RejectedDuplicate);
            }
            if decision.is_accepted() {
                accepted_ids.insert(id);
            }
            if let Some(c) = cap {
                prop_assert!(context.len() <= c);
            }
            let rendered = context.render().join("\n");
            for (other, _) in draws.iter().enumerate().take(id + 1) {
                if !accepted_ids.contains(&other) {
                    let marker = format!("plan #{other}#");
                    prop_assert!(!rendered.contains(&marker));
                }
            }
        }
    }
}

fn schema(side: SchemaSide, names: &[&str]) -> Schema {
    Schema::new("s", side, names.iter().map(|n| SchemaField::new(*n, "", "string")).collect()).unwrap()
}

fn arb_prediction() -> impl Strategy<Value = Prediction> {
    (arb_decision(), proptest::option::of(1u8..=5), proptest::option::of("[ -~]{0,30}")).prop_map(|(d, c, r)| {
        let mut p = Prediction::new(d);
        if !p.decision.is_missing() {
            p.self_reported_confidence = c;
            p.reasoning = r;
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn rendered_replies_round_trip(preds in proptest::collection::vec(arb_prediction(), 1..6)) {
        let source_names: Vec<String> = (0..preds.len()).map(|i| format!("src{i}")).collect();
        let refs: Vec<&str> = source_names.iter().map(String::as_str).collect();
        let source = schema(SchemaSide::Source, &refs);
        let target = Arc::new(schema(SchemaSide::Target, &NAMES));
        let request = MappingRequest::full_schema(&source, target, vec![], 1);
        let decisions: Vec<(String, Prediction)> = source_names.into_iter().zip(preds).collect();
        let parsed = parse_response(&render_response(&decisions), &request);
        prop_assert_eq!(parsed.decisions, decisions);
    }

    #[test]
    fn ledger_lines_round_trip(
        before in 0.0..=1.0f64,
        after in 0.0..=1.0f64,
        excerpt in "[ -~]{0,40}",
        reported in proptest::option::of(1u8..=5),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::new(dir.path().join("l.jsonl"), true);
        let mut tuple = EvidenceTuple::new(3, "dpt", "sum", "plan", "query", vec![excerpt], before, after);
        tuple.self_reported_confidence = reported;
        let decision = EvidenceContext::unbounded().update(&mut tuple);
        let entry = LedgerEntry::Tuple(TupleRecord { tuple, decision, timestamp: ledger.timestamp() });
        ledger.append_entry(&entry).unwrap();
        prop_assert_eq!(ledger.load().unwrap(), vec![entry]);
    }
}
