//! The agent loop driven by a scripted backend: the two-of-three
//! disagreement on `dpt`, resolved by one piece of evidence.

use schemalign::agent::{Agent, RunConfig};
use schemalign::backend::{RetryPolicy, ScopeKey, ScriptedBackend};
use schemalign::providers::{CorpusIndex, CorpusProvider};
use schemalign::schema::{Prediction, Schema, SchemaField, SchemaSide};

fn main() -> schemalign::Result<()> {
    let source = Schema::new(
        "Acme",
        SchemaSide::Source,
        vec![SchemaField::new("dpt", "destination port", "int")],
    )?;
    let target = Schema::new(
        "Common",
        SchemaSide::Target,
        vec![
            SchemaField::new("RemotePort", "remote peer port", "int"),
            SchemaField::new("LocalPort", "local host port", "int"),
        ],
    )?;
    let remote = [("dpt", Prediction::target("RemotePort"))];
    let backend = ScriptedBackend::new()
        .respond(ScopeKey::Full, Some(0), Some(1), &remote)
        .respond(ScopeKey::Full, Some(1), Some(1), &remote)
        .respond(ScopeKey::Full, Some(2), Some(1), &[("dpt", Prediction::target("LocalPort"))])
        .respond(ScopeKey::Full, None, None, &remote)
        .respond(ScopeKey::Field("dpt".into()), None, None, &remote);
    let provider = CorpusProvider::new(CorpusIndex::from_documents([(
        "acme.txt",
        "In Acme logs dpt is the destination port, i.e. the RemotePort of the peer.",
    )]));
    let config = RunConfig {
        alpha: 10,
        deterministic: true,
        retry: RetryPolicy::immediate(1),
        ..RunConfig::default()
    };
    let outcome = Agent::new(config, &source, &target, &backend, &provider)?.run()?;
    for r in &outcome.records {
        println!(
            "iteration {}: conflicts {:?}, dpt confidence {:.2}, evidence kept {}",
            r.iteration, r.conflict_fields, r.per_field["dpt"].confidence, r.tuples_accepted
        );
    }
    for entry in &outcome.ledger_entries {
        if let Some(t) = entry.as_tuple() {
            println!(
                "evidence for {}: {:.2} -> {:.2} ({:?}) query {:?}",
                t.tuple.field, t.tuple.confidence_before, t.tuple.confidence_after, t.decision, t.tuple.query
            );
        }
    }
    Ok(())
}
