//! Parsing model replies: well-formed, partially broken, and garbage.

use std::sync::Arc;

use schemalign::backend::{parse_response, render_response, MappingRequest};
use schemalign::schema::{Prediction, Schema, SchemaField, SchemaSide};

fn main() -> schemalign::Result<()> {
    let source = Schema::new(
        "Acme",
        SchemaSide::Source,
        vec![
            SchemaField::new("dpt", "destination port", "int"),
            SchemaField::new("act", "action taken", "string"),
        ],
    )?;
    let target = Arc::new(Schema::new(
        "Common",
        SchemaSide::Target,
        vec![
            SchemaField::new("RemotePort", "port of the remote peer", "int"),
            SchemaField::new("LocalPort", "port on the monitored host", "int"),
        ],
    )?);
    let request = MappingRequest::full_schema(&source, target, vec![], 1);

    let replies = [
        "Here you go:\n<response>\n<decision>dpt,RemotePort<confidence>4</confidence></decision>\n<decision>act,NOT_COVERED</decision>\n</response>",
        "<response><decision>dpt,NoSuchField</decision><decision>act,NOT_COVERED</decision><confidence>9</confidence></response>",
        "I think dpt is probably the remote port.",
    ];
    for raw in replies {
        let parsed = parse_response(raw, &request);
        let shown: Vec<String> = parsed.decisions.iter().map(|(f, p)| format!("{f} -> {}", p.decision)).collect();
        println!("{}", shown.join(", "));
    }

    let decisions = vec![
        ("dpt".to_string(), Prediction::target("RemotePort")),
        ("act".to_string(), Prediction::not_covered()),
    ];
    let rendered = render_response(&decisions);
    assert_eq!(parse_response(&rendered, &request).decisions, decisions);
    println!("\nrendered reply round-trips:\n{rendered}");
    Ok(())
}
