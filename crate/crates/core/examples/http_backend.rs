//! One mapping request against a live chat-completion endpoint.
//!
//! Needs MAPPER_ENDPOINT_URL (and usually MAPPER_API_KEY, MAPPER_MODEL_NAME).

use std::sync::Arc;
use std::time::Duration;

use schemalign::backend::{HttpBackend, HttpConfig, MapperBackend, MappingRequest, ENV_ENDPOINT_URL};
use schemalign::schema::{Schema, SchemaField, SchemaSide};

fn main() -> schemalign::Result<()> {
    let config = match HttpConfig::from_env(Duration::from_secs(60)) {
        Ok(c) => c,
        Err(_) => {
            eprintln!("set {ENV_ENDPOINT_URL} to an OpenAI-compatible chat completions URL");
            return Ok(());
        }
    };
    let backend = HttpBackend::new(config).map_err(|e| schemalign::Error::Config(e.to_string()))?;
    let source = Schema::new(
        "Acme Firewall",
        SchemaSide::Source,
        vec![SchemaField::new("dpt", "Destination port", "int").with_samples(["443", "53"])],
    )?;
    let target = Arc::new(Schema::new(
        "Common",
        SchemaSide::Target,
        vec![
            SchemaField::new("RemotePort", "Port of the remote endpoint", "int"),
            SchemaField::new("LocalPort", "Port on the local device", "int"),
        ],
    )?);
    let request = MappingRequest::full_schema(&source, target, vec![], 1);
    match backend.map_fields(&request) {
        Ok(response) => {
            for (field, p) in &response.decisions {
                println!("{field} -> {} (self-reported {:?})", p.decision, p.self_reported_confidence);
            }
        }
        Err(e) => eprintln!("request failed: {e}"),
    }
    Ok(())
}
