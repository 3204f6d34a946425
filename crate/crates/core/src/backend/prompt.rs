use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BackendError, MappingRequest, TaskScope};
use crate::confidence::Conflict;
use crate::evidence::EvidenceContext;
use crate::schema::{SchemaField, NOT_COVERED};

/// Sampling temperature for every variant except the anchor (index 0).
pub const SAMPLED_TEMPERATURE: f64 = 0.7;

/// Equivalent task instructions; variant `k` uses `PHRASINGS[k % 10]`.
pub const PHRASINGS: [&str; 10] = [
    "Map each source field listed above to the single best matching target field.",
    "For every source field above, choose the one target field that carries the same information.",
    "Decide, for each listed source field, which target schema field it corresponds to.",
    "Assign each source field to its equivalent field in the target schema.",
    "Identify the target field that each of the source fields above should be normalized into.",
    "Work through the source fields one by one and pick the matching target field for each.",
    "Determine the correct target-schema destination for every source field shown.",
    "For each source field, select the target field with the same meaning and data flow direction.",
    "Produce a field mapping from the listed source fields onto the target schema.",
    "Match every source field above with the target field that represents it.",
];

/// Exact reply contract appended to every user prompt.
pub const RESPONSE_FORMAT: &str = "\
Reply with exactly one XML envelope and nothing else:
<response>
<decision>source_field,target_field</decision>
...one <decision> per source field...
<confidence>N</confidence>
<reasoning>short justification</reasoning>
</response>
target_field must be a target schema field name or NOT_COVERED. N is an integer from 1 (guess) to 5 (certain).
A <decision> may carry its own <confidence> and <reasoning> before </decision>; those override the envelope-level values for that field.";

/// Role and reasoning rules for the mapping model. Identical on every call.
pub fn build_system_prompt() -> String {
    format!(
        "You are a security data engineer who normalizes third-party log sources into an \
enterprise common schema covering endpoint, network, messaging and cloud telemetry.\n\
You map undocumented or poorly documented vendor fields with care and reason in layers:\n\
1. Identify the core entity each field carries, such as an IP address, port, file name, account or hash.\n\
2. Narrow the candidate target fields using data flow direction (inbound or outbound, local or remote, parent or child) and the surrounding fields.\n\
3. Commit to a mapping only when its meaning is semantically consistent with the target field definition.\n\
Examples of direction-sensitive choices: a source versus destination address depends on which side initiated the connection; \
a SHA1 value can describe the parent process, the launched process or a dropped file.\n\
If no target field fits, answer {NOT_COVERED} for that field."
    )
}

fn describe_source_field(f: &SchemaField) -> String {
    let description = if f.description.is_empty() {
        "(undocumented)"
    } else {
        f.description.as_str()
    };
    let samples = if f.sample_values.is_empty() {
        "(none)".to_string()
    } else {
        f.sample_values.join(", ")
    };
    format!(
        "- {} | type: {} | description: {} | samples: {}",
        f.name, f.data_type, description, samples
    )
}

fn describe_target_field(f: &SchemaField) -> String {
    format!("- {} | type: {} | description: {}", f.name, f.data_type, f.description)
}

/// Per-request payload: facts, source fields in variant order, target
/// schema, task instruction and reply contract.
pub fn build_user_prompt(request: &MappingRequest) -> String {
    let mut out = String::from("FACTS\n");
    if request.context_blocks.is_empty() {
        out.push_str("none\n");
    } else {
        for (i, block) in request.context_blocks.iter().enumerate() {
            out.push_str(&format!("[{}]\n{}\n", i + 1, block));
        }
    }

    out.push_str("\nSOURCE FIELDS\n");
    for f in &request.source_fields {
        out.push_str(&describe_source_field(f));
        out.push('\n');
    }

    out.push_str(&format!("\nTARGET SCHEMA ({})\n", request.target.name()));
    for f in request.target.fields() {
        out.push_str(&describe_target_field(f));
        out.push('\n');
    }

    out.push_str("\nTASK\n");
    out.push_str(PHRASINGS[request.variant_index % PHRASINGS.len()]);
    if let TaskScope::SingleField(name) = &request.scope {
        out.push_str(&format!(" Only the field {name} is in scope for this request."));
    }
    out.push_str("\n\nRESPONSE FORMAT\n");
    out.push_str(RESPONSE_FORMAT);
    out.push('\n');
    out
}

/// Asks the model for one web search query that would settle a conflict.
pub fn build_search_prompt(conflict: &Conflict, field: Option<&SchemaField>, context: &EvidenceContext) -> String {
    let mut out = String::from(
        "You help resolve an ambiguous schema mapping by writing one targeted internet search query.\n\n",
    );
    out.push_str(&format!("SOURCE FIELD: {}\n", conflict.field));
    if let Some(f) = field {
        out.push_str(&format!("{}\n", describe_source_field(f)));
    }
    out.push_str("\nCONFLICTING PREDICTIONS\n");
    for (i, p) in conflict.variant_predictions.iter().enumerate() {
        out.push_str(&format!("- attempt {}: {}\n", i + 1, p.decision));
    }
    let candidates = conflict.candidates();
    if !candidates.is_empty() {
        out.push_str(&format!("Candidates under consideration: {}\n", candidates.join(", ")));
    }
    if conflict.has_not_covered() {
        out.push_str("At least one attempt concluded that no target field corresponds (NOT_COVERED).\n");
    }
    let missing = conflict.missing_count();
    if missing > 0 {
        out.push_str(&format!("{missing} attempt(s) produced an unparseable answer.\n"));
    }
    out.push_str(&format!("\nFacts already collected: {}\n", context.len()));
    out.push_str(
        "\nReturn only the search query string on a single line, with no quotes or commentary.\n",
    );
    out
}

fn variant_rng(seed: u64, variant_index: usize) -> ChaCha8Rng {
    let digest = crate::util::sha256_parts([
        b"variant".as_slice(),
        &seed.to_le_bytes(),
        &(variant_index as u64).to_le_bytes(),
    ]);
    ChaCha8Rng::from_seed(digest)
}

/// Derives prompt variant `variant_index` of `n`. Variant 0 is the request
/// unchanged apart from phrasing/temperature; later variants shuffle the
/// source field order with a seeded permutation. Field content never changes.
pub fn make_variant(
    request: &MappingRequest,
    variant_index: usize,
    n: usize,
    seed: u64,
) -> Result<MappingRequest, BackendError> {
    if variant_index >= n {
        return Err(BackendError::InvalidRequest(format!(
            "variant index {variant_index} out of range for n = {n}"
        )));
    }
    let mut variant = request.clone();
    variant.variant_index = variant_index;
    if variant_index == 0 {
        variant.temperature = 0.0;
    } else {
        variant.temperature = SAMPLED_TEMPERATURE;
        variant.source_fields.shuffle(&mut variant_rng(seed, variant_index));
    }
    Ok(variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::compute_confidence;
    use crate::schema::{Prediction, Schema, SchemaSide};
    use std::sync::Arc;

    fn schemas() -> (Schema, Arc<Schema>) {
        let src = Schema::new(
            "Defender",
            SchemaSide::Source,
            (0..8)
                .map(|i| SchemaField::new(format!("Field{i}"), format!("desc {i}"), "string"))
                .collect(),
        )
        .unwrap();
        let tgt = Schema::new(
            "Common",
            SchemaSide::Target,
            vec![
                SchemaField::new("LocalPort", "local port", "int"),
                SchemaField::new("RemotePort", "remote port", "int"),
            ],
        )
        .unwrap();
        (src, Arc::new(tgt))
    }

    #[test]
    fn system_prompt_is_fixed() {
        let a = build_system_prompt();
        assert_eq!(a, build_system_prompt());
        assert!(a.contains("NOT_COVERED"));
        for step in ["1. ", "2. ", "3. "] {
            assert!(a.contains(step));
        }
    }

    #[test]
    fn empty_facts_say_none() {
        let (src, tgt) = schemas();
        let req = MappingRequest::full_schema(&src, tgt, vec![], 1);
        let p = build_user_prompt(&req);
        assert!(p.starts_with("FACTS\nnone\n"));
        for section in ["SOURCE FIELDS", "TARGET SCHEMA (Common)", "TASK", "RESPONSE FORMAT"] {
            assert!(p.contains(section));
        }
    }

    #[test]
    fn single_field_prompt_lists_one_field() {
        let (src, tgt) = schemas();
        let req = MappingRequest::single_field(&src, "Field3", tgt, vec![], 1).unwrap();
        let p = build_user_prompt(&req);
        let source_section = p.split("SOURCE FIELDS\n").nth(1).unwrap().split("\n\n").next().unwrap();
        assert_eq!(source_section.lines().count(), 1);
        assert!(source_section.contains("Field3"));
    }

    #[test]
    fn variants_preserve_fields() {
        let (src, tgt) = schemas();
        let req = MappingRequest::full_schema(&src, tgt, vec!["fact".into()], 1);
        let v0 = make_variant(&req, 0, 3, 42).unwrap();
        assert_eq!(v0.source_fields, req.source_fields);
        assert_eq!(v0.temperature, 0.0);
        let v1 = make_variant(&req, 1, 3, 42).unwrap();
        let v2 = make_variant(&req, 2, 3, 42).unwrap();
        for v in [&v1, &v2] {
            let mut a = v.source_fields.clone();
            let mut b = req.source_fields.clone();
            a.sort_by(|x, y| x.name.cmp(&y.name));
            b.sort_by(|x, y| x.name.cmp(&y.name));
            assert_eq!(a, b);
        }
        assert_ne!(v1.source_fields, req.source_fields);
        assert_eq!(make_variant(&req, 1, 3, 42).unwrap(), v1);
        assert!(make_variant(&req, 3, 3, 42).is_err());

        let p0 = build_user_prompt(&v0);
        let p1 = build_user_prompt(&v1);
        assert_ne!(p0, p1);
        let sorted_lines = |p: &str| {
            let mut l: Vec<String> = p
                .lines()
                .filter(|l| l.starts_with("- Field"))
                .map(str::to_string)
                .collect();
            l.sort();
            l
        };
        assert_eq!(sorted_lines(&p0), sorted_lines(&p1));
    }

    #[test]
    fn search_prompt_names_candidates_and_missing() {
        let preds = vec![
            Prediction::target("RemotePort"),
            Prediction::target("LocalPort"),
            Prediction::missing(),
        ];
        let conflict = Conflict {
            field: "dpt".into(),
            confidence: compute_confidence(&preds).unwrap(),
            variant_predictions: preds,
        };
        let ctx = EvidenceContext::default();
        let p = build_search_prompt(&conflict, None, &ctx);
        assert!(p.contains("LocalPort") && p.contains("RemotePort"));
        assert!(p.contains("unparseable"));
        assert_eq!(p, build_search_prompt(&conflict, None, &ctx));
    }
}
