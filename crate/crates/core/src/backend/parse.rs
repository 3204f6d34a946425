//! Reply grammar:
//!
//! ```text
//! <response>
//!   <decision>SOURCE,TARGET[<confidence>N</confidence>][<reasoning>TEXT</reasoning>]</decision>
//!   ...
//!   [<confidence>N</confidence>]
//!   [<reasoning>TEXT</reasoning>]
//! </response>
//! ```
//!
//! TARGET is a target field name or `NOT_COVERED`; N is an integer 1..=5.
//! Decision-level `<confidence>`/`<reasoning>` override the envelope-level
//! ones. TEXT escapes `&`, `<` and `>` as XML entities. Only the first
//! envelope in the reply is read; text around it is ignored.

use std::collections::HashMap;

use super::{BackendResponse, MappingRequest};
use crate::schema::{Decision, Prediction};

const OPEN: &str = "<response>";
const CLOSE: &str = "</response>";

/// Splits `text` at the first `<tag>...</tag>`, returning (inner, before, after).
fn take_element<'a>(text: &'a str, tag: &str) -> Option<(&'a str, &'a str, &'a str)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)?;
    let inner_start = start + open.len();
    let inner_len = text[inner_start..].find(&close)?;
    let inner = &text[inner_start..inner_start + inner_len];
    let after = &text[inner_start + inner_len + close.len()..];
    Some((inner, &text[..start], after))
}

/// `None` = tag absent, `Some(None)` = present but invalid.
fn parse_confidence(text: &str) -> Option<Option<u8>> {
    let (inner, _, _) = take_element(text, "confidence")?;
    Some(
        inner
            .trim()
            .parse::<u8>()
            .ok()
            .filter(|c| (1..=5).contains(c)),
    )
}

fn parse_reasoning(text: &str) -> Option<String> {
    take_element(text, "reasoning").map(|(inner, _, _)| unescape(inner))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn unescape(text: &str) -> String {
    text.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

struct RawDecision {
    target: String,
    confidence: Option<Option<u8>>,
    reasoning: Option<String>,
}

/// Total parser: never fails, never panics. Anything it cannot read becomes
/// `MISSING` for the affected fields.
pub fn parse_response(raw: &str, request: &MappingRequest) -> BackendResponse {
    let body = raw.find(OPEN).and_then(|start| {
        let rest = &raw[start + OPEN.len()..];
        rest.find(CLOSE).map(|end| &rest[..end])
    });
    let Some(body) = body else {
        return BackendResponse {
            raw_text: raw.to_string(),
            ..BackendResponse::all_missing(request)
        };
    };

    let mut raw_decisions: HashMap<String, RawDecision> = HashMap::new();
    let mut envelope_rest = String::new();
    let mut rest = body;
    while let Some((inner, before, after)) = take_element(rest, "decision") {
        envelope_rest.push_str(before);
        rest = after;
        let csv_part = inner.split('<').next().unwrap_or("");
        let Some((src, tgt)) = csv_part.split_once(',') else {
            continue;
        };
        let src = src.trim().to_string();
        if src.is_empty() || raw_decisions.contains_key(&src) {
            continue;
        }
        raw_decisions.insert(
            src,
            RawDecision {
                target: tgt.trim().to_string(),
                confidence: parse_confidence(inner),
                reasoning: parse_reasoning(inner),
            },
        );
    }
    envelope_rest.push_str(rest);

    let envelope_confidence = parse_confidence(&envelope_rest);
    let envelope_reasoning = parse_reasoning(&envelope_rest);

    let decisions = request
        .source_fields
        .iter()
        .map(|field| {
            let prediction = match raw_decisions.get(&field.name) {
                None => Prediction::missing(),
                Some(d) => match d.confidence.or(envelope_confidence) {
                    Some(None) => Prediction::missing(),
                    conf => Prediction::validated(
                        &d.target,
                        &request.target,
                        conf.flatten(),
                        d.reasoning.clone().or_else(|| envelope_reasoning.clone()),
                    ),
                },
            };
            (field.name.clone(), prediction)
        })
        .collect();

    BackendResponse {
        raw_text: raw.to_string(),
        decisions,
    }
}

/// Renders decisions in the reply grammar. `MISSING` decisions are omitted
/// (the parser reads an absent field as `MISSING`). When every decision
/// shares one confidence/reasoning pair it is written once at envelope level.
pub fn render_response(decisions: &[(String, Prediction)]) -> String {
    let present: Vec<&(String, Prediction)> = decisions
        .iter()
        .filter(|(_, p)| !p.decision.is_missing())
        .collect();
    let shared = present.first().map(|(_, p)| (p.self_reported_confidence, &p.reasoning));
    let uniform = present
        .iter()
        .all(|(_, p)| Some((p.self_reported_confidence, &p.reasoning)) == shared);

    let mut out = String::from("<response>\n");
    for (field, p) in &present {
        let target = match &p.decision {
            Decision::TargetField(t) => t.as_str(),
            Decision::NotCovered => crate::schema::NOT_COVERED,
            Decision::Missing => unreachable!("filtered above"),
        };
        out.push_str(&format!("<decision>{field},{target}"));
        if !uniform {
            push_metadata(&mut out, p.self_reported_confidence, p.reasoning.as_deref());
        }
        out.push_str("</decision>\n");
    }
    if uniform {
        if let Some((conf, reasoning)) = shared {
            if conf.is_some() || reasoning.is_some() {
                push_metadata(&mut out, conf, reasoning.as_deref());
                out.push('\n');
            }
        }
    }
    out.push_str("</response>");
    out
}

fn push_metadata(out: &mut String, confidence: Option<u8>, reasoning: Option<&str>) {
    if let Some(c) = confidence {
        out.push_str(&format!("<confidence>{c}</confidence>"));
    }
    if let Some(r) = reasoning {
        out.push_str(&format!("<reasoning>{}</reasoning>", escape(r)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Schema, SchemaField, SchemaSide};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn request() -> MappingRequest {
        let src = Schema::new(
            "Defender",
            SchemaSide::Source,
            vec![
                SchemaField::new("dpt", "", "int"),
                SchemaField::new("ReportId", "", "int"),
            ],
        )
        .unwrap();
        let tgt = Schema::new(
            "Common",
            SchemaSide::Target,
            vec![
                SchemaField::new("LocalPort", "", "int"),
                SchemaField::new("RemotePort", "", "int"),
            ],
        )
        .unwrap();
        MappingRequest::full_schema(&src, Arc::new(tgt), vec![], 1)
    }

    #[test]
    fn well_formed_reply() {
        let raw = "Sure!\n<response>\n<decision>dpt,RemotePort</decision>\n<decision>ReportId,NOT_COVERED</decision>\n<confidence>4</confidence>\n<reasoning>dest port &lt;remote&gt;</reasoning>\n</response>";
        let r = parse_response(raw, &request());
        let dpt = r.prediction_for("dpt").unwrap();
        assert_eq!(dpt.decision, Decision::target("RemotePort"));
        assert_eq!(dpt.self_reported_confidence, Some(4));
        assert_eq!(dpt.reasoning.as_deref(), Some("dest port <remote>"));
        assert_eq!(r.prediction_for("ReportId").unwrap().decision, Decision::NotCovered);
    }

    #[test]
    fn malformed_replies_are_all_missing() {
        for raw in [
            "",
            "I think dpt maps to RemotePort.",
            "<response><decision>dpt,RemotePort</decision>",
            "<response></response>",
        ] {
            let r = parse_response(raw, &request());
            assert!(r.decisions.iter().all(|(_, p)| p.decision.is_missing()), "{raw:?}");
        }
    }

    #[test]
    fn bad_confidence_and_unknown_target_demote() {
        let raw = "<response><decision>dpt,RemotePort</decision><decision>ReportId,Bogus</decision><confidence>9</confidence></response>";
        let r = parse_response(raw, &request());
        assert!(r.decisions.iter().all(|(_, p)| p.decision.is_missing()));

        let raw = "<response><decision>dpt,RemotePort<confidence>2</confidence></decision><decision>ReportId,LocalPort</decision><confidence>0</confidence></response>";
        let r = parse_response(raw, &request());
        assert_eq!(r.prediction_for("dpt").unwrap().self_reported_confidence, Some(2));
        assert!(r.prediction_for("ReportId").unwrap().decision.is_missing());
    }

    #[test]
    fn fields_outside_request_ignored() {
        let raw = "<response><decision>Other,RemotePort</decision><decision>dpt,LocalPort</decision></response>";
        let r = parse_response(raw, &request());
        assert_eq!(r.decisions.len(), 2);
        assert_eq!(r.prediction_for("dpt").unwrap().decision, Decision::target("LocalPort"));
    }

    fn arb_prediction() -> impl Strategy<Value = Prediction> {
        (
            prop_oneof![
                Just(Decision::target("LocalPort")),
                Just(Decision::target("RemotePort")),
                Just(Decision::NotCovered),
                Just(Decision::Missing),
            ],
            proptest::option::of(1u8..=5),
            proptest::option::of("[ -~]{0,20}"),
        )
            .prop_map(|(decision, c, r)| {
                if decision.is_missing() {
                    Prediction::missing()
                } else {
                    Prediction {
                        decision,
                        self_reported_confidence: c,
                        reasoning: r,
                    }
                }
            })
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(a in arb_prediction(), b in arb_prediction()) {
            let decisions = vec![("dpt".to_string(), a), ("ReportId".to_string(), b)];
            let text = render_response(&decisions);
            let parsed = parse_response(&text, &request());
            prop_assert_eq!(parsed.decisions, decisions);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let text = String::from_utf8_lossy(&bytes);
            let r = parse_response(&text, &request());
            prop_assert_eq!(r.decisions.len(), 2);
        }
    }
}
