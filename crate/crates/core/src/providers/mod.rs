//! Evidence retrieval: query templates, the provider contract, excerpt
//! sanitization, and three providers (web, local corpus, null).

mod corpus;
mod web;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::Conflict;

pub use corpus::{corpus_index, CorpusIndex, CorpusProvider};
pub use web::{WebSearchConfig, WebSearchProvider, ENV_SEARCH_API_KEY, ENV_SEARCH_ENDPOINT_URL};

/// Excerpts kept per query.
pub const EXCERPTS_PER_QUERY: usize = 3;
/// Maximum characters per excerpt.
pub const MAX_EXCERPT_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    /// URL or corpus document id.
    pub locator: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("search endpoint returned HTTP {0}")]
    Status(u16),
    #[error("unexpected search reply: {0}")]
    Decode(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("empty query")]
    EmptyQuery,
}

pub trait EvidenceProvider: Send + Sync {
    fn name(&self) -> &str;

    fn search(&self, query: &str) -> Result<Vec<SearchResult>, ProviderError>;
}

impl<P: EvidenceProvider + ?Sized> EvidenceProvider for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn search(&self, query: &str) -> Result<Vec<SearchResult>, ProviderError> {
        (**self).search(query)
    }
}

/// Never returns anything. Used for the no-evidence ablation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullProvider;

impl EvidenceProvider for NullProvider {
    fn name(&self) -> &str {
        "null"
    }

    fn search(&self, query: &str) -> Result<Vec<SearchResult>, ProviderError> {
        if query.trim().is_empty() {
            return Err(ProviderError::EmptyQuery);
        }
        Ok(Vec::new())
    }
}

/// Deterministic query for a conflict, also the fallback when a backend
/// cannot produce one.
pub fn template_query(conflict: &Conflict, vendor: &str, target_schema: &str) -> String {
    let candidates = conflict.candidates();
    let field = &conflict.field;
    if conflict.has_not_covered() {
        let mut q = field.to_string();
        for c in &candidates {
            q.push(' ');
            q.push_str(c);
        }
        format!("{q} equivalent exists in {target_schema} schema {vendor}")
    } else {
        match candidates.as_slice() {
            [] => format!("{field} field definition {vendor}"),
            [only] => format!("{field} {only} definition {vendor}"),
            many => format!("{field} {} definition {vendor}", many.join(" vs ")),
        }
    }
}

/// Human-readable plan stored with each evidence tuple.
pub fn resolution_plan(conflict: &Conflict) -> String {
    let candidates = conflict.candidates();
    let mut plan = if candidates.is_empty() {
        format!("Find documentation that defines {}", conflict.field)
    } else {
        format!(
            "Decide whether {} maps to {}",
            conflict.field,
            candidates.join(" or ")
        )
    };
    if conflict.has_not_covered() {
        plan.push_str(" or has no equivalent target field");
    }
    plan.push_str("; keep the mapping the retrieved definition supports.");
    plan
}

/// Strips markup and control characters, collapses whitespace, truncates to
/// [`MAX_EXCERPT_CHARS`], drops empties, and keeps the first `k`.
pub fn sanitize(results: &[SearchResult], k: usize) -> Vec<String> {
    results
        .iter()
        .map(|r| sanitize_text(&r.snippet))
        .filter(|s| !s.is_empty())
        .take(k)
        .collect()
}

pub fn sanitize_text(raw: &str) -> String {
    let mut stripped = String::with_capacity(raw.len());
    let mut in_tag = false;
    for c in raw.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                stripped.push(' ');
            }
            _ if in_tag => {}
            c if c.is_control() => stripped.push(' '),
            c => stripped.push(c),
        }
    }
    let decoded = stripped
        .replace("&nbsp;", " ")
        .replace("&lt;", " ")
        .replace("&gt;", " ")
        .replace("&quot;", "\"")
        .replace("&amp;", "&");
    let collapsed = decoded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.chars().take(MAX_EXCERPT_CHARS).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::compute_confidence;
    use crate::schema::Prediction;

    fn conflict(preds: Vec<Prediction>) -> Conflict {
        Conflict {
            field: "dpt".into(),
            confidence: compute_confidence(&preds).unwrap(),
            variant_predictions: preds,
        }
    }

    fn result(snippet: &str) -> SearchResult {
        SearchResult {
            title: "t".into(),
            locator: "l".into(),
            snippet: snippet.into(),
        }
    }

    #[test]
    fn template_names_both_candidates() {
        let c = conflict(vec![
            Prediction::target("RemotePort"),
            Prediction::target("RemotePort"),
            Prediction::target("LocalPort"),
        ]);
        let q = template_query(&c, "Defender", "Common");
        assert_eq!(q, "dpt LocalPort vs RemotePort definition Defender");
        assert_eq!(q, template_query(&c, "Defender", "Common"));
    }

    #[test]
    fn template_with_not_covered_asks_existence() {
        let c = conflict(vec![
            Prediction::not_covered(),
            Prediction::target("RemotePort"),
            Prediction::not_covered(),
        ]);
        let q = template_query(&c, "Defender", "Common");
        assert!(q.contains("exists in Common schema"));
    }

    #[test]
    fn sanitize_strips_and_truncates() {
        let out = sanitize(&[result("<b>dpt</b>\tis the\n\u{7}destination <i>port</i>")], 3);
        assert_eq!(out, vec!["dpt is the destination port"]);
        let long = "x".repeat(2000);
        assert_eq!(sanitize(&[result(&long)], 3)[0].chars().count(), 500);
        let many: Vec<_> = (0..10).map(|i| result(&format!("r{i}"))).collect();
        assert_eq!(sanitize(&many, 3), vec!["r0", "r1", "r2"]);
        assert!(sanitize(&[result("<p></p>")], 3).is_empty());
    }

    #[test]
    fn null_provider_is_empty() {
        assert!(NullProvider.search("anything").unwrap().is_empty());
    }
}
