use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{EvidenceProvider, ProviderError, SearchResult};
use crate::error::{Error, Result};

/// Results returned per query before sanitization.
const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Document {
    id: String,
    text: String,
}

/// Term → (document, frequency) postings over a set of text documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    postings: BTreeMap<String, Vec<(usize, u32)>>,
}

/// Lowercased alphanumeric runs.
pub(crate) fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl CorpusIndex {
    /// Indexes documents in the order given; ids must be unique.
    pub fn from_documents<I, S, T>(documents: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut index = CorpusIndex::default();
        for (id, text) in documents {
            index.add(id.into(), text.into());
        }
        index
    }

    fn add(&mut self, id: String, text: String) {
        let doc_idx = self.docs.len();
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for term in tokenize(&text) {
            *counts.entry(term).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            self.postings.entry(term).or_default().push((doc_idx, tf));
        }
        self.docs.push(Document { id, text });
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        let Some(doc_idx) = self.docs.iter().position(|d| d.id == doc_id) else {
            return 0;
        };
        self.postings
            .get(&term.to_lowercase())
            .and_then(|p| p.iter().find(|(d, _)| *d == doc_idx))
            .map_or(0, |(_, tf)| *tf)
    }

    /// Scores each document by the summed frequency of the distinct query
    /// terms it contains; ties go to the smaller document id.
    pub fn search(&self, query: &str, top_k: usize) -> Vec<(String, u32)> {
        let terms: BTreeSet<String> = tokenize(query).collect();
        let mut scores: BTreeMap<usize, u32> = BTreeMap::new();
        for term in &terms {
            if let Some(postings) = self.postings.get(term) {
                for (doc, tf) in postings {
                    *scores.entry(*doc).or_insert(0) += tf;
                }
            }
        }
        let mut ranked: Vec<(usize, u32)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| self.docs[a.0].id.cmp(&self.docs[b.0].id)));
        ranked
            .into_iter()
            .take(top_k)
            .map(|(doc, score)| (self.docs[doc].id.clone(), score))
            .collect()
    }

    fn result(&self, doc_id: &str) -> Option<SearchResult> {
        let doc = self.docs.iter().find(|d| d.id == doc_id)?;
        Some(SearchResult {
            title: doc.text.lines().next().unwrap_or_default().to_string(),
            locator: doc.id.clone(),
            snippet: doc.text.clone(),
        })
    }
}

/// Indexes every readable UTF-8 file directly inside `directory`, in file
/// name order. Unreadable files are skipped with a warning.
pub fn corpus_index(directory: &Path) -> Result<CorpusIndex> {
    let entries = std::fs::read_dir(directory).map_err(|e| {
        Error::Config(format!("corpus directory {}: {e}", directory.display()))
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match std::fs::read_to_string(&path) {
            Ok(text) => docs.push((id, text)),
            Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable corpus file"),
        }
    }
    Ok(CorpusIndex::from_documents(docs))
}

#[derive(Debug, Clone)]
pub struct CorpusProvider {
    index: CorpusIndex,
    top_k: usize,
}

impl CorpusProvider {
    pub fn new(index: CorpusIndex) -> Self {
        Self {
            index,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn open(directory: &Path) -> Result<Self> {
        Ok(Self::new(corpus_index(directory)?))
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }
}

impl EvidenceProvider for CorpusProvider {
    fn name(&self) -> &str {
        "corpus"
    }

    fn search(&self, query: &str) -> Result<Vec<SearchResult>, ProviderError> {
        if query.trim().is_empty() {
            return Err(ProviderError::EmptyQuery);
        }
        Ok(self
            .index
            .search(query, self.top_k)
            .into_iter()
            .filter_map(|(id, _)| self.index.result(&id))
            .collect())
    }
}
