use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_response, render_response, BackendError, BackendResponse, MapperBackend, MappingRequest, TaskScope};
use crate::confidence::Conflict;
use crate::error::{Error, Result as CrateResult};
use crate::evidence::EvidenceContext;
use crate::schema::{Prediction, Schema};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScopeKey {
    Full,
    Field(String),
}

impl From<&TaskScope> for ScopeKey {
    fn from(scope: &TaskScope) -> Self {
        match scope {
            TaskScope::FullSchema => ScopeKey::Full,
            TaskScope::SingleField(f) => ScopeKey::Field(f.clone()),
        }
    }
}

type ScriptKey = (ScopeKey, Option<usize>, Option<u32>);

/// One line of a script file. `field` absent means a full-schema request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    pub response: String,
}

/// Replays canned reply text keyed by (scope, variant, iteration). `None`
/// in the variant or iteration slot matches any value; exact keys win.
/// Queries come from the deterministic template.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: HashMap<ScriptKey, String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_raw(&mut self, scope: ScopeKey, variant: Option<usize>, iteration: Option<u32>, text: impl Into<String>) {
        self.script.insert((scope, variant, iteration), text.into());
    }

    /// Reads a JSON array of [`ScriptEntry`].
    pub fn load(path: &Path) -> CrateResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(e.to_string()).context(path.display().to_string()))?;
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut backend = Self::new();
        for e in entries {
            let scope = e.field.map_or(ScopeKey::Full, ScopeKey::Field);
            backend.insert_raw(scope, e.variant, e.iteration, e.response);
        }
        backend
    }

    /// Scripts a well-formed reply built from `decisions`.
    pub fn respond(
        mut self,
        scope: ScopeKey,
        variant: Option<usize>,
        iteration: Option<u32>,
        decisions: &[(&str, Prediction)],
    ) -> Self {
        let owned: Vec<(String, Prediction)> = decisions
            .iter()
            .map(|(f, p)| (f.to_string(), p.clone()))
            .collect();
        self.insert_raw(scope, variant, iteration, render_response(&owned));
        self
    }

    fn lookup(&self, request: &MappingRequest) -> Option<&String> {
        let scope = ScopeKey::from(&request.scope);
        let v = request.variant_index;
        let i = request.iteration;
        [
            (Some(v), Some(i)),
            (Some(v), None),
            (None, Some(i)),
            (None, None),
        ]
        .into_iter()
        .find_map(|(v, i)| self.script.get(&(scope.clone(), v, i)))
    }
}

impl MapperBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError> {
        let text = self.lookup(request).ok_or_else(|| {
            BackendError::ScriptMissing(format!(
                "{:?} variant {} iteration {}",
                request.scope, request.variant_index, request.iteration
            ))
        })?;
        Ok(parse_response(text, request))
    }

    fn formulate_query(
        &self,
        conflict: &Conflict,
        _context: &EvidenceContext,
        source: &Schema,
        target: &Schema,
    ) -> Result<String, BackendError> {
        Ok(crate::providers::template_query(conflict, source.name(), target.name()))
    }
}
