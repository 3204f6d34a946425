use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentState, IterationRecord, RunConfig};
use crate::error::{Error, Result};
use crate::evidence::Ledger;
use crate::schema::Schema;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to continue a run. Randomness in the loop is keyed by
/// (seed, field, variant, ...) rather than drawn from a stream, so there is no
/// generator position to save beyond the seed in `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub source_fingerprint: String,
    pub target_fingerprint: String,
    pub state: AgentState,
    pub records: Vec<IterationRecord>,
    /// Ledger lines that belong to the completed iterations.
    pub ledger_entries: usize,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        source: &Schema,
        target: &Schema,
        state: AgentState,
        records: Vec<IterationRecord>,
        ledger_entries: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: config.clone(),
            source_fingerprint: source.fingerprint(),
            target_fingerprint: target.fingerprint(),
            state,
            records,
            ledger_entries,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        // Write-then-rename so a crash never leaves a torn checkpoint.
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_FORMAT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {version:?}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))
    }

    pub fn validate_against(&self, source: &Schema, target: &Schema) -> Result<()> {
        if self.source_fingerprint != source.fingerprint() {
            return Err(Error::Validation("source schema differs from the checkpointed run".into()));
        }
        if self.target_fingerprint != target.fingerprint() {
            return Err(Error::Validation("target schema differs from the checkpointed run".into()));
        }
        Ok(())
    }

    /// Drops ledger lines written after this checkpoint (an iteration that
    /// was interrupted part-way), so the resumed run re-appends them.
    pub fn trim_ledger(&self, ledger: &Ledger) -> Result<()> {
        let path = ledger.path();
        if !path.exists() {
            if self.ledger_entries == 0 {
                return Ok(());
            }
            return Err(Error::Checkpoint(format!("ledger {} is missing", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() < self.ledger_entries {
            return Err(Error::Checkpoint(format!(
                "ledger has {} entries but the checkpoint expects {}",
                lines.len(),
                self.ledger_entries
            )));
        }
        if lines.len() > self.ledger_entries {
            tracing::warn!(
                dropped = lines.len() - self.ledger_entries,
                "discarding ledger entries from an interrupted iteration"
            );
            let mut kept = lines[..self.ledger_entries].join("\n");
            if !kept.is_empty() {
                kept.push('\n');
            }
            std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
