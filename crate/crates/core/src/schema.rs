//! Source/target schema catalogs, predictions, mapping hypotheses and
//! ground truth.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Literal used on the wire and in files for "no corresponding target field".
pub const NOT_COVERED: &str = "NOT_COVERED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub data_type: String,
    #[serde(default)]
    pub sample_values: Vec<String>,
}

impl SchemaField {
    pub fn new(name: impl Into<String>, description: impl Into<String>, data_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            data_type: data_type.into(),
            sample_values: Vec::new(),
        }
    }

    pub fn with_samples<I, S>(mut self, samples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.sample_values = samples.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchemaSide {
    Source,
    Target,
}

impl fmt::Display for SchemaSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaSide::Source => f.write_str("source"),
            SchemaSide::Target => f.write_str("target"),
        }
    }
}

/// A validated, ordered field catalog. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    name: String,
    side: SchemaSide,
    fields: Vec<SchemaField>,
}

/// On-disk shape of a schema file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    name: String,
    fields: Vec<SchemaField>,
}

impl Schema {
    /// Validates and builds a schema. Rejects zero fields, empty names and
    /// duplicate names (byte-wise, case-sensitive).
    pub fn new(name: impl Into<String>, side: SchemaSide, fields: Vec<SchemaField>) -> Result<Self> {
        let name = name.into();
        if fields.is_empty() {
            return Err(Error::Validation(format!("{side} schema '{name}' has no fields")));
        }
        let mut seen = HashSet::with_capacity(fields.len());
        for (idx, field) in fields.iter().enumerate() {
            if field.name.is_empty() {
                return Err(Error::Validation(format!(
                    "{side} schema '{name}': field #{idx} has an empty name"
                )));
            }
            if !seen.insert(field.name.as_str()) {
                return Err(Error::Validation(format!(
                    "{side} schema '{name}': duplicate field name '{}'",
                    field.name
                )));
            }
        }
        Ok(Self { name, side, fields })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn side(&self) -> SchemaSide {
        self.side
    }

    pub fn fields(&self) -> &[SchemaField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, name: &str) -> Option<&SchemaField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.field(name).is_some()
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    pub fn from_json_str(text: &str, side: SchemaSide) -> Result<Self> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("schema file: {e}")))?;
        Schema::new(file.name, side, file.fields)
    }

    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            name: self.name.clone(),
            fields: self.fields.clone(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    /// Stable content hash, used to tie checkpoints to the schemas they were
    /// produced from.
    pub fn fingerprint(&self) -> String {
        crate::util::sha256_hex(self.to_json_string().as_bytes())
    }
}

pub fn load_schema(path: &Path, side: SchemaSide) -> Result<Schema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Schema::from_json_str(&text, side)
        .map_err(|e| e.context(format!("{}", path.display())))
}

pub fn save_schema(schema: &Schema, path: &Path) -> Result<()> {
    std::fs::write(path, schema.to_json_string()).map_err(|e| Error::io(path, e))
}

/// The value a single variant produced for a single source field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    TargetField(String),
    NotCovered,
    Missing,
}

impl Decision {
    pub fn target(name: impl Into<String>) -> Self {
        Decision::TargetField(name.into())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Decision::Missing)
    }

    pub fn target_name(&self) -> Option<&str> {
        match self {
            Decision::TargetField(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::TargetField(t) => f.write_str(t),
            Decision::NotCovered => f.write_str(NOT_COVERED),
            Decision::Missing => f.write_str("MISSING"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_reported_confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl Prediction {
    pub fn new(decision: Decision) -> Self {
        Self {
            decision,
            self_reported_confidence: None,
            reasoning: None,
        }
    }

    pub fn target(name: impl Into<String>) -> Self {
        Self::new(Decision::target(name))
    }

    pub fn not_covered() -> Self {
        Self::new(Decision::NotCovered)
    }

    pub fn missing() -> Self {
        Self::new(Decision::Missing)
    }

    /// Builds a prediction from a raw target label, demoting names the
    /// target schema does not know to `Missing`. Out-of-range self-reported
    /// confidence also demotes.
    pub fn validated(
        raw_target: &str,
        target: &Schema,
        self_reported_confidence: Option<u8>,
        reasoning: Option<String>,
    ) -> Self {
        let decision = if raw_target == NOT_COVERED {
            Decision::NotCovered
        } else if target.contains(raw_target) {
            Decision::TargetField(raw_target.to_string())
        } else {
            Decision::Missing
        };
        let in_range = self_reported_confidence.map_or(true, |c| (1..=5).contains(&c));
        if !in_range || decision.is_missing() {
            return Prediction::missing();
        }
        Self {
            decision,
            self_reported_confidence,
            reasoning,
        }
    }
}

impl From<Decision> for Prediction {
    fn from(decision: Decision) -> Self {
        Prediction::new(decision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEntry {
    pub modal_prediction: Prediction,
    pub confidence: f64,
    pub variant_predictions: Vec<Prediction>,
}

/// Current per-field mapping with its consistency confidence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingHypothesis {
    pub entries: BTreeMap<String, HypothesisEntry>,
}

impl MappingHypothesis {
    /// Builds a hypothesis from per-field variant predictions, scoring each
    /// field with the consistency confidence.
    pub fn from_variants(per_field: BTreeMap<String, Vec<Prediction>>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (field, preds) in per_field {
            let score = crate::confidence::compute_confidence(&preds)?;
            let modal = modal_with_metadata(&score.modal, &preds);
            entries.insert(
                field,
                HypothesisEntry {
                    modal_prediction: modal,
                    confidence: score.value,
                    variant_predictions: preds,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn get(&self, field: &str) -> Option<&HypothesisEntry> {
        self.entries.get(field)
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.values().map(|e| e.confidence).sum::<f64>() / self.entries.len() as f64
    }
}

/// Picks the first variant prediction carrying the modal decision so the
/// entry keeps its reasoning/self-reported confidence.
fn modal_with_metadata(modal: &Decision, preds: &[Prediction]) -> Prediction {
    preds
        .iter()
        .find(|p| &p.decision == modal)
        .cloned()
        .unwrap_or_else(|| Prediction::new(modal.clone()))
}

/// Verified source → target pairs. Only evaluation paths read this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: BTreeMap<String, Decision>,
}

impl GroundTruth {
    pub fn new(pairs: BTreeMap<String, Decision>, source: &Schema, target: &Schema) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Validation("ground truth is empty".into()));
        }
        for (src, tgt) in &pairs {
            if !source.contains(src) {
                return Err(Error::Validation(format!(
                    "ground truth references unknown source field '{src}'"
                )));
            }
            match tgt {
                Decision::TargetField(t) if !target.contains(t) => {
                    return Err(Error::Validation(format!(
                        "ground truth references unknown target field '{t}' (source '{src}')"
                    )));
                }
                Decision::Missing => {
                    return Err(Error::Validation(format!(
                        "ground truth entry for '{src}' has no target"
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &BTreeMap<String, Decision> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_csv_str(text: &str, source: &Schema, target: &Schema) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("ground truth header: {e}")))?
            .clone();
        if headers.len() != 2 || &headers[0] != "source_field" || &headers[1] != "target_field" {
            return Err(Error::Parse(
                "ground truth header must be `source_field,target_field`".into(),
            ));
        }
        let mut pairs = BTreeMap::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Parse(format!("ground truth row {}: {e}", idx + 2)))?;
            if row.len() != 2 {
                return Err(Error::Parse(format!("ground truth row {}: expected 2 columns", idx + 2)));
            }
            let tgt = if &row[1] == NOT_COVERED {
                Decision::NotCovered
            } else {
                Decision::TargetField(row[1].to_string())
            };
            if pairs.insert(row[0].to_string(), tgt).is_some() {
                return Err(Error::Validation(format!(
                    "ground truth lists source field '{}' twice",
                    &row[0]
                )));
            }
        }
        GroundTruth::new(pairs, source, target)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("source_field,target_field\n");
        for (src, tgt) in &self.pairs {
            out.push_str(src);
            out.push(',');
            out.push_str(&tgt.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn load_ground_truth(path: &Path, source: &Schema, target: &Schema) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GroundTruth::from_csv_str(&text, source, target)
}
