//! Offline world for running the agent without a language model.
//!
//! A scenario is a generated source/target schema pair with ground truth, a
//! planted document corpus and a noisy oracle mapper. Field classes:
//!
//! - EASY: right answer almost always; a fixed wrong target otherwise.
//! - AMBIGUOUS: a direction-sensitive pair (`RemotePort`/`LocalPort` style)
//!   with two plausible targets; the oracle picks uniformly between them
//!   until the pair's definition document is in the prompt context.
//! - UNMAPPED: no target exists; the oracle often hallucinates a plausible
//!   target until a document stating there is no equivalent is in context.
//!
//! Every field has one planted decisive document. Decoy documents mention
//! the same fields and candidates but never settle the question, and some
//! outrank the decisive document for a given query.

mod calibrate;
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::providers::{CorpusIndex, CorpusProvider};
use crate::schema::{save_schema, Decision, GroundTruth, Schema, SchemaField, SchemaSide};

pub use calibrate::{run_calibration_experiment, run_scenario, write_calibration_csv, CalibrationRow, RunMetrics};
pub use oracle::{brute_force_confidence, oracle_map, OracleBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub easy: usize,
    pub ambiguous: usize,
    pub unmapped: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.easy + self.ambiguous + self.unmapped
    }
}

/// Per-variant error probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// EASY field answers a fixed wrong target.
    pub easy: f64,
    /// UNMAPPED field answers a plausible target instead of `NOT_COVERED`.
    pub unmapped: f64,
    /// Any answer comes back malformed.
    pub missing: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            easy: 0.01,
            unmapped: 0.6,
            missing: 0.003,
        }
    }
}

/// Reproducible experiment definition; the JSON form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub counts: ClassCounts,
    pub decoy_docs: usize,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_vendor")]
    pub vendor: String,
    #[serde(default = "default_target_name")]
    pub target_schema: String,
}

fn default_vendor() -> String {
    "Acme".to_string()
}

fn default_target_name() -> String {
    "CommonSecuritySchema".to_string()
}

/// Ground-truth pairs of the standard scenario.
pub const STANDARD_COUNTS: ClassCounts = ClassCounts {
    easy: 30,
    ambiguous: 20,
    unmapped: 16,
};
pub const STANDARD_DECOYS: usize = 30;

impl ScenarioSpec {
    pub fn new(seed: u64, counts: ClassCounts, decoy_docs: usize) -> Self {
        Self {
            seed,
            counts,
            decoy_docs,
            noise: NoiseModel::default(),
            vendor: default_vendor(),
            target_schema: default_target_name(),
        }
    }

    /// 66 fields, 20 of them ambiguous.
    pub fn standard(seed: u64) -> Self {
        Self::new(seed, STANDARD_COUNTS, STANDARD_DECOYS)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.total() == 0 {
            return Err(Error::Validation("scenario needs at least one field".into()));
        }
        for (name, p) in [
            ("easy", self.noise.easy),
            ("unmapped", self.noise.unmapped),
            ("missing", self.noise.missing),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} noise {p} is not a probability")));
            }
        }
        if self.noise.easy > 0.05 {
            return Err(Error::Validation("easy-field noise must not exceed 0.05".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(e.to_string()).context(path.display().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("spec serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FieldClass {
    Easy,
    Ambiguous {
        candidates: Vec<String>,
        evidence_doc_id: String,
    },
    Unmapped,
}

/// Everything the oracle knows about one source field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimField {
    pub class: FieldClass,
    pub truth: Decision,
    /// The wrong target an EASY field slips to, or the targets an UNMAPPED
    /// field hallucinates.
    pub distractors: Vec<String>,
    pub evidence_doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub source: Schema,
    pub target: Schema,
    pub truth: GroundTruth,
    pub fields: BTreeMap<String, SimField>,
    pub corpus: Vec<CorpusDocument>,
}

impl Scenario {
    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    pub fn noise(&self) -> NoiseModel {
        self.spec.noise
    }

    pub fn field_classes(&self) -> BTreeMap<&str, &FieldClass> {
        self.fields.iter().map(|(k, v)| (k.as_str(), &v.class)).collect()
    }

    pub fn corpus_index(&self) -> CorpusIndex {
        CorpusIndex::from_documents(self.corpus.iter().map(|d| (d.id.clone(), d.text.clone())))
    }

    pub fn corpus_provider(&self) -> CorpusProvider {
        CorpusProvider::new(self.corpus_index())
    }

    pub fn oracle(&self) -> OracleBackend {
        OracleBackend::new(self.clone())
    }

    /// Writes `scenario.json`, `source.json`, `target.json`, `truth.csv` and
    /// `corpus/` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.spec.save(&dir.join("scenario.json"))?;
        save_schema(&self.source, &dir.join("source.json"))?;
        save_schema(&self.target, &dir.join("target.json"))?;
        let truth_path = dir.join("truth.csv");
        std::fs::write(&truth_path, self.truth.to_csv_string()).map_err(|e| Error::io(&truth_path, e))?;
        let corpus = dir.join("corpus");
        std::fs::create_dir_all(&corpus).map_err(|e| Error::io(&corpus, e))?;
        for doc in &self.corpus {
            let path = corpus.join(&doc.id);
            std::fs::write(&path, &doc.text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

const DIRECTIONS: [(&str, &str, &str, &str); 6] = [
    ("Remote", "Local", "Destination", "Source"),
    ("Dst", "Src", "Target", "Actor"),
    ("Peer", "Self", "Responder", "Initiator"),
    ("Outer", "Inner", "Original", "Translated"),
    ("Server", "Client", "Upstream", "Downstream"),
    ("Sent", "Recv", "Outbound", "Inbound"),
];

const NOUNS: [&str; 24] = [
    "Port", "Addr", "Host", "User", "Process", "File", "Hash", "Domain", "Session", "Account", "Registry",
    "Service", "Url", "Agent", "Command", "Device", "Group", "Token", "Rule", "Share", "Module", "Mailbox",
    "Packet", "Interface",
];

const EASY_PREFIXES: [&str; 8] = ["Event", "Sensor", "Alert", "Report", "Audit", "Scan", "Policy", "Cloud"];

const UNMAPPED_PREFIXES: [&str; 8] = [
    "Internal", "Engine", "Sandbox", "Heuristic", "Telemetry", "Debug", "Legacy", "Vendor",
];

const EXTRA_TARGET_PREFIXES: [&str; 4] = ["Observer", "Related", "Threat", "Tenant"];

/// Hands out unique names from shuffled prefix × noun combinations, falling
/// back to numbered names once a prefix set is exhausted.
struct NameBank {
    used: BTreeSet<String>,
}

impl NameBank {
    fn take(&mut self, rng: &mut ChaCha8Rng, prefixes: &[&str], lead: &str) -> String {
        let mut combos: Vec<String> = prefixes
            .iter()
            .flat_map(|p| NOUNS.iter().map(move |n| format!("{lead}{p}{n}")))
            .collect();
        combos.shuffle(rng);
        if let Some(name) = combos.into_iter().find(|c| !self.used.contains(c)) {
            self.used.insert(name.clone());
            return name;
        }
        let mut i = 2;
        loop {
            let name = format!("{lead}{}{}{i}", prefixes[0], NOUNS[0]);
            if self.used.insert(name.clone()) {
                return name;
            }
            i += 1;
        }
    }
}

/// A planted document and the fields it settles.
struct Group {
    members: Vec<String>,
}

/// Builds the deterministic scenario for `spec`.
pub fn build_from_spec(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut source_names = NameBank { used: BTreeSet::new() };
    let mut target_names = NameBank { used: BTreeSet::new() };
    let vendor = &spec.vendor;

    let mut source_fields = Vec::new();
    let mut target_fields = Vec::new();
    let mut fields: BTreeMap<String, SimField> = BTreeMap::new();
    let mut groups: Vec<(Group, String)> = Vec::new(); // (group, document text)

    let doc_id = |n: usize| format!("ref-{n:03}.txt");

    // Ambiguous fields come in direction pairs sharing one definition page.
    let mut nouns: Vec<&str> = NOUNS.to_vec();
    nouns.shuffle(&mut rng);
    let mut remaining = spec.counts.ambiguous;
    let mut pair_idx = 0;
    while remaining > 0 {
        let (sa, sb, ta, tb) = DIRECTIONS[pair_idx % DIRECTIONS.len()];
        let noun = nouns[(pair_idx / DIRECTIONS.len() + pair_idx) % nouns.len()];
        let round = pair_idx / (DIRECTIONS.len() * nouns.len());
        let suffix = if round == 0 { String::new() } else { (round + 1).to_string() };
        let src = [format!("{sa}{noun}{suffix}"), format!("{sb}{noun}{suffix}")];
        let tgt = [format!("cs{ta}{noun}{suffix}"), format!("cs{tb}{noun}{suffix}")];
        let flipped = rng.gen_bool(0.5);
        let take = remaining.min(2);
        let id = doc_id(groups.len());
        let mut sentences = Vec::new();
        let mut members = Vec::new();
        for i in 0..take {
            let truth = if flipped { &tgt[1 - i] } else { &tgt[i] };
            source_names.used.insert(src[i].clone());
            source_fields.push(
                SchemaField::new(
                    &src[i],
                    format!("{noun} reported by the {vendor} sensor ({} side)", sa.to_lowercase()),
                    "string",
                ),
            );
            fields.insert(
                src[i].clone(),
                SimField {
                    class: FieldClass::Ambiguous {
                        candidates: tgt.to_vec(),
                        evidence_doc_id: id.clone(),
                    },
                    truth: Decision::target(truth.clone()),
                    distractors: Vec::new(),
                    evidence_doc_id: id.clone(),
                },
            );
            sentences.push(format!("{} corresponds to {truth}.", src[i]));
            members.push(src[i].clone());
        }
        for (i, t) in tgt.iter().enumerate() {
            target_names.used.insert(t.clone());
            let dir = if i == 0 { ta } else { tb };
            target_fields.push(SchemaField::new(t, format!("{dir} {noun}"), "string"));
        }
        let text = format!(
            "{vendor} field reference: {noun} direction fields.\n{}\n",
            sentences.join(" ")
        );
        groups.push((Group { members }, text));
        remaining -= take;
        pair_idx += 1;
    }

    for _ in 0..spec.counts.easy {
        let src = source_names.take(&mut rng, &EASY_PREFIXES, "");
        let tgt = target_names.take(&mut rng, &EASY_PREFIXES, "cs");
        source_fields.push(SchemaField::new(&src, format!("{src} value from the {vendor} sensor"), "string"));
        target_fields.push(SchemaField::new(&tgt, format!("{} in common form", &tgt[2..]), "string"));
        let id = doc_id(groups.len());
        fields.insert(
            src.clone(),
            SimField {
                class: FieldClass::Easy,
                truth: Decision::target(tgt.clone()),
                distractors: Vec::new(),
                evidence_doc_id: id,
            },
        );
        let text = format!("{vendor} field reference.\n{src} corresponds to {tgt}.\n");
        groups.push((Group { members: vec![src] }, text));
    }

    // Unmapped fields, also paired per reference page.
    let unmapped: Vec<String> = (0..spec.counts.unmapped)
        .map(|_| source_names.take(&mut rng, &UNMAPPED_PREFIXES, ""))
        .collect();
    for chunk in unmapped.chunks(2) {
        let id = doc_id(groups.len());
        let mut sentences = Vec::new();
        for src in chunk {
            source_fields.push(SchemaField::new(src, format!("{vendor}-internal {src}"), "string"));
            fields.insert(
                src.clone(),
                SimField {
                    class: FieldClass::Unmapped,
                    truth: Decision::NotCovered,
                    distractors: Vec::new(),
                    evidence_doc_id: id.clone(),
                },
            );
            sentences.push(format!("{src} has no equivalent."));
        }
        let text = format!("{vendor} field reference: vendor-only telemetry.\n{}\n", sentences.join(" "));
        groups.push((Group { members: chunk.to_vec() }, text));
    }

    for _ in 0..4 {
        let tgt = target_names.take(&mut rng, &EXTRA_TARGET_PREFIXES, "cs");
        target_fields.push(SchemaField::new(&tgt, format!("{} in common form", &tgt[2..]), "string"));
    }

    // Distractors are drawn once every target name exists.
    let all_targets: Vec<String> = target_fields.iter().map(|f| f.name.clone()).collect();
    for sim in fields.values_mut() {
        match sim.class {
            FieldClass::Easy => {
                let truth = sim.truth.target_name().unwrap_or_default().to_string();
                sim.distractors = vec![pick_other(&mut rng, &all_targets, &[truth])];
            }
            FieldClass::Unmapped => {
                let mut picks: Vec<String> = Vec::new();
                while picks.len() < 3.min(all_targets.len()) {
                    let p = pick_other(&mut rng, &all_targets, &picks);
                    picks.push(p);
                }
                picks.sort();
                sim.distractors = picks;
            }
            FieldClass::Ambiguous { .. } => {}
        }
    }

    let mut corpus: Vec<CorpusDocument> = groups
        .iter()
        .enumerate()
        .map(|(i, (_, text))| CorpusDocument {
            id: doc_id(i),
            text: text.clone(),
        })
        .collect();

    // Decoys discuss the contested fields without settling anything.
    let contested: Vec<&Group> = groups
        .iter()
        .map(|(g, _)| g)
        .filter(|g| !matches!(fields[&g.members[0]].class, FieldClass::Easy))
        .collect();
    let decoy_pool: Vec<&Group> = if contested.is_empty() {
        groups.iter().map(|(g, _)| g).collect()
    } else {
        contested
    };
    for d in 0..spec.decoy_docs {
        let group = decoy_pool[rng.gen_range(0..decoy_pool.len())];
        corpus.push(CorpusDocument {
            id: format!("thread-{d:03}.txt"),
            text: decoy_text(&mut rng, vendor, group, &fields),
        });
    }

    let source = Schema::new(vendor.clone(), SchemaSide::Source, source_fields)?;
    let target = Schema::new(spec.target_schema.clone(), SchemaSide::Target, target_fields)?;
    let pairs = fields.iter().map(|(f, s)| (f.clone(), s.truth.clone())).collect();
    let truth = GroundTruth::new(pairs, &source, &target)?;
    Ok(Scenario {
        spec: spec.clone(),
        source,
        target,
        truth,
        fields,
        corpus,
    })
}

/// Builds a scenario with the default noise model.
pub fn build_scenario(seed: u64, counts: ClassCounts, decoy_docs: usize) -> Result<Scenario> {
    build_from_spec(&ScenarioSpec::new(seed, counts, decoy_docs))
}

fn pick_other(rng: &mut ChaCha8Rng, pool: &[String], exclude: &[String]) -> String {
    let choices: Vec<&String> = pool.iter().filter(|t| !exclude.contains(t)).collect();
    if choices.is_empty() {
        return pool[0].clone();
    }
    choices[rng.gen_range(0..choices.len())].clone()
}

const DECOY_LINES: [&str; 4] = [
    "Seeing odd values in {f} on older sensors.",
    "Anyone know what {f} holds?",
    "{f} shows up empty after the upgrade.",
    "Our parser drops {f} sometimes.",
];

fn decoy_text(rng: &mut ChaCha8Rng, vendor: &str, group: &Group, fields: &BTreeMap<String, SimField>) -> String {
    let mut lines = vec![format!("{vendor} community thread")];
    for member in &group.members {
        let mentions = rng.gen_range(0..=4);
        for _ in 0..mentions {
            let line = DECOY_LINES[rng.gen_range(0..DECOY_LINES.len())];
            lines.push(line.replace("{f}", member));
        }
        let sim = &fields[member];
        let candidates: Vec<String> = match &sim.class {
            FieldClass::Ambiguous { candidates, .. } => candidates.clone(),
            _ => sim.distractors.clone(),
        };
        for c in candidates {
            if rng.gen_bool(0.5) {
                lines.push(format!("Could it be {c}?"));
            }
        }
    }
    lines.push("No answer yet.".to_string());
    lines.join("\n") + "\n"
}
