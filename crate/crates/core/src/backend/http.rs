use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    build_search_prompt, build_system_prompt, build_user_prompt, parse_response, BackendError,
    BackendResponse, MapperBackend, MappingRequest,
};
use crate::confidence::Conflict;
use crate::error::{Error, Result};
use crate::evidence::EvidenceContext;
use crate::schema::Schema;

pub const ENV_ENDPOINT_URL: &str = "MAPPER_ENDPOINT_URL";
pub const ENV_API_KEY: &str = "MAPPER_API_KEY";
pub const ENV_MODEL_NAME: &str = "MAPPER_MODEL_NAME";

const SEARCH_SYSTEM_PROMPT: &str =
    "You write precise internet search queries that help disambiguate log schema fields.";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn from_env(timeout: Duration) -> Result<Self, BackendError> {
        let endpoint_url = std::env::var(ENV_ENDPOINT_URL)
            .map_err(|_| BackendError::NotConfigured(format!("{ENV_ENDPOINT_URL} is not set")))?;
        Ok(Self {
            endpoint_url,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model: std::env::var(ENV_MODEL_NAME).unwrap_or_else(|_| "default".to_string()),
            timeout,
        })
    }
}

/// One recorded completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request_hash: String,
    pub response_text: String,
}

/// Key for record/replay: system prompt, user prompt and temperature.
pub fn request_hash(system: &str, user: &str, temperature: f64) -> String {
    hex::encode(crate::util::sha256_parts([
        system.as_bytes(),
        user.as_bytes(),
        temperature.to_bits().to_le_bytes().as_slice(),
    ]))
}

/// Chat-completion client: `{"model", "messages": [{role, content}], "temperature"}`
/// in, reply text read from `choices[0].message.content`.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    system_prompt: String,
    recorder: Option<Mutex<PathBuf>>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::NotConfigured(e.to_string()))?;
        Ok(Self {
            config,
            client,
            system_prompt: build_system_prompt(),
            recorder: None,
        })
    }

    /// Appends every successful completion to `path` as a replay fixture.
    pub fn with_recorder(mut self, path: impl Into<PathBuf>) -> Self {
        self.recorder = Some(Mutex::new(path.into()));
        self
    }

    pub fn complete(&self, system: &str, user: &str, temperature: f64) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
        });
        let mut req = self.client.post(&self.config.endpoint_url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(BackendError::Quota);
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Status(status));
        }
        let value: serde_json::Value = resp.json().map_err(classify)?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| BackendError::Decode("missing choices[0].message.content".into()))?
            .to_string();
        if let Some(recorder) = &self.recorder {
            let path = recorder.lock().expect("recorder lock");
            let record = ReplayRecord {
                request_hash: request_hash(system, user, temperature),
                response_text: text.clone(),
            };
            append_record(&path, &record).map_err(|e| BackendError::Transport(e.to_string()))?;
        }
        Ok(text)
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else if e.is_decode() {
        BackendError::Decode(e.to_string())
    } else if let Some(status) = e.status() {
        BackendError::Status(status.as_u16())
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn append_record(path: &Path, record: &ReplayRecord) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", serde_json::to_string(record).expect("record serializes"))
}

/// First non-empty line, stripped of surrounding quotes.
fn first_query_line(text: &str) -> Option<String> {
    text.lines()
        .map(|l| l.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim())
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

impl MapperBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError> {
        let user = build_user_prompt(request);
        let text = self.complete(&self.system_prompt, &user, request.temperature)?;
        Ok(parse_response(&text, request))
    }

    fn formulate_query(
        &self,
        conflict: &Conflict,
        context: &EvidenceContext,
        source: &Schema,
        _target: &Schema,
    ) -> Result<String, BackendError> {
        let prompt = build_search_prompt(conflict, source.field(&conflict.field), context);
        let text = self.complete(SEARCH_SYSTEM_PROMPT, &prompt, 0.0)?;
        first_query_line(&text).ok_or_else(|| BackendError::Decode("empty search query".into()))
    }
}

/// Serves completions recorded by [`HttpBackend::with_recorder`]. A request
/// whose hash was never recorded fails with `ScriptMissing`.
pub struct ReplayBackend {
    records: HashMap<String, String>,
    system_prompt: String,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| (r.request_hash, r.response_text))
                .collect(),
            system_prompt: build_system_prompt(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), idx + 1)))?;
            records.push(record);
        }
        Ok(Self::from_records(records))
    }

    fn lookup(&self, system: &str, user: &str, temperature: f64) -> Result<&str, BackendError> {
        let hash = request_hash(system, user, temperature);
        self.records
            .get(&hash)
            .map(String::as_str)
            .ok_or(BackendError::ScriptMissing(format!("replay hash {hash}")))
    }
}

impl MapperBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn map_fields(&self, request: &MappingRequest) -> Result<BackendResponse, BackendError> {
        let user = build_user_prompt(request);
        let text = self.lookup(&self.system_prompt, &user, request.temperature)?;
        Ok(parse_response(text, request))
    }

    fn formulate_query(
        &self,
        conflict: &Conflict,
        context: &EvidenceContext,
        source: &Schema,
        _target: &Schema,
    ) -> Result<String, BackendError> {
        let prompt = build_search_prompt(conflict, source.field(&conflict.field), context);
        let text = self.lookup(SEARCH_SYSTEM_PROMPT, &prompt, 0.0)?;
        first_query_line(text).ok_or_else(|| BackendError::Decode("empty search query".into()))
    }
}
