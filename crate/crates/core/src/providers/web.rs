use std::time::Duration;

use serde::Deserialize;

use super::{EvidenceProvider, ProviderError, SearchResult};

pub const ENV_SEARCH_ENDPOINT_URL: &str = "SEARCH_ENDPOINT_URL";
pub const ENV_SEARCH_API_KEY: &str = "SEARCH_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct WebSearchConfig {
    pub endpoint_url: String,
    pub api_key: Option<String>,
    pub top_k: usize,
    pub timeout: Duration,
}

impl WebSearchConfig {
    pub fn from_env(timeout: Duration) -> Result<Self, ProviderError> {
        let endpoint_url = std::env::var(ENV_SEARCH_ENDPOINT_URL)
            .map_err(|_| ProviderError::Config(format!("{ENV_SEARCH_ENDPOINT_URL} is not set")))?;
        Ok(Self {
            endpoint_url,
            api_key: std::env::var(ENV_SEARCH_API_KEY).ok().filter(|k| !k.is_empty()),
            top_k: 10,
            timeout,
        })
    }
}

#[derive(Deserialize)]
struct WireResult {
    #[serde(default)]
    title: String,
    #[serde(default)]
    url: String,
    #[serde(default)]
    snippet: String,
}

/// `GET {endpoint}?q=<query>` returning a JSON array of `{title, url, snippet}`.
/// Vendor-specific search APIs sit behind an adapter exposing this shape.
pub struct WebSearchProvider {
    config: WebSearchConfig,
    client: reqwest::blocking::Client,
}

impl WebSearchProvider {
    pub fn new(config: WebSearchConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }
}

impl EvidenceProvider for WebSearchProvider {
    fn name(&self) -> &str {
        "web"
    }

    fn search(&self, query: &str) -> Result<Vec<SearchResult>, ProviderError> {
        if query.trim().is_empty() {
            return Err(ProviderError::EmptyQuery);
        }
        let mut req = self.client.get(&self.config.endpoint_url).query(&[("q", query)]);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status(status));
        }
        let items: Vec<WireResult> = resp.json().map_err(|e| ProviderError::Decode(e.to_string()))?;
        Ok(items
            .into_iter()
            .take(self.config.top_k)
            .map(|w| SearchResult {
                title: w.title,
                locator: w.url,
                snippet: w.snippet,
            })
            .collect())
    }
}
