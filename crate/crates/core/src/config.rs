//! File-based configuration covering every provider and pipeline setting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProviderConfig, ProviderMode};
use crate::error::{Error, Result};
use crate::extract::ExtractionClientConfig;
use crate::indexer::IndexConfig;
use crate::linker::{FilterClientConfig, FilterMode};
use crate::retriever::{ReaderClientConfig, ReaderMode, RetrievalConfig};

pub const ENV_EMBED_URL: &str = "GRAPHMEM_EMBED_URL";
pub const ENV_EXTRACT_URL: &str = "GRAPHMEM_EXTRACT_URL";
pub const ENV_FILTER_URL: &str = "GRAPHMEM_FILTER_URL";
pub const ENV_READER_URL: &str = "GRAPHMEM_READER_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub max_concurrent: usize,
    /// How long a request may wait for a free slot before being rejected.
    pub queue_timeout_ms: u64,
    pub request_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            max_concurrent: 8,
            queue_timeout_ms: 250,
            request_timeout_ms: 30_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphMemConfig {
    pub embedding: EmbeddingProviderConfig,
    pub extraction: ExtractionClientConfig,
    pub filter: FilterClientConfig,
    pub reader: ReaderClientConfig,
    pub index: IndexConfig,
    pub retrieval: RetrievalConfig,
    pub service: ServiceConfig,
}

impl GraphMemConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reads the config file when given, then applies endpoint environment variables.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut c = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        c.apply_env(|k| std::env::var(k).ok());
        Ok(c)
    }

    /// Setting an endpoint variable switches that provider to remote mode.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(url) = var(ENV_EMBED_URL) {
            self.embedding.mode = ProviderMode::Remote;
            self.embedding.endpoint = Some(url);
        }
        if let Some(url) = var(ENV_EXTRACT_URL) {
            self.extraction.mode = ProviderMode::Remote;
            self.extraction.endpoint = Some(url);
        }
        if let Some(url) = var(ENV_FILTER_URL) {
            self.filter.endpoint = Some(url);
            self.retrieval.filter_mode = FilterMode::Remote;
        }
        if let Some(url) = var(ENV_READER_URL) {
            self.reader.mode = ReaderMode::Remote;
            self.reader.endpoint = Some(url);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"retrieval": {"top_k": 10}, "index": {"damping": 0.6}}"#).unwrap();
        let c = GraphMemConfig::from_file(&p).unwrap();
        assert_eq!(c.retrieval.top_k, 10);
        assert_eq!(c.retrieval.triple_top_k, 5);
        assert_eq!(c.index.damping, 0.6);
        assert_eq!(c.index.kg.synonym_threshold, 0.8);
        assert_eq!(c.extraction.temperature, 0.0);
    }

    #[test]
    fn unknown_section_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"retreival": {}}"#).unwrap();
        assert!(matches!(GraphMemConfig::from_file(&p), Err(Error::Config(_))));
    }

    #[test]
    fn env_switches_to_remote() {
        let mut c = GraphMemConfig::default();
        c.apply_env(|k| (k == ENV_FILTER_URL).then(|| "http://f".to_string()));
        assert_eq!(c.retrieval.filter_mode, FilterMode::Remote);
        assert_eq!(c.filter.endpoint.as_deref(), Some("http://f"));
        assert_eq!(c.embedding.mode, ProviderMode::Mock);
    }
}
