//! Language-model access: prompt templates, backends and the record/replay
//! cache.
//!
//! With [`Backend::Replay`] every completion is read from the cache directory,
//! which makes the whole pipeline a deterministic function of the task, the
//! run configuration and the cache contents.

mod backend;
mod cache;
mod templates;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{HttpBackend, HttpConfig, MockBackend, API_KEY_ENV, FALLBACK_API_KEY_ENV};
pub use cache::{cache_key, ResponseCache};
pub use templates::{bindings, PromptRequest, PromptTemplates, TemplateId, DEFAULT_TEMPERATURE, GENERATOR_FEW_SHOT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("template `{template}` needs a binding for `{name}`")]
    MissingBinding { template: TemplateId, name: String },
    #[error("language model backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no cached response for key {0}")]
    CacheMiss(String),
    #[error("rate limited by the language model backend")]
    RateLimited,
    #[error("cache I/O failure: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub backend: BackendKind,
    pub cache_key: String,
}

pub enum Backend {
    Http(HttpBackend),
    Mock(MockBackend),
    Replay,
}

/// Entry point for every completion made by the pipeline.
pub struct LlmGateway {
    backend: Backend,
    cache: Option<ResponseCache>,
    record: bool,
    templates: PromptTemplates,
}

impl LlmGateway {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            cache: None,
            record: false,
            templates: PromptTemplates::builtin(),
        }
    }

    pub fn mock(mock: MockBackend) -> Self {
        Self::new(Backend::Mock(mock))
    }

    pub fn replay(cache: ResponseCache) -> Self {
        Self::new(Backend::Replay).with_cache(cache)
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Write every non-replayed response into the cache. For the http backend
    /// this also bypasses cache lookups so responses are captured fresh.
    pub fn recording(mut self, record: bool) -> Self {
        self.record = record;
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn complete(&self, req: &PromptRequest) -> Result<LlmResponse, LlmError> {
        let key = cache_key(req);
        let replayed = |text| LlmResponse {
            text,
            backend: BackendKind::Replay,
            cache_key: key.clone(),
        };
        match &self.backend {
            Backend::Replay => {
                let cache = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| LlmError::BackendUnavailable("replay backend without a cache".into()))?;
                cache
                    .get(&key)?
                    .map(replayed)
                    .ok_or_else(|| LlmError::CacheMiss(key.clone()))
            }
            Backend::Http(http) => {
                if let (Some(cache), false) = (&self.cache, self.record) {
                    if let Some(text) = cache.get(&key)? {
                        return Ok(replayed(text));
                    }
                }
                let text = http.complete(req)?;
                if let Some(cache) = &self.cache {
                    cache.put(&key, req, &text)?;
                }
                Ok(LlmResponse {
                    text,
                    backend: BackendKind::Http,
                    cache_key: key,
                })
            }
            Backend::Mock(mock) => {
                let text = mock.respond(req)?;
                if let (Some(cache), true) = (&self.cache, self.record) {
                    cache.put(&key, req, &text)?;
                }
                Ok(LlmResponse {
                    text,
                    backend: BackendKind::Mock,
                    cache_key: key,
                })
            }
        }
    }
}

fn fence_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").unwrap())
}

/// First fenced code block of a response, or the whole text trimmed when the
/// response has no fences.
pub fn extract_code_block(response_text: &str) -> String {
    match find_code_blocks(response_text).into_iter().next() {
        Some(block) => block,
        None => response_text.trim().to_owned(),
    }
}

/// All fenced code blocks in order of appearance.
pub fn find_code_blocks(response_text: &str) -> Vec<String> {
    fence_regex()
        .captures_iter(response_text)
        .map(|c| c[1].trim_matches('\n').trim_end().to_owned())
        .collect()
}
