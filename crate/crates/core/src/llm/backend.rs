use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{LlmError, PromptRequest};

pub const API_KEY_ENV: &str = "BUGHUNT_API_KEY";
pub const FALLBACK_API_KEY_ENV: &str = "OPENAI_API_KEY";

pub type ResponseFn = dyn Fn(&PromptRequest) -> Result<String, LlmError> + Send + Sync;

/// Canned responses for offline runs and tests.
///
/// A scripted mock looks up `"<template_id>@<task_id>"` first, then
/// `"<template_id>"`, and picks `responses[sample_index % len]`.
pub enum MockBackend {
    Scripted(BTreeMap<String, Vec<String>>),
    Function(Box<ResponseFn>),
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockBackend::Scripted(map) => f.debug_tuple("Scripted").field(&map.keys()).finish(),
            MockBackend::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl MockBackend {
    /// Always answers `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        MockBackend::Function(Box::new(move |_| Ok(text.clone())))
    }

    pub fn from_fn(f: impl Fn(&PromptRequest) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        MockBackend::Function(Box::new(f))
    }

    /// Loads a JSON object mapping keys to response lists.
    pub fn from_script_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        let script: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        Ok(MockBackend::Scripted(script))
    }

    pub fn respond(&self, req: &PromptRequest) -> Result<String, LlmError> {
        match self {
            MockBackend::Function(f) => f(req),
            MockBackend::Scripted(script) => {
                let template = req.template_id.as_str();
                let scoped = req.task_id.as_ref().map(|t| format!("{template}@{t}"));
                let responses = scoped
                    .and_then(|k| script.get(&k))
                    .or_else(|| script.get(template))
                    .filter(|r| !r.is_empty())
                    .ok_or_else(|| {
                        LlmError::BackendUnavailable(format!("mock script has no entry for `{template}`"))
                    })?;
                Ok(responses[req.sample_index as usize % responses.len()].clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_concurrent: usize,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub request_timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0125".into(),
            api_key: None,
            max_concurrent: 4,
            max_retries: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(16),
            request_timeout: Duration::from_secs(120),
        }
    }
}

impl HttpConfig {
    pub fn api_key_from_env() -> Option<String> {
        std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var(FALLBACK_API_KEY_ENV))
            .ok()
            .filter(|k| !k.is_empty())
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    slots: Semaphore,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    RateLimited,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        let slots = Semaphore::new(config.max_concurrent);
        Ok(Self { config, client, slots })
    }

    fn attempt(&self, req: &PromptRequest) -> Result<Attempt, LlmError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.rendered_prompt}],
            "temperature": req.temperature,
        });
        let mut builder = self.client.post(&url).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() => return Ok(Attempt::Retry(e.to_string())),
            Err(e) => return Err(LlmError::BackendUnavailable(e.to_string())),
        };
        let status = response.status();
        if status.as_u16() == 429 {
            return Ok(Attempt::RateLimited);
        }
        if status.is_server_error() {
            return Ok(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(LlmError::BackendUnavailable(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| LlmError::BackendUnavailable(format!("malformed response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(Attempt::Done(content))
    }

    pub fn complete(&self, req: &PromptRequest) -> Result<String, LlmError> {
        let _permit = self.slots.acquire();
        let mut backoff = self.config.initial_backoff;
        let mut last = Attempt::Retry(String::new());
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(backoff);
                backoff = (backoff * 2).min(self.config.max_backoff);
            }
            match self.attempt(req)? {
                Attempt::Done(text) => return Ok(text),
                other => {
                    tracing::warn!(event = "llm_retry", attempt, template = %req.template_id);
                    last = other;
                }
            }
        }
        Err(match last {
            Attempt::RateLimited => LlmError::RateLimited,
            Attempt::Retry(msg) => LlmError::BackendUnavailable(msg),
            Attempt::Done(_) => unreachable!(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TemplateId;

    fn req(template_id: TemplateId, sample_index: u32, task: Option<&str>) -> PromptRequest {
        PromptRequest {
            template_id,
            rendered_prompt: "p".into(),
            temperature: 0.8,
            sample_index,
            task_id: task.map(str::to_owned),
        }
    }

    #[test]
    fn scripted_mock_cycles_and_scopes() {
        let mut script = BTreeMap::new();
        script.insert("direct_inputs".to_owned(), vec!["a".to_owned(), "b".to_owned()]);
        script.insert("direct_inputs@t1".to_owned(), vec!["scoped".to_owned()]);
        let mock = MockBackend::Scripted(script);
        assert_eq!(mock.respond(&req(TemplateId::DirectInputs, 3, None)).unwrap(), "b");
        assert_eq!(
            mock.respond(&req(TemplateId::DirectInputs, 0, Some("t1"))).unwrap(),
            "scoped"
        );
        assert_eq!(
            mock.respond(&req(TemplateId::DirectInputs, 2, Some("t2"))).unwrap(),
            "a"
        );
        assert!(matches!(
            mock.respond(&req(TemplateId::InputGenerator, 0, None)),
            Err(LlmError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn unreachable_http_endpoint_is_unavailable() {
        let backend = HttpBackend::new(HttpConfig {
            base_url: "http://127.0.0.1:9".into(),
            max_retries: 1,
            initial_backoff: Duration::from_millis(1),
            request_timeout: Duration::from_secs(2),
            ..HttpConfig::default()
        })
        .unwrap();
        let err = backend.complete(&req(TemplateId::DirectInputs, 0, None)).unwrap_err();
        assert!(matches!(err, LlmError::BackendUnavailable(_)));
    }
}
