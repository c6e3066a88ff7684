//! Record/replay store: one raw response file per cache key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{LlmError, PromptRequest, TemplateId};

/// Hex SHA-256 over `(template_id, temperature, sample_index, prompt)`.
pub fn cache_key(req: &PromptRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"bughunt-cache-v1\0");
    hasher.update(req.template_id.as_str().as_bytes());
    hasher.update([0]);
    hasher.update(req.temperature.to_bits().to_le_bytes());
    hasher.update(req.sample_index.to_le_bytes());
    hasher.update((req.rendered_prompt.len() as u64).to_le_bytes());
    hasher.update(req.rendered_prompt.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Serialize)]
struct RequestSidecar<'a> {
    template_id: TemplateId,
    temperature: f64,
    sample_index: u32,
    task_id: Option<&'a str>,
    rendered_prompt: &'a str,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn response_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, LlmError> {
        let path = self.response_path(key);
        match fs::read(&path) {
            Ok(bytes) => String::from_utf8(bytes)
                .map(Some)
                .map_err(|e| LlmError::Io(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(LlmError::Io(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes the response (and a request sidecar) via rename, so concurrent
    /// writers of one key never leave a torn file.
    pub fn put(&self, key: &str, req: &PromptRequest, text: &str) -> Result<(), LlmError> {
        let io = |e: std::io::Error| LlmError::Io(format!("{}: {e}", self.dir.display()));
        fs::create_dir_all(&self.dir).map_err(io)?;
        let sidecar = RequestSidecar {
            template_id: req.template_id,
            temperature: req.temperature,
            sample_index: req.sample_index,
            task_id: req.task_id.as_deref(),
            rendered_prompt: &req.rendered_prompt,
        };
        let mut json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        json.push(b'\n');
        atomic_write(&self.dir.join(format!("{key}.request.json")), &json).map_err(io)?;
        atomic_write(&self.response_path(key), text.as_bytes()).map_err(io)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
