//! Query execution with an on-disk response cache.
//!
//! Cache entries live at `cache_dir/<model>/<key>.json` and are written via a
//! temporary file and a rename. Only successful responses are cached, so a
//! rerun retries exactly the queries that failed.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fairaudit_core::promptgen::QuerySpec;
use fairaudit_core::report::file_stem;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the default bearer token.
pub const API_KEY_ENV: &str = "AUDIT_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid model config for `{model}`: {reason}")]
    InvalidConfig { model: String, reason: String },
    #[error("cache directory {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build http client: {0}")]
    Http(#[from] reqwest::Error),
    #[error("cannot start async runtime: {0}")]
    Runtime(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub run_index: u32,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Variable to read the bearer token from instead of `AUDIT_API_KEY`.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            endpoint_url: endpoint_url.into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            run_index: 0,
            request_timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            backoff_base_ms: default_backoff_ms(),
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let fail = |reason: &str| {
            Err(ClientError::InvalidConfig {
                model: self.model_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.model_id.is_empty() {
            return fail("model_id is empty");
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return fail("temperature must lie in [0, 2]");
        }
        if self.request_timeout_ms == 0 {
            return fail("request_timeout_ms must be positive");
        }
        Ok(())
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(self.api_key_env.as_deref().unwrap_or(API_KEY_ENV))
            .ok()
            .filter(|k| !k.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseStatus {
    Ok,
    HttpError,
    Timeout,
    ExhaustedRetries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub case_id: String,
    pub label_name: String,
    pub value_name: String,
    pub prompt_hash: String,
    pub model_id: String,
    pub temperature: f64,
    pub run_index: u32,
    pub body: String,
    pub status: ResponseStatus,
    pub latency_ms: u64,
    pub from_cache: bool,
}

/// Persisted form of a successful response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_hash: String,
    pub body: String,
    pub timestamp: String,
    pub status: ResponseStatus,
}

/// Hex SHA-256 over the fields that make a request distinct.
pub fn cache_key(model_id: &str, temperature: f64, prompt_hash: &str, run_index: u32) -> String {
    // +0.0 and -0.0 are the same request
    let t = if temperature == 0.0 { 0.0f64 } else { temperature };
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0]);
    h.update(t.to_bits().to_le_bytes());
    h.update(prompt_hash.as_bytes());
    h.update([0]);
    h.update(run_index.to_le_bytes());
    hex::encode(h.finalize())
}

pub fn cache_path(cache_dir: &Path, model_id: &str, key: &str) -> PathBuf {
    cache_dir.join(file_stem(model_id)).join(format!("{key}.json"))
}

/// Cached entry for `query` under `cfg`, if present and intact.
pub fn read_cached(cache_dir: &Path, cfg: &ModelConfig, query: &QuerySpec) -> Option<CacheEntry> {
    let key = cache_key(&cfg.model_id, cfg.temperature, &query.prompt_hash, cfg.run_index);
    let text = std::fs::read_to_string(cache_path(cache_dir, &cfg.model_id, &key)).ok()?;
    let entry: CacheEntry = serde_json::from_str(&text).ok()?;
    (entry.prompt_hash == query.prompt_hash && entry.status == ResponseStatus::Ok && !entry.body.is_empty())
        .then_some(entry)
}

fn write_cached(cache_dir: &Path, cfg: &ModelConfig, query: &QuerySpec, body: &str) -> std::io::Result<()> {
    let key = cache_key(&cfg.model_id, cfg.temperature, &query.prompt_hash, cfg.run_index);
    let path = cache_path(cache_dir, &cfg.model_id, &key);
    let entry = CacheEntry {
        prompt_hash: query.prompt_hash.clone(),
        body: body.to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        status: ResponseStatus::Ok,
    };
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, serde_json::to_vec(&entry)?)?;
    std::fs::rename(&tmp, &path)
}

enum Attempt {
    Done(String),
    Fatal(String),
    Retry { body: String, timed_out: bool },
}

async fn attempt(client: &reqwest::Client, cfg: &ModelConfig, key: Option<&str>, prompt: &str) -> Attempt {
    let payload = json!({
        "model": cfg.model_id,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    });
    let mut req = client.post(&cfg.endpoint_url).json(&payload);
    if let Some(k) = key {
        req = req.bearer_auth(k);
    }
    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => {
            return Attempt::Retry {
                body: e.to_string(),
                timed_out: e.is_timeout(),
            }
        }
    };
    let status = resp.status();
    let text = match resp.text().await {
        Ok(t) => t,
        Err(e) => {
            return Attempt::Retry {
                body: e.to_string(),
                timed_out: e.is_timeout(),
            }
        }
    };
    if status.is_success() {
        let content = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v.pointer("/choices/0/message/content")?.as_str().map(str::to_string));
        return match content {
            Some(c) if !c.is_empty() => Attempt::Done(c),
            _ => Attempt::Fatal(format!("unexpected response shape: {text}")),
        };
    }
    let code = status.as_u16();
    let body = format!("HTTP {code}: {text}");
    if status.is_client_error() && code != 408 && code != 429 {
        Attempt::Fatal(body)
    } else {
        Attempt::Retry { body, timed_out: false }
    }
}

async fn run_one(
    client: &reqwest::Client,
    cfg: &ModelConfig,
    key: Option<&str>,
    cache_dir: &Path,
    query: &QuerySpec,
) -> RawResponse {
    let mut out = RawResponse {
        case_id: query.case_id.clone(),
        label_name: query.label_name.clone(),
        value_name: query.value_name.clone(),
        prompt_hash: query.prompt_hash.clone(),
        model_id: cfg.model_id.clone(),
        temperature: cfg.temperature,
        run_index: cfg.run_index,
        body: String::new(),
        status: ResponseStatus::Ok,
        latency_ms: 0,
        from_cache: false,
    };
    if let Some(entry) = read_cached(cache_dir, cfg, query) {
        out.body = entry.body;
        out.from_cache = true;
        return out;
    }
    let started = Instant::now();
    let mut tries = 0u32;
    loop {
        match attempt(client, cfg, key, &query.prompt_text).await {
            Attempt::Done(body) => {
                // a failed cache write only costs a repeat request later
                let _ = write_cached(cache_dir, cfg, query, &body);
                out.body = body;
                break;
            }
            Attempt::Fatal(body) => {
                out.body = body;
                out.status = ResponseStatus::HttpError;
                break;
            }
            Attempt::Retry { body, timed_out } => {
                if tries >= cfg.max_retries {
                    out.body = body;
                    out.status = if timed_out {
                        ResponseStatus::Timeout
                    } else {
                        ResponseStatus::ExhaustedRetries
                    };
                    break;
                }
                let delay = cfg.backoff_base_ms.saturating_mul(1u64 << tries.min(16));
                tokio::time::sleep(Duration::from_millis(delay)).await;
                tries += 1;
            }
        }
    }
    out.latency_ms = started.elapsed().as_millis() as u64;
    out
}

/// One response per query, in input order, with at most `cfg.parallelism`
/// requests in flight.
pub async fn execute_async(
    queries: &[QuerySpec],
    cfg: &ModelConfig,
    cache_dir: &Path,
) -> Result<Vec<RawResponse>, ClientError> {
    cfg.validate()?;
    let model_dir = cache_dir.join(file_stem(&cfg.model_id));
    std::fs::create_dir_all(&model_dir).map_err(|source| ClientError::Cache {
        path: model_dir.display().to_string(),
        source,
    })?;
    let client = reqwest::Client::builder()
        .timeout(Duration::from_millis(cfg.request_timeout_ms))
        .build()?;
    let key = cfg.api_key();
    let responses = stream::iter(queries)
        .map(|q| run_one(&client, cfg, key.as_deref(), cache_dir, q))
        .buffered(cfg.parallelism)
        .collect()
        .await;
    Ok(responses)
}

/// Blocking wrapper around [`execute_async`]. Must not be called from inside
/// an async runtime.
pub fn execute(queries: &[QuerySpec], cfg: &ModelConfig, cache_dir: &Path) -> Result<Vec<RawResponse>, ClientError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(cfg.parallelism.clamp(1, 16))
        .enable_all()
        .build()
        .map_err(ClientError::Runtime)?;
    rt.block_on(execute_async(queries, cfg, cache_dir))
}
