//! Completion backends: a generic JSON-over-HTTP client and a fixture-backed
//! replay backend for offline, bit-reproducible runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{read_jsonl_lines, write_jsonl, ImportError};

/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_decode_steps: u32,
    pub model_id: String,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_decode_steps: 1024,
            model_id: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub prompt_fingerprint: String,
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: Option<u64>,
    /// The backend reported stopping at `max_decode_steps`.
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("no replay fixture for prompt fingerprint {fingerprint}")]
    FixtureMiss { fingerprint: String },
    #[error("backend returned an unusable response: {0}")]
    BadResponse(String),
}

impl GenerateError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenerateError::BackendUnavailable { .. })
    }
}

/// Stable key of a (prompt, params) pair: hex SHA-256 over the rendered
/// prompt, model id, temperature and decode budget.
pub fn fingerprint(prompt: &str, params: &GenParams) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0x1f]);
    h.update(params.model_id.as_bytes());
    h.update([0x1f]);
    h.update(format!("{:?}", params.temperature).as_bytes());
    h.update([0x1f]);
    h.update(params.max_decode_steps.to_string().as_bytes());
    hex::encode(h.finalize())
}

pub trait Backend: Send + Sync {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Completion, GenerateError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Completion, GenerateError> {
        (**self).generate(prompt, params)
    }
}

/// Ask `backend` for a completion of `prompt`.
pub fn generate(prompt: &str, params: &GenParams, backend: &dyn Backend) -> Result<Completion, GenerateError> {
    backend.generate(prompt, params)
}

/// One line of a replay fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub fingerprint: String,
    pub text: String,
}

/// Serves completions from a fixture file keyed by prompt fingerprint.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    fixtures: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, ImportError> {
        let records: Vec<(usize, FixtureRecord)> = read_jsonl_lines(path)?;
        Ok(Self::from_records(records.into_iter().map(|(_, r)| r)))
    }

    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self {
            fixtures: records.into_iter().map(|r| (r.fingerprint, r.text)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Completion, GenerateError> {
        let fp = fingerprint(prompt, params);
        match self.fixtures.get(&fp) {
            Some(text) => Ok(Completion {
                prompt_fingerprint: fp,
                text: text.clone(),
                backend: BackendKind::Replay,
                latency_ms: None,
                truncated: false,
            }),
            None => Err(GenerateError::FixtureMiss { fingerprint: fp }),
        }
    }
}

/// Wraps a backend and keeps every completion so it can be written out as a
/// replay fixture file.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.recorded
            .lock()
            .unwrap()
            .iter()
            .map(|(fingerprint, text)| FixtureRecord {
                fingerprint: fingerprint.clone(),
                text: text.clone(),
            })
            .collect()
    }

    pub fn write_fixtures(&self, path: &Path) -> std::io::Result<()> {
        write_jsonl(path, &self.records())
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Completion, GenerateError> {
        let completion = self.inner.generate(prompt, params)?;
        self.recorded
            .lock()
            .unwrap()
            .insert(completion.prompt_fingerprint.clone(), completion.text.clone());
        Ok(completion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Serialize)]
struct GenerateRequest<'a> {
    model_id: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_decode_steps: u32,
}

#[derive(Debug, Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    truncated: bool,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// Posts `{model_id, prompt, temperature, max_decode_steps}` to
/// `<base_url>/generate` and reads `{text}` back.
pub struct HttpBackend {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    in_flight: InFlight,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        token: Option<String>,
        timeout: Duration,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self, GenerateError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenerateError::BackendUnavailable {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            url: format!("{}/generate", base_url.trim_end_matches('/')),
            token,
            client,
            retry,
            in_flight: InFlight::new(max_in_flight),
        })
    }

    fn attempt(&self, prompt: &str, params: &GenParams) -> Result<GenerateResponse, GenerateError> {
        let body = GenerateRequest {
            model_id: &params.model_id,
            prompt,
            temperature: params.temperature,
            max_decode_steps: params.max_decode_steps,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let unavailable = |message: String| GenerateError::BackendUnavailable { attempts: 1, message };
        let resp = req.send().map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(unavailable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(GenerateError::BadResponse(format!("HTTP {status}")));
        }
        resp.json::<GenerateResponse>()
            .map_err(|e| GenerateError::BadResponse(e.to_string()))
    }
}

impl Backend for HttpBackend {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<Completion, GenerateError> {
        let _permit = self.in_flight.acquire();
        let fp = fingerprint(prompt, params);
        let mut delay = self.retry.base_delay;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let started = Instant::now();
            match self.attempt(prompt, params) {
                Ok(resp) => {
                    let truncated =
                        resp.truncated || matches!(resp.finish_reason.as_deref(), Some("length" | "max_tokens"));
                    return Ok(Completion {
                        prompt_fingerprint: fp,
                        text: resp.text,
                        backend: BackendKind::Http,
                        latency_ms: Some(started.elapsed().as_millis() as u64),
                        truncated,
                    });
                }
                Err(GenerateError::BackendUnavailable { message, .. }) => {
                    if attempts >= self.retry.max_attempts {
                        return Err(GenerateError::BackendUnavailable { attempts, message });
                    }
                    log::warn!("generate attempt {attempts} failed: {message}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(other) => return Err(other),
            }
        }
    }
}

/// Which backend to build, as configured on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Http {
        base_url: String,
        token: Option<String>,
        timeout: Duration,
        max_in_flight: usize,
    },
    Replay {
        fixtures: PathBuf,
    },
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>, String> {
        match self {
            BackendConfig::Http {
                base_url,
                token,
                timeout,
                max_in_flight,
            } => HttpBackend::new(
                base_url,
                token.clone(),
                *timeout,
                *max_in_flight,
                RetryPolicy::default(),
            )
            .map(|b| Box::new(b) as Box<dyn Backend>)
            .map_err(|e| e.to_string()),
            BackendConfig::Replay { fixtures } => ReplayBackend::load(fixtures)
                .map(|b| Box::new(b) as Box<dyn Backend>)
                .map_err(|e| e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_depends_on_every_param() {
        let p = GenParams::default();
        let base = fingerprint("prompt", &p);
        assert_eq!(base.len(), 64);
        assert_eq!(base, fingerprint("prompt", &p));
        assert_ne!(base, fingerprint("prompt ", &p));
        let mut q = p.clone();
        q.temperature = 0.5;
        assert_ne!(base, fingerprint("prompt", &q));
        let mut q = p.clone();
        q.max_decode_steps = 512;
        assert_ne!(base, fingerprint("prompt", &q));
        let mut q = p;
        q.model_id = "other".into();
        assert_ne!(base, fingerprint("prompt", &q));
    }

    #[test]
    fn defaults() {
        let p = GenParams::default();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.max_decode_steps, 1024);
    }

    #[test]
    fn replay_returns_fixture_text() {
        let params = GenParams::default();
        let text = "entities:\n - group: 1...";
        let backend = ReplayBackend::from_records([FixtureRecord {
            fingerprint: fingerprint("P", &params),
            text: text.into(),
        }]);
        let a = generate("P", &params, &backend).unwrap();
        let b = generate("P", &params, &backend).unwrap();
        assert_eq!(a.text, text);
        assert_eq!(a, b);
        assert_eq!(a.backend, BackendKind::Replay);
    }

    #[test]
    fn replay_miss_names_fingerprint() {
        let params = GenParams::default();
        let err = ReplayBackend::default().generate("Q", &params).unwrap_err();
        let fp = fingerprint("Q", &params);
        assert_eq!(
            err,
            GenerateError::FixtureMiss {
                fingerprint: fp.clone()
            }
        );
        assert!(err.to_string().contains(&fp));
        assert!(!err.is_retryable());
    }

    #[test]
    fn recording_backend_captures_fixtures() {
        let params = GenParams::default();
        let inner = ReplayBackend::from_records([FixtureRecord {
            fingerprint: fingerprint("P", &params),
            text: "out".into(),
        }]);
        let rec = RecordingBackend::new(inner);
        rec.generate("P", &params).unwrap();
        assert!(rec.generate("missing", &params).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        rec.write_fixtures(&path).unwrap();
        let replay = ReplayBackend::load(&path).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.generate("P", &params).unwrap().text, "out");
    }

    #[test]
    fn in_flight_cap_blocks_until_release() {
        let sem = std::sync::Arc::new(InFlight::new(2));
        let peak = std::sync::Arc::new(Mutex::new((0usize, 0usize)));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let sem = sem.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _p = sem.acquire();
                    {
                        let mut g = peak.lock().unwrap();
                        g.0 += 1;
                        g.1 = g.1.max(g.0);
                    }
                    std::thread::sleep(Duration::from_millis(10));
                    peak.lock().unwrap().0 -= 1;
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.lock().unwrap().1 <= 2);
    }
}
