//! Text-to-image generation behind a backend abstraction: an HTTP endpoint
//! speaking a minimal JSON-in / PNG-out protocol, and a deterministic stub
//! for tests. Batch generation is bounded-parallel and journaled so an
//! interrupted run resumes without regenerating completed items.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::TidaError;

pub const DEFAULT_GUIDANCE_SCALE: f64 = 8.0;
pub const DEFAULT_RESOLUTION: u32 = 128;

/// One text-to-image request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
    pub request_id: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, request_id: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            seed: None,
            request_id: request_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), TidaError> {
        if self.prompt.is_empty() || self.width == 0 || self.height == 0 || self.guidance_scale <= 0.0
        {
            return Err(TidaError::Config(format!(
                "invalid generation request {}: prompt nonempty, dimensions and guidance positive required",
                self.request_id
            )));
        }
        Ok(())
    }

    /// Content-address key: identical (prompt, seed, backend) map to the
    /// same key, so a shared journal never generates twice.
    pub fn content_key(&self, backend_name: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(backend_name.as_bytes());
        hasher.update([0]);
        hasher.update(self.prompt.as_bytes());
        hasher.update([0]);
        hasher.update(self.seed.unwrap_or(0).to_le_bytes());
        hasher.update([self.seed.is_some() as u8]);
        format!("{:x}", hasher.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub request_id: String,
    pub image_path: PathBuf,
    pub backend: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Error)]
pub enum GenError {
    /// Transport failure or timeout; retried with exponential backoff.
    #[error("retryable backend error: {0}")]
    Retryable(String),
    /// Backend rejected the request; retrying cannot help.
    #[error("permanent backend error: {0}")]
    Permanent(String),
}

/// A text-to-image backend producing PNG bytes for a prompt.
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn render(&self, req: &GenerationRequest) -> Result<Vec<u8>, GenError>;
}

/// Deterministic stub backend: pixels are a pure function of
/// (prompt, seed, dimensions). Carries a call counter so tests can assert
/// how many generations were actually performed.
#[derive(Debug, Default)]
pub struct StubBackend {
    calls: AtomicU64,
    /// Prompts containing this marker fail permanently (test hook).
    pub fail_marker: Option<String>,
}

impl StubBackend {
    pub fn new() -> Self {
        StubBackend::default()
    }

    pub fn with_fail_marker(marker: impl Into<String>) -> Self {
        StubBackend {
            fail_marker: Some(marker.into()),
            ..StubBackend::default()
        }
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for StubBackend {
    fn name(&self) -> &str {
        "stub"
    }

    fn render(&self, req: &GenerationRequest) -> Result<Vec<u8>, GenError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(marker) = &self.fail_marker {
            if req.prompt.contains(marker.as_str()) {
                return Err(GenError::Permanent(format!(
                    "stub configured to reject prompt: {}",
                    req.prompt
                )));
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(req.prompt.as_bytes());
        hasher.update(req.seed.unwrap_or(0).to_le_bytes());
        hasher.update(req.width.to_le_bytes());
        hasher.update(req.height.to_le_bytes());
        let digest = hasher.finalize();
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(rng_seed);

        let mut pixels = vec![0u8; (req.width * req.height * 3) as usize];
        rng.fill_bytes(&mut pixels);
        let img = image::RgbImage::from_raw(req.width, req.height, pixels)
            .expect("buffer sized to dimensions");
        let mut png = Vec::new();
        img.write_to(
            &mut std::io::Cursor::new(&mut png),
            image::ImageFormat::Png,
        )
        .map_err(|e| GenError::Permanent(format!("png encode: {e}")))?;
        Ok(png)
    }
}

/// Remote diffusion-serving backend: HTTP POST /generate with a JSON body,
/// response is raw PNG bytes.
pub struct RemoteBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

#[derive(Serialize)]
struct RemoteBody<'a> {
    prompt: &'a str,
    guidance_scale: f64,
    width: u32,
    height: u32,
    seed: Option<u64>,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, TidaError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TidaError::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            endpoint: endpoint.into(),
            client,
            token: std::env::var("TIDA_ENDPOINT_TOKEN").ok(),
        })
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn render(&self, req: &GenerationRequest) -> Result<Vec<u8>, GenError> {
        let url = format!("{}/generate", self.endpoint.trim_end_matches('/'));
        let body = RemoteBody {
            prompt: &req.prompt,
            guidance_scale: req.guidance_scale,
            width: req.width,
            height: req.height,
            seed: req.seed,
        };
        let mut builder = self.client.post(&url).json(&body);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder
            .send()
            .map_err(|e| GenError::Retryable(format!("transport: {e}")))?;
        let status = resp.status();
        if status.is_client_error() {
            let msg = resp.text().unwrap_or_default();
            return Err(GenError::Permanent(format!("{status}: {msg}")));
        }
        if !status.is_success() {
            return Err(GenError::Retryable(format!("server status {status}")));
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| GenError::Retryable(format!("body read: {e}")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

/// Generate one image, retrying retryable failures with exponential backoff,
/// and persist the PNG to its content-addressed path under `out_dir`.
pub fn generate(
    req: &GenerationRequest,
    backend: &dyn Backend,
    out_dir: &Path,
    retry: &RetryPolicy,
) -> Result<GenerationResult, GenError> {
    req.validate()
        .map_err(|e| GenError::Permanent(e.to_string()))?;
    let started = Instant::now();
    let mut last_err = None;
    for attempt in 0..retry.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
        }
        match backend.render(req) {
            Ok(bytes) => {
                let path = out_dir.join(format!("{}.png", req.content_key(backend.name())));
                std::fs::create_dir_all(out_dir)
                    .and_then(|_| std::fs::write(&path, &bytes))
                    .map_err(|e| GenError::Permanent(format!("persist image: {e}")))?;
                return Ok(GenerationResult {
                    request_id: req.request_id.clone(),
                    image_path: path,
                    backend: backend.name().to_string(),
                    latency_ms: started.elapsed().as_millis() as u64,
                });
            }
            Err(e @ GenError::Permanent(_)) => return Err(e),
            Err(e @ GenError::Retryable(_)) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| GenError::Retryable("no attempts made".into())))
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    request_id: String,
    status: String,
    image_path: Option<String>,
    key: String,
}

fn load_journal(path: &Path) -> Result<HashMap<String, JournalEntry>, TidaError> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let file = std::fs::File::open(path).map_err(|e| TidaError::Io(e.to_string()))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| TidaError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        // tolerate a torn final line from an interrupted run
        if let Ok(entry) = serde_json::from_str::<JournalEntry>(&line) {
            if entry.status == "ok" {
                done.insert(entry.key.clone(), entry);
            }
        }
    }
    Ok(done)
}

/// Outcome of one batch: per-request results in request order.
pub struct BatchOutcome {
    pub results: Vec<Result<GenerationResult, GenError>>,
}

impl BatchOutcome {
    pub fn failure_count(&self) -> usize {
        self.results.iter().filter(|r| r.is_err()).count()
    }
}

/// Run all requests with at most `max_in_flight` outstanding at once.
/// Completed items are recorded in the journal at `journal_path`; rerunning
/// the batch serves them from the journal without touching the backend.
pub fn generate_batch(
    reqs: &[GenerationRequest],
    backend: &dyn Backend,
    max_in_flight: usize,
    out_dir: &Path,
    journal_path: &Path,
    retry: &RetryPolicy,
) -> Result<BatchOutcome, TidaError> {
    assert!(max_in_flight >= 1, "max_in_flight must be positive");
    let done = load_journal(journal_path)?;
    if let Some(parent) = journal_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| TidaError::Io(e.to_string()))?;
    }
    let journal = OpenOptions::new()
        .create(true)
        .append(true)
        .open(journal_path)
        .map_err(|e| TidaError::Config(format!("journal unwritable: {e}")))?;
    let journal = Mutex::new(journal);

    let slots: Vec<Mutex<Option<Result<GenerationResult, GenError>>>> =
        reqs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.min(reqs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= reqs.len() {
                    break;
                }
                let req = &reqs[i];
                let key = req.content_key(backend.name());
                let result = match done.get(&key) {
                    Some(entry) => Ok(GenerationResult {
                        request_id: req.request_id.clone(),
                        image_path: PathBuf::from(entry.image_path.clone().unwrap_or_default()),
                        backend: backend.name().to_string(),
                        latency_ms: 0,
                    }),
                    None => {
                        let res = generate(req, backend, out_dir, retry);
                        let entry = JournalEntry {
                            request_id: req.request_id.clone(),
                            status: if res.is_ok() { "ok" } else { "failed" }.to_string(),
                            image_path: res
                                .as_ref()
                                .ok()
                                .map(|r| r.image_path.display().to_string()),
                            key,
                        };
                        let line = serde_json::to_string(&entry).expect("journal entry serializes");
                        let mut j = journal.lock().unwrap();
                        let _ = writeln!(j, "{line}");
                        drop(j);
                        res
                    }
                };
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let results = slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("all slots filled"))
        .collect();
    Ok(BatchOutcome { results })
}
