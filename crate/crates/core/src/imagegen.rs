//! Image summaries of a session: the transcript is cut into excerpts of at
//! most `max_chars` characters and each excerpt is sent to an image backend.
//! Content-policy refusals are ordinary outcomes, not errors.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_CHARS: usize = 1000;
pub const DEFAULT_CONCURRENCY: usize = 2;
pub const URL_ENV: &str = "IMAGEGEN_URL";
pub const TOKEN_ENV: &str = "IMAGEGEN_TOKEN";

#[derive(Debug, Error)]
pub enum ImageGenError {
    #[error("image backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ImageGenError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub session_id: String,
    pub ordinal: usize,
    /// Character (code point) offsets into the source text.
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

impl Excerpt {
    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

/// Greedy chunking into excerpts of at most `max_chars` characters that tile
/// `text` exactly. A cut backs up to just after the last whitespace in the
/// window, provided the excerpt stays longer than half the window; otherwise
/// the cut lands at `max_chars`.
pub fn chunk_transcript(session_id: &str, text: &str, max_chars: usize) -> Vec<Excerpt> {
    assert!(max_chars >= 1, "max_chars must be at least 1");
    let chars: Vec<char> = text.chars().collect();
    let mut excerpts = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = (start + max_chars).min(chars.len());
        if end < chars.len() {
            let window = &chars[start..end];
            if let Some(ws) = window.iter().rposition(|c| c.is_whitespace()) {
                if (ws + 1) * 2 > max_chars {
                    end = start + ws + 1;
                }
            }
        }
        excerpts.push(Excerpt {
            session_id: session_id.to_owned(),
            ordinal: excerpts.len(),
            char_start: start,
            char_end: end,
            text: chars[start..end].iter().collect(),
        });
        start = end;
    }
    excerpts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Generated,
    RejectedSafety,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequestOutcome {
    pub ordinal: usize,
    pub status: OutcomeStatus,
    /// Present iff `status` is `generated`.
    pub image_path: Option<String>,
    pub detail: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// What a backend returns for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendReply {
    /// PNG bytes.
    Image(Vec<u8>),
    Rejected(String),
    /// `transport` is true when the backend could not be reached at all.
    Failed { detail: String, transport: bool },
}

pub trait ImageBackend: Send + Sync {
    fn generate(&self, prompt: &str) -> BackendReply;
}

/// Offline backend: a small PNG whose pixels are derived from a hash of the
/// prompt. Prompts containing `reject_token` are refused.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub reject_token: Option<String>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rejecting(token: impl Into<String>) -> Self {
        MockBackend {
            reject_token: Some(token.into()),
        }
    }
}

impl ImageBackend for MockBackend {
    fn generate(&self, prompt: &str) -> BackendReply {
        if let Some(token) = &self.reject_token {
            if prompt.contains(token.as_str()) {
                return BackendReply::Rejected(format!(
                    "mock backend refused a prompt containing {token:?}"
                ));
            }
        }
        match placeholder_png(prompt) {
            Ok(bytes) => BackendReply::Image(bytes),
            Err(e) => BackendReply::Failed {
                detail: e.to_string(),
                transport: false,
            },
        }
    }
}

/// 16x16 RGB image; pixel `i` takes bytes of the SHA-256 of `text` starting at
/// `3*i mod 32`.
pub fn placeholder_png(text: &str) -> std::result::Result<Vec<u8>, png::EncodingError> {
    const SIDE: u32 = 16;
    let digest = Sha256::digest(text.as_bytes());
    let pixels: Vec<u8> = (0..(SIDE * SIDE) as usize)
        .flat_map(|i| (0..3).map(move |c| (3 * i + c) % 32))
        .map(|j| digest[j])
        .collect();
    let mut buf = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut buf, SIDE, SIDE);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&pixels)?;
    }
    Ok(buf)
}

/// Generic JSON-over-HTTP backend.
///
/// Sends `POST {"prompt": ...}` and expects `200 {"b64": ...}` or
/// `200 {"url": ...}`; a 400 whose body mentions a content policy or safety
/// system is a rejection.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into(),
            token,
            agent,
        }
    }

    /// Reads `IMAGEGEN_URL` and, optionally, `IMAGEGEN_TOKEN`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(URL_ENV)
            .map_err(|_| ImageGenError::Config(format!("{URL_ENV} is not set")))?;
        Ok(Self::new(url, std::env::var(TOKEN_ENV).ok()))
    }

    fn fetch_url(&self, url: &str) -> BackendReply {
        match self.agent.get(url).call() {
            Ok(mut resp) if resp.status().is_success() => {
                match resp.body_mut().with_config().limit(64 << 20).read_to_vec() {
                    Ok(bytes) => BackendReply::Image(bytes),
                    Err(e) => BackendReply::Failed {
                        detail: format!("reading image: {e}"),
                        transport: false,
                    },
                }
            }
            Ok(resp) => BackendReply::Failed {
                detail: format!("image download returned HTTP {}", resp.status()),
                transport: false,
            },
            Err(e) => BackendReply::Failed {
                detail: format!("image download: {e}"),
                transport: true,
            },
        }
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    b64: Option<String>,
}

fn is_content_policy(body: &str) -> bool {
    let lower = body.to_lowercase();
    lower.contains("content_policy") || lower.contains("content policy") || lower.contains("safety")
}

impl ImageBackend for HttpBackend {
    fn generate(&self, prompt: &str) -> BackendReply {
        let payload = serde_json::json!({ "prompt": prompt }).to_string();
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = match req.send(payload.as_bytes()) {
            Ok(r) => r,
            Err(e) => {
                return BackendReply::Failed {
                    detail: e.to_string(),
                    transport: true,
                }
            }
        };
        let status = resp.status().as_u16();
        let mut body = String::new();
        if let Err(e) = resp.body_mut().as_reader().read_to_string(&mut body) {
            return BackendReply::Failed {
                detail: format!("reading response: {e}"),
                transport: false,
            };
        }
        match status {
            200..=299 => match serde_json::from_str::<GenerateResponse>(&body) {
                Ok(GenerateResponse { b64: Some(b64), .. }) => {
                    match base64::engine::general_purpose::STANDARD.decode(b64.trim()) {
                        Ok(bytes) => BackendReply::Image(bytes),
                        Err(e) => BackendReply::Failed {
                            detail: format!("bad base64 image: {e}"),
                            transport: false,
                        },
                    }
                }
                Ok(GenerateResponse { url: Some(url), .. }) => self.fetch_url(&url),
                _ => BackendReply::Failed {
                    detail: format!("unexpected response body: {body}"),
                    transport: false,
                },
            },
            400 if is_content_policy(&body) => BackendReply::Rejected(body),
            _ => BackendReply::Failed {
                detail: format!("HTTP {status}: {body}"),
                transport: false,
            },
        }
    }
}

/// Where a session's images live: `{root}/{session_id}/images/`.
pub fn media_dir(root: &Path, session_id: &str) -> PathBuf {
    root.join(session_id).join("images")
}

pub fn image_file_name(session_id: &str, ordinal: usize) -> String {
    format!("{session_id}_{ordinal}.png")
}

/// Requests one image per excerpt with at most `concurrency` requests in
/// flight. Outcomes come back in excerpt order. Generated images are written
/// to `out_dir`; the call fails only if every request failed at the
/// transport level.
pub fn generate_images(
    excerpts: &[Excerpt],
    backend: &dyn ImageBackend,
    out_dir: &Path,
    concurrency: usize,
) -> Result<Vec<ImageRequestOutcome>> {
    if excerpts.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(out_dir).map_err(|source| ImageGenError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(ImageRequestOutcome, bool)>>> =
        Mutex::new(vec![None; excerpts.len()]);
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, excerpts.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(excerpt) = excerpts.get(i) else {
                    break;
                };
                let result = run_one(excerpt, backend, out_dir);
                slots.lock().expect("outcome lock poisoned")[i] = Some(result);
            });
        }
    });

    let results: Vec<(ImageRequestOutcome, bool)> = slots
        .into_inner()
        .expect("outcome lock poisoned")
        .into_iter()
        .map(|s| s.expect("every excerpt is processed"))
        .collect();
    if results.iter().all(|(_, transport)| *transport) {
        return Err(ImageGenError::BackendUnreachable(
            results[0].0.detail.clone(),
        ));
    }
    Ok(results.into_iter().map(|(o, _)| o).collect())
}

fn run_one(
    excerpt: &Excerpt,
    backend: &dyn ImageBackend,
    out_dir: &Path,
) -> (ImageRequestOutcome, bool) {
    let outcome = |status, image_path, detail| ImageRequestOutcome {
        ordinal: excerpt.ordinal,
        status,
        image_path,
        detail,
        char_start: excerpt.char_start,
        char_end: excerpt.char_end,
    };
    match backend.generate(&excerpt.text) {
        BackendReply::Image(bytes) => {
            let path = out_dir.join(image_file_name(&excerpt.session_id, excerpt.ordinal));
            match fs::write(&path, &bytes) {
                Ok(()) => (
                    outcome(
                        OutcomeStatus::Generated,
                        Some(path.display().to_string()),
                        String::new(),
                    ),
                    false,
                ),
                Err(e) => (
                    outcome(
                        OutcomeStatus::Failed,
                        None,
                        format!("writing {}: {e}", path.display()),
                    ),
                    false,
                ),
            }
        }
        BackendReply::Rejected(detail) => {
            (outcome(OutcomeStatus::RejectedSafety, None, detail), false)
        }
        BackendReply::Failed { detail, transport } => {
            (outcome(OutcomeStatus::Failed, None, detail), transport)
        }
    }
}
