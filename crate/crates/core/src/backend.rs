//! The cloud boundary: generative edit backends.
//!
//! A backend only ever sees an [`EditRequest`], whose image is the encoded
//! masked composite. Mock backends work offline and are deterministic.

use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{decode_image, encode_image, sample_bilinear, Encoding, Image, ImagingError};
use crate::transport::{
    send_with_retry, ConcurrencyLimit, FormPart, OutboundRequest, RateLimiter, RequestBody, RetryPolicy, Transport,
    TransportError,
};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid edit request: {0}")]
    InvalidRequest(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend timed out")]
    Timeout,
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("undecodable backend response: {0}")]
    UndecodableResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl From<TransportError> for BackendError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditRequest {
    image: Vec<u8>,
    content_type: String,
    prompt: String,
    request_id: String,
    timeout: Duration,
}

impl EditRequest {
    pub fn new(
        image: Vec<u8>,
        content_type: &str,
        prompt: &str,
        request_id: &str,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        if image.is_empty() {
            return Err(BackendError::InvalidRequest("image is empty".into()));
        }
        if prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        Ok(Self {
            image,
            content_type: content_type.to_string(),
            prompt: prompt.to_string(),
            request_id: request_id.to_string(),
            timeout,
        })
    }

    /// Encodes `masked` and wraps it with the prompt.
    pub fn from_image(
        masked: &Image,
        encoding: Encoding,
        prompt: &str,
        request_id: &str,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let bytes = encode_image(masked, encoding).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        Self::new(bytes, encoding.content_type(), prompt, request_id, timeout)
    }

    pub fn image_bytes(&self) -> &[u8] {
        &self.image
    }

    pub fn content_type(&self) -> &str {
        &self.content_type
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn request_id(&self) -> &str {
        &self.request_id
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn decode(&self) -> Result<Image, BackendError> {
        decode_image(&self.image).map_err(|e| BackendError::InvalidRequest(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    Edit,
    /// Adversarial simulation: can the backend rebuild the hidden face?
    ReconstructionProbe,
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub image: Image,
    pub backend: String,
    pub latency_ms: f64,
    pub raw_status: u16,
    pub purpose: Purpose,
}

/// What a backend hands back before timing and provenance are attached.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub image: Image,
    pub status: u16,
}

pub trait EditBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Offline, deterministic stand-in for a real editor.
    fn is_mock(&self) -> bool {
        false
    }

    fn call(&self, req: &EditRequest) -> Result<BackendReply, BackendError>;
}

fn timed(req: &EditRequest, backend: &dyn EditBackend, purpose: Purpose) -> Result<EditResult, BackendError> {
    let start = Instant::now();
    let reply = backend.call(req)?;
    Ok(EditResult {
        image: reply.image,
        backend: backend.name().to_string(),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        raw_status: reply.status,
        purpose,
    })
}

pub fn edit(req: &EditRequest, backend: &dyn EditBackend) -> Result<EditResult, BackendError> {
    timed(req, backend, Purpose::Edit)
}

/// Same call as [`edit`], flagged as an adversarial reconstruction attempt.
pub fn reconstruction_probe(req: &EditRequest, backend: &dyn EditBackend) -> Result<EditResult, BackendError> {
    timed(req, backend, Purpose::ReconstructionProbe)
}

/// Echoes the request image.
#[derive(Debug, Default, Clone)]
pub struct MockIdentity;

impl EditBackend for MockIdentity {
    fn name(&self) -> &str {
        "mock-identity"
    }

    fn is_mock(&self) -> bool {
        true
    }

    fn call(&self, req: &EditRequest) -> Result<BackendReply, BackendError> {
        Ok(BackendReply {
            image: req.decode()?,
            status: 200,
        })
    }
}

/// Adds a per-channel delta, clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MockRecolor {
    pub delta: [f32; 3],
}

impl EditBackend for MockRecolor {
    fn name(&self) -> &str {
        "mock-recolor"
    }

    fn is_mock(&self) -> bool {
        true
    }

    fn call(&self, req: &EditRequest) -> Result<BackendReply, BackendError> {
        let img = req.decode()?;
        let out = Image::from_fn(img.width(), img.height(), |x, y| {
            let p = img.pixel(x, y);
            [0, 1, 2].map(|c| p[c] + self.delta[c])
        });
        Ok(BackendReply { image: out, status: 200 })
    }
}

/// Keeps the subject (a centred ellipse) and swaps everything else for a
/// studio backdrop.
#[derive(Debug, Clone)]
pub struct MockHeadshot {
    backdrop: Image,
    /// Ellipse semi-axes as fractions of width and height.
    pub subject: (f64, f64),
}

impl MockHeadshot {
    pub fn new(backdrop: Image) -> Self {
        Self {
            backdrop,
            subject: (0.34, 0.46),
        }
    }
}

impl EditBackend for MockHeadshot {
    fn name(&self) -> &str {
        "mock-headshot"
    }

    fn is_mock(&self) -> bool {
        true
    }

    fn call(&self, req: &EditRequest) -> Result<BackendReply, BackendError> {
        let img = req.decode()?;
        let (w, h) = (f64::from(img.width()), f64::from(img.height()));
        let (bw, bh) = (f64::from(self.backdrop.width()), f64::from(self.backdrop.height()));
        let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0 + 0.08 * h);
        let (ax, ay) = (self.subject.0 * w, self.subject.1 * h);
        let out = Image::from_fn(img.width(), img.height(), |x, y| {
            let (fx, fy) = (f64::from(x), f64::from(y));
            let r = ((fx - cx) / ax).powi(2) + ((fy - cy) / ay).powi(2);
            if r <= 1.0 || fy > cy {
                img.pixel(x, y)
            } else {
                sample_bilinear(&self.backdrop, fx * (bw - 1.0) / (w - 1.0).max(1.0), fy * (bh - 1.0) / (h - 1.0).max(1.0))
            }
        });
        Ok(BackendReply { image: out, status: 200 })
    }
}

/// Multipart `image` + `prompt` POST; the reply is either image bytes or JSON
/// carrying base64 image data.
pub struct HttpBackend {
    name: String,
    endpoint: String,
    token: Option<String>,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: RateLimiter,
    concurrency: ConcurrencyLimit,
}

impl HttpBackend {
    pub fn new(endpoint: &str, transport: Arc<dyn Transport>) -> Self {
        Self {
            name: "http".to_string(),
            endpoint: endpoint.to_string(),
            token: None,
            transport,
            retry: RetryPolicy::default(),
            limiter: RateLimiter::per_minute(0),
            concurrency: ConcurrencyLimit::new(4),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, per_minute: u32) -> Self {
        self.limiter = RateLimiter::per_minute(per_minute);
        self
    }

    pub fn with_concurrency(mut self, max: usize) -> Self {
        self.concurrency = ConcurrencyLimit::new(max);
        self
    }

    /// The exact request sent for `req` (also on every retry).
    pub fn outbound(&self, req: &EditRequest) -> OutboundRequest {
        let ext = if req.content_type() == "image/jpeg" { "jpg" } else { "png" };
        let body = RequestBody::Multipart(vec![
            FormPart::file("image", &format!("masked.{ext}"), req.content_type(), req.image_bytes().to_vec()),
            FormPart::text("prompt", req.prompt()),
        ]);
        let mut out = OutboundRequest::post(&self.endpoint, body, req.timeout()).header("Idempotency-Key", req.request_id());
        if let Some(t) = &self.token {
            out = out.header("Authorization", &format!("Bearer {t}"));
        }
        out
    }
}

/// Image bytes by content type or magic number; otherwise JSON with
/// `data[0].b64_json`, `b64_json` or `image`.
pub fn sniff_image_response(content_type: Option<&str>, body: &[u8]) -> Result<Image, BackendError> {
    let is_png = body.starts_with(&[0x89, b'P', b'N', b'G']);
    let is_jpeg = body.starts_with(&[0xFF, 0xD8, 0xFF]);
    if content_type.is_some_and(|c| c.starts_with("image/")) || is_png || is_jpeg {
        return decode_image(body).map_err(|e: ImagingError| BackendError::UndecodableResponse(e.to_string()));
    }
    let json: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| BackendError::UndecodableResponse(format!("neither image nor JSON: {e}")))?;
    let b64 = json
        .pointer("/data/0/b64_json")
        .or_else(|| json.get("b64_json"))
        .or_else(|| json.get("image"))
        .and_then(|v| v.as_str())
        .ok_or_else(|| BackendError::UndecodableResponse("JSON reply has no image field".into()))?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| BackendError::UndecodableResponse(format!("bad base64: {e}")))?;
    decode_image(&bytes).map_err(|e| BackendError::UndecodableResponse(e.to_string()))
}

impl EditBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, req: &EditRequest) -> Result<BackendReply, BackendError> {
        let _permit = self.concurrency.acquire();
        self.limiter.acquire();
        let outbound = self.outbound(req);
        let resp = send_with_retry(self.transport.as_ref(), &outbound, self.retry)?;
        if !resp.is_success() {
            return Err(BackendError::Http {
                status: resp.status,
                body: resp.body_excerpt(),
            });
        }
        Ok(BackendReply {
            image: sniff_image_response(resp.content_type.as_deref(), &resp.body)?,
            status: resp.status,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    MockIdentity,
    MockRecolor,
    MockHeadshot,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "http" => Ok(Self::Http),
            "mock-identity" => Ok(Self::MockIdentity),
            "mock-recolor" => Ok(Self::MockRecolor),
            "mock-headshot" => Ok(Self::MockHeadshot),
            other => Err(format!(
                "unknown backend `{other}` (http | mock-identity | mock-recolor | mock-headshot)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub rate_per_min: u32,
    pub max_concurrency: usize,
    pub recolor_delta: [f32; 3],
    pub backdrop: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::MockIdentity,
            endpoint: None,
            auth_env: None,
            timeout_ms: 60_000,
            retries: 2,
            rate_per_min: 0,
            max_concurrency: 4,
            recolor_delta: [0.1, 0.0, 0.0],
            backdrop: None,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Builds the configured backend. `transport` is only used by `http`.
    pub fn build(&self, transport: Option<Arc<dyn Transport>>) -> Result<Box<dyn EditBackend>, BackendError> {
        Ok(match self.kind {
            BackendKind::MockIdentity => Box::new(MockIdentity),
            BackendKind::MockRecolor => Box::new(MockRecolor {
                delta: self.recolor_delta,
            }),
            BackendKind::MockHeadshot => {
                let backdrop = match &self.backdrop {
                    Some(p) => crate::imaging::load_image(p).map_err(|e| BackendError::Config(format!("{}: {e}", p.display())))?,
                    None => crate::synthetic::studio_backdrop(512, 512),
                };
                Box::new(MockHeadshot::new(backdrop))
            }
            BackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| BackendError::Config("backend.endpoint is required for http".into()))?;
                let transport = transport.ok_or_else(|| BackendError::Config("no HTTP transport available".into()))?;
                let token = match &self.auth_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
                    ),
                    None => None,
                };
                Box::new(
                    HttpBackend::new(endpoint, transport)
                        .with_token(token)
                        .with_retry(RetryPolicy {
                            retries: self.retries,
                            ..RetryPolicy::default()
                        })
                        .with_rate_limit(self.rate_per_min)
                        .with_concurrency(self.max_concurrency),
                )
            }
        })
    }
}
