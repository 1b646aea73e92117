//! Outbound HTTP plumbing shared by every remote client (edit backends,
//! landmark detectors, embedding and VLM services).
//!
//! Clients build an [`OutboundRequest`] once and hand it to a [`Transport`].
//! Retries re-send the very same request value, so a retried call can never
//! carry different image bytes than the first attempt.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormPart {
    pub name: String,
    pub filename: Option<String>,
    pub content_type: Option<String>,
    pub data: Vec<u8>,
}

impl FormPart {
    pub fn text(name: &str, value: &str) -> Self {
        Self {
            name: name.to_string(),
            filename: None,
            content_type: None,
            data: value.as_bytes().to_vec(),
        }
    }

    pub fn file(name: &str, filename: &str, content_type: &str, data: Vec<u8>) -> Self {
        Self {
            name: name.to_string(),
            filename: Some(filename.to_string()),
            content_type: Some(content_type.to_string()),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestBody {
    Empty,
    Bytes { content_type: String, data: Vec<u8> },
    Multipart(Vec<FormPart>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: RequestBody,
    pub timeout: Duration,
}

impl OutboundRequest {
    pub fn post(url: &str, body: RequestBody, timeout: Duration) -> Self {
        Self {
            method: Method::Post,
            url: url.to_string(),
            headers: Vec::new(),
            body,
            timeout,
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    /// Every byte payload carried by the request: raw bodies and multipart parts.
    pub fn payloads(&self) -> Vec<&[u8]> {
        match &self.body {
            RequestBody::Empty => Vec::new(),
            RequestBody::Bytes { data, .. } => vec![data.as_slice()],
            RequestBody::Multipart(parts) => parts.iter().map(|p| p.data.as_slice()).collect(),
        }
    }

    pub fn part(&self, name: &str) -> Option<&FormPart> {
        match &self.body {
            RequestBody::Multipart(parts) => parts.iter().find(|p| p.name == name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl InboundResponse {
    pub fn ok(content_type: &str, body: Vec<u8>) -> Self {
        Self {
            status: 200,
            content_type: Some(content_type.to_string()),
            body,
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self {
            status,
            content_type: Some("text/plain".to_string()),
            body: body.as_bytes().to_vec(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// First 200 bytes of the body, lossily decoded.
    pub fn body_excerpt(&self) -> String {
        let end = self.body.len().min(200);
        String::from_utf8_lossy(&self.body[..end]).into_owned()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("transport error: {0}")]
    Other(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &OutboundRequest) -> Result<InboundResponse, TransportError>;
}

/// Blocking HTTP transport backed by `reqwest`.
///
/// Must not be created or dropped on an async executor thread.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &OutboundRequest) -> Result<InboundResponse, TransportError> {
        let mut builder = match request.method {
            Method::Get => self.client.get(&request.url),
            Method::Post => self.client.post(&request.url),
        }
        .timeout(request.timeout);
        for (k, v) in &request.headers {
            builder = builder.header(k.as_str(), v.as_str());
        }
        builder = match &request.body {
            RequestBody::Empty => builder,
            RequestBody::Bytes { content_type, data } => {
                builder.header("content-type", content_type.as_str()).body(data.clone())
            }
            RequestBody::Multipart(parts) => {
                let mut form = reqwest::blocking::multipart::Form::new();
                for part in parts {
                    let mut p = reqwest::blocking::multipart::Part::bytes(part.data.clone());
                    if let Some(name) = &part.filename {
                        p = p.file_name(name.clone());
                    }
                    if let Some(ct) = &part.content_type {
                        p = p.mime_str(ct).map_err(|e| TransportError::Other(e.to_string()))?;
                    }
                    form = form.part(part.name.clone(), p);
                }
                builder.multipart(form)
            }
        };
        let response = builder.send().map_err(classify_reqwest_error)?;
        let status = response.status().as_u16();
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response.bytes().map_err(classify_reqwest_error)?.to_vec();
        Ok(InboundResponse {
            status,
            content_type,
            body,
        })
    }
}

fn classify_reqwest_error(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else if e.is_connect() {
        TransportError::Connect(e.to_string())
    } else {
        TransportError::Other(e.to_string())
    }
}

type Responder = dyn Fn(&OutboundRequest) -> Result<InboundResponse, TransportError> + Send + Sync;

/// Transport that logs every request before answering it with a scripted
/// responder. Used to audit exactly what leaves the process.
pub struct RecordingTransport {
    responder: Box<Responder>,
    log: Mutex<Vec<OutboundRequest>>,
}

impl RecordingTransport {
    pub fn new(
        responder: impl Fn(&OutboundRequest) -> Result<InboundResponse, TransportError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Box::new(responder),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Answers every request with 599 so any call is visible and fails.
    pub fn refusing() -> Self {
        Self::new(|_| Ok(InboundResponse::status(599, "recording transport refuses traffic")))
    }

    pub fn requests(&self) -> Vec<OutboundRequest> {
        self.log.lock().expect("recording log poisoned").clone()
    }

    pub fn count(&self) -> usize {
        self.log.lock().expect("recording log poisoned").len()
    }
}

impl Transport for RecordingTransport {
    fn send(&self, request: &OutboundRequest) -> Result<InboundResponse, TransportError> {
        self.log.lock().expect("recording log poisoned").push(request.clone());
        (self.responder)(request)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &OutboundRequest) -> Result<InboundResponse, TransportError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            base_backoff: Duration::from_millis(250),
        }
    }
}

/// Sends `request`, retrying transport failures, 429 and 5xx with
/// exponential backoff. Returns the last response or error.
pub fn send_with_retry(
    transport: &dyn Transport,
    request: &OutboundRequest,
    policy: RetryPolicy,
) -> Result<InboundResponse, TransportError> {
    let mut attempt = 0u32;
    loop {
        let outcome = transport.send(request);
        let retryable = match &outcome {
            Ok(r) => r.status == 429 || r.status >= 500,
            Err(_) => true,
        };
        if !retryable || attempt >= policy.retries {
            return outcome;
        }
        let backoff = policy.base_backoff.saturating_mul(1u32 << attempt.min(16));
        if !backoff.is_zero() {
            std::thread::sleep(backoff);
        }
        attempt += 1;
    }
}

/// Token bucket refilled continuously at `rate_per_min`.
pub struct RateLimiter {
    rate_per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    /// A rate of zero disables limiting.
    pub fn per_minute(rate_per_min: u32) -> Self {
        let capacity = f64::from(rate_per_min.max(1)).min(10.0);
        Self {
            rate_per_sec: f64::from(rate_per_min) / 60.0,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        if self.rate_per_sec <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.rate_per_sec).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.rate_per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// Counting semaphore bounding in-flight requests.
pub struct ConcurrencyLimit {
    max: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

pub struct Permit<'a> {
    limit: &'a ConcurrencyLimit,
}

impl ConcurrencyLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limit poisoned");
        while *n >= self.max {
            n = self.released.wait(n).expect("limit poisoned");
        }
        *n += 1;
        Permit { limit: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.in_flight.lock().expect("limit poisoned");
        *n -= 1;
        self.limit.released.notify_one();
    }
}
