//! Multi-turn chat gateway with a live HTTP backend and a replay backend.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "HILMT_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_owned(),
            temperature: 1.0,
            top_p: 1.0,
            max_output_tokens: 512,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |what: &str| Err(GatewayError::InvalidParams(what.to_owned()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if self.model.is_empty() {
            return bad("model must be non-empty");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("conversation has no user message")]
    NoUserMessage,
    #[error("{role} message {index} is empty")]
    EmptyMessage { index: usize, role: &'static str },
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("fixture miss for digest {digest}; prompt:\n{prompt}")]
    FixtureMiss { digest: String, prompt: String },
    #[error("{path}:{line}: {reason}")]
    Fixture {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("request failed after {attempts} attempt(s): {message}")]
    Request { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("replay backend needs a fixture file")]
    MissingFixtures,
    #[error("{0} is not set")]
    MissingCredential(&'static str),
}

/// Something that turns a conversation into one assistant reply.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, GatewayError>;
}

/// Cheaply clonable handle shared by pipeline workers.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Gateway")
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self {
            backend: Arc::new(backend),
        }
    }

    pub fn from_arc(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }

    pub fn backend(&self) -> Arc<dyn ChatBackend> {
        Arc::clone(&self.backend)
    }

    pub fn chat(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<ChatMessage, GatewayError> {
        validate_messages(messages)?;
        params.validate()?;
        self.backend
            .complete(messages, params)
            .map(ChatMessage::assistant)
    }
}

fn validate_messages(messages: &[ChatMessage]) -> Result<(), GatewayError> {
    if !messages.iter().any(|m| m.role == Role::User) {
        return Err(GatewayError::NoUserMessage);
    }
    for (index, m) in messages.iter().enumerate() {
        if m.role != Role::System && m.content.is_empty() {
            return Err(GatewayError::EmptyMessage {
                index,
                role: m.role.as_str(),
            });
        }
    }
    Ok(())
}

/// Hex SHA-256 over a fixed-order JSON array: every `[role, content]` pair in
/// turn order, then `[model, temperature, top_p, max_output_tokens]`.
pub fn digest(messages: &[ChatMessage], params: &GenerationParams) -> String {
    let turns: Vec<(&str, &str)> = messages
        .iter()
        .map(|m| (m.role.as_str(), m.content.as_str()))
        .collect();
    let canonical = json!([
        turns,
        [
            json!(params.model),
            json!(params.temperature),
            json!(params.top_p),
            json!(params.max_output_tokens)
        ]
    ]);
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

fn prompt_text(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("[{}] {}", m.role.as_str(), m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub digest: String,
    pub reply: String,
}

/// Appends a `{digest, reply}` line to the fixture file at `path`.
pub fn record_fixture(
    path: &Path,
    messages: &[ChatMessage],
    params: &GenerationParams,
    reply: &str,
) -> Result<FixtureEntry, GatewayError> {
    let entry = FixtureEntry {
        digest: digest(messages, params),
        reply: reply.to_owned(),
    };
    let io_err = |source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut line = serde_json::to_string(&entry).expect("entry serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(io_err)?;
    Ok(entry)
}

/// Answers from a fixture file. When a digest appears more than once the last
/// entry wins.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    replies: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut replies = HashMap::new();
        for (index, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| GatewayError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| GatewayError::Fixture {
                    path: path.to_path_buf(),
                    line: index + 1,
                    reason: e.to_string(),
                })?;
            replies.insert(entry.digest, entry.reply);
        }
        Ok(Self { replies })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        Self {
            replies: entries.into_iter().map(|e| (e.digest, e.reply)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let digest = digest(messages, params);
        match self.replies.get(&digest) {
            Some(reply) => Ok(reply.clone()),
            None => Err(GatewayError::FixtureMiss {
                digest,
                prompt: prompt_text(messages),
            }),
        }
    }
}

/// Wraps a backend and appends every successful exchange to a fixture file,
/// so a live session can later be replayed.
pub struct FixtureRecorder {
    inner: Arc<dyn ChatBackend>,
    path: PathBuf,
    lock: Mutex<()>,
}

impl FixtureRecorder {
    pub fn new(inner: Arc<dyn ChatBackend>, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl ChatBackend for FixtureRecorder {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let reply = self.inner.complete(messages, params)?;
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        record_fixture(&self.path, messages, params, &reply)?;
        Ok(reply)
    }
}

/// One logged request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLogEntry {
    pub digest: String,
    pub messages: Vec<ChatMessage>,
}

/// Remembers every conversation sent through it.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    log: Mutex<Vec<PromptLogEntry>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Logged requests in arrival order.
    pub fn entries(&self) -> Vec<PromptLogEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Writes the log as JSON Lines sorted by digest, so concurrent runs
    /// produce identical files.
    pub fn write_log(&self, path: &Path) -> Result<(), GatewayError> {
        let mut entries = self.entries();
        entries.sort_by(|a, b| a.digest.cmp(&b.digest));
        let mut text = String::new();
        for entry in &entries {
            text.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let entry = PromptLogEntry {
            digest: digest(messages, params),
            messages: messages.to_vec(),
        };
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(entry);
        self.inner.complete(messages, params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Carries one JSON request to the provider. Errors are transport-level
/// failures (connection refused, timeouts); HTTP error statuses come back as
/// an [`HttpReply`].
pub trait Transport: Send + Sync {
    fn post(&self, body: &serde_json::Value) -> Result<HttpReply, String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Request {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
        })
    }

    /// Reads the credential from `HILMT_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let key =
            std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingCredential(API_KEY_ENV))?;
        Self::new(endpoint, key, timeout)
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &serde_json::Value) -> Result<HttpReply, String> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff
            .mul_f64(self.multiplier.powi(retry as i32))
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl RateLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limiter: self }
    }
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self
            .limiter
            .in_flight
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend<T> {
    transport: T,
    retry: RetryPolicy,
    limiter: RateLimiter,
}

impl<T: Transport> LiveBackend<T> {
    pub fn new(transport: T, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            transport,
            retry,
            limiter: RateLimiter::new(max_in_flight),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

pub fn request_body(messages: &[ChatMessage], params: &GenerationParams) -> serde_json::Value {
    json!({
        "model": params.model,
        "messages": messages,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_output_tokens,
    })
}

fn parse_reply(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))
}

impl<T: Transport> ChatBackend for LiveBackend<T> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let body = request_body(messages, params);
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.post(&body)
            };
            match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => return parse_reply(&reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    log::warn!("attempt {attempt}: HTTP {}", reply.status);
                    if attempt == attempts {
                        return Err(GatewayError::Http {
                            status: reply.status,
                            attempts,
                            body: reply.body,
                        });
                    }
                }
                Ok(reply) => {
                    return Err(GatewayError::Http {
                        status: reply.status,
                        attempts: attempt,
                        body: reply.body,
                    })
                }
                Err(message) => {
                    log::warn!("attempt {attempt}: {message}");
                    last = message;
                }
            }
            if attempt < attempts {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
        }
        Err(GatewayError::Request {
            attempts,
            message: last,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Live,
    Replay,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub endpoint: String,
    /// Replay: fixtures to answer from. Live: fixtures to record into.
    pub fixtures: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Live,
            endpoint: DEFAULT_ENDPOINT.to_owned(),
            fixtures: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            timeout: Duration::from_secs(60),
        }
    }
}

impl GatewayConfig {
    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, GatewayError> {
        match self.backend {
            BackendKind::Replay => {
                let path = self
                    .fixtures
                    .as_ref()
                    .ok_or(GatewayError::MissingFixtures)?;
                Ok(Arc::new(ReplayBackend::load(path)?))
            }
            BackendKind::Live => {
                let transport = HttpTransport::from_env(self.endpoint.clone(), self.timeout)?;
                let live: Arc<dyn ChatBackend> =
                    Arc::new(LiveBackend::new(transport, self.retry, self.max_in_flight));
                Ok(match &self.fixtures {
                    Some(path) => Arc::new(FixtureRecorder::new(live, path.clone())),
                    None => live,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convo(text: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::user(text)]
    }

    #[test]
    fn digest_is_sensitive_to_every_field() {
        let p = GenerationParams::default();
        let base = digest(&convo("hi"), &p);
        assert_eq!(base.len(), 64);
        assert_eq!(base, digest(&convo("hi"), &p.clone()));
        assert_ne!(base, digest(&convo("hi!"), &p));
        assert_ne!(base, digest(&[ChatMessage::system("hi")], &p));
        let variants = [
            GenerationParams {
                temperature: 0.5,
                ..p.clone()
            },
            GenerationParams {
                top_p: 0.9,
                ..p.clone()
            },
            GenerationParams {
                max_output_tokens: 7,
                ..p.clone()
            },
            GenerationParams {
                model: "other".into(),
                ..p.clone()
            },
        ];
        for v in &variants {
            assert_ne!(base, digest(&convo("hi"), v));
        }
    }

    #[test]
    fn digest_ignores_json_field_order() {
        let a: ChatMessage = serde_json::from_str(r#"{"role":"user","content":"x"}"#).unwrap();
        let b: ChatMessage = serde_json::from_str(r#"{"content":"x","role":"user"}"#).unwrap();
        let p = GenerationParams::default();
        assert_eq!(digest(&[a], &p), digest(&[b], &p));
    }

    #[test]
    fn message_validation() {
        let g = Gateway::new(ReplayBackend::default());
        let p = GenerationParams::default();
        assert!(matches!(g.chat(&[], &p), Err(GatewayError::NoUserMessage)));
        assert!(matches!(
            g.chat(&[ChatMessage::system("s")], &p),
            Err(GatewayError::NoUserMessage)
        ));
        assert!(matches!(
            g.chat(&[ChatMessage::user("a"), ChatMessage::assistant("")], &p),
            Err(GatewayError::EmptyMessage { index: 1, .. })
        ));
        let bad = GenerationParams { top_p: 0.0, ..p };
        assert!(matches!(
            g.chat(&convo("a"), &bad),
            Err(GatewayError::InvalidParams(_))
        ));
    }

    #[test]
    fn backoff_grows_exponentially() {
        let r = RetryPolicy::default();
        assert_eq!(r.backoff(0), Duration::from_secs(1));
        assert_eq!(r.backoff(1), Duration::from_secs(2));
        assert_eq!(r.backoff(2), Duration::from_secs(4));
    }

    #[test]
    fn parse_reply_shapes() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"Hallo"}}]}"#;
        assert_eq!(parse_reply(ok).unwrap(), "Hallo");
        assert!(matches!(parse_reply("{}"), Err(GatewayError::Malformed(_))));
        assert!(matches!(
            parse_reply("nope"),
            Err(GatewayError::Malformed(_))
        ));
    }
}
