//! Deliberation through a chat-completion endpoint.
//!
//! Wire format (`POST {base_url}/chat/completions`):
//!
//! ```json
//! {"model": "...", "temperature": 0.0,
//!  "messages": [{"role": "system", "content": "..."}, {"role": "user", "content": "..."}]}
//! ```
//!
//! The reply text is read from `choices[0].message.content`. When `api_key_env` names a set
//! environment variable its value is sent as `Authorization: Bearer <value>`.

use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendHealth, DeliberationVerdict, Deliberator, DeliberatorError};
use crate::context::RuntimeContext;
use crate::intent::IntentDescriptor;
use crate::prompt::{build_governance_prompt, parse_decision, repair_instruction, PromptTemplates};
use crate::rules::Rule;

fn default_temperature() -> f64 {
    0.0
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if the endpoint needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Budget for one completion request.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Extra attempts after an unparseable reply.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl CompletionEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            temperature: default_temperature(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// Sends one chat request and returns the assistant's text.
pub trait CompletionTransport: Send + Sync {
    fn complete(
        &self,
        config: &CompletionEndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<String, DeliberatorError>;
}

/// Blocking HTTP transport. Must not be called from inside an async runtime.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpTransport;

// Kept for the process lifetime: the blocking client owns a runtime thread that must not be
// dropped from async code.
fn shared_client() -> &'static reqwest::blocking::Client {
    static CLIENT: OnceLock<reqwest::blocking::Client> = OnceLock::new();
    CLIENT.get_or_init(reqwest::blocking::Client::new)
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl CompletionTransport for HttpTransport {
    fn complete(
        &self,
        config: &CompletionEndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<String, DeliberatorError> {
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let mut req = shared_client()
            .post(url)
            .timeout(config.request_timeout())
            .json(&ChatRequest {
                model: &config.model,
                temperature: config.temperature,
                messages,
            });
        if let Some(key) = config.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                DeliberatorError::Timeout(config.request_timeout())
            } else {
                DeliberatorError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(DeliberatorError::Transport(format!("endpoint returned HTTP {status}")));
        }
        let body: ChatResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                DeliberatorError::Timeout(config.request_timeout())
            } else {
                DeliberatorError::Transport(format!("malformed completion response: {e}"))
            }
        })?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| DeliberatorError::Transport("completion response has no choices".into()))
    }
}

/// Counting semaphore capping concurrent requests.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlight {
    fn acquire(&self, wait: Duration) -> Option<Permit<'_>> {
        let deadline = Instant::now() + wait;
        let mut count = self.count.lock().expect("in-flight lock");
        while *count >= self.cap {
            let left = deadline.checked_duration_since(Instant::now())?;
            count = self.freed.wait_timeout(count, left).expect("in-flight lock").0;
        }
        *count += 1;
        Some(Permit(self))
    }
}

pub struct LlmDeliberator {
    name: String,
    config: CompletionEndpointConfig,
    templates: PromptTemplates,
    transport: Arc<dyn CompletionTransport>,
    in_flight: InFlight,
    degraded: AtomicBool,
}

impl std::fmt::Debug for LlmDeliberator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmDeliberator")
            .field("name", &self.name)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl LlmDeliberator {
    pub fn new(
        config: CompletionEndpointConfig,
        templates: PromptTemplates,
        transport: Arc<dyn CompletionTransport>,
    ) -> Self {
        Self {
            name: format!("llm:{}", config.model),
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                cap: config.max_in_flight.max(1),
            },
            config,
            templates,
            transport,
            degraded: AtomicBool::new(false),
        }
    }

    pub fn http(config: CompletionEndpointConfig, templates: PromptTemplates) -> Self {
        Self::new(config, templates, Arc::new(HttpTransport))
    }

    pub fn config(&self) -> &CompletionEndpointConfig {
        &self.config
    }

    /// Attempts a TCP connection to the endpoint host; marks the backend degraded on failure.
    pub fn probe(&self) -> BackendHealth {
        let reachable = reqwest::Url::parse(&self.config.base_url)
            .ok()
            .and_then(|u| {
                let host = u.host_str()?.to_string();
                let port = u.port_or_known_default()?;
                (host, port).to_socket_addrs().ok()?.next()
            })
            .is_some_and(|addr| {
                TcpStream::connect_timeout(&addr, self.config.request_timeout().min(Duration::from_secs(2)))
                    .is_ok()
            });
        self.degraded.store(!reachable, Ordering::Relaxed);
        self.health()
    }

    fn run(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> Result<DeliberationVerdict, DeliberatorError> {
        let _permit = self
            .in_flight
            .acquire(self.config.request_timeout())
            .ok_or(DeliberatorError::Timeout(self.config.request_timeout()))?;
        let (system, user) = build_governance_prompt(&self.templates, intent, rules, ctx);
        let mut messages = vec![ChatMessage::new("system", system), ChatMessage::new("user", user)];
        let mut last = None;
        for _ in 0..=self.config.max_retries {
            let reply = self.transport.complete(&self.config, &messages)?;
            match parse_decision(&reply) {
                Ok(v) => return Ok(v),
                Err(DeliberatorError::ParseFailure { reason, reply }) => {
                    messages.push(ChatMessage::new("assistant", reply.clone()));
                    messages.push(ChatMessage::new("user", repair_instruction(&reason)));
                    last = Some(DeliberatorError::ParseFailure { reason, reply });
                }
                Err(other) => return Err(other),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

impl Deliberator for LlmDeliberator {
    fn name(&self) -> &str {
        &self.name
    }

    fn deliberate(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> Result<DeliberationVerdict, DeliberatorError> {
        let result = self.run(intent, rules, ctx);
        match &result {
            Ok(_) | Err(DeliberatorError::ParseFailure { .. }) => {
                self.degraded.store(false, Ordering::Relaxed)
            }
            Err(DeliberatorError::Timeout(_) | DeliberatorError::Transport(_)) => {
                self.degraded.store(true, Ordering::Relaxed)
            }
            Err(DeliberatorError::Contract(_)) => {}
        }
        result
    }

    /// Every attempt plus the wait for an in-flight slot, with a small margin.
    fn timeout(&self) -> Option<Duration> {
        let attempts = self.config.max_retries + 2;
        Some(self.config.request_timeout() * attempts + Duration::from_millis(250))
    }

    fn health(&self) -> BackendHealth {
        if self.degraded.load(Ordering::Relaxed) {
            BackendHealth::Degraded
        } else {
            BackendHealth::Healthy
        }
    }
}
