//! Text-completion backends.
//!
//! [`HttpService`] speaks the chat-completion wire format. [`MockService`]
//! replays canned responses keyed by `<video_id>/window_NNNN`,
//! `window_NNNN` or `*`. [`RuleService`] writes a verdict from the scene
//! evidence alone, so replays can run offline without canned text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::Prompt;
use crate::scene::{DistanceClass, SceneDescription, SpeedClass};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-16k-0613";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("{endpoint}: timed out after {elapsed_s:.3} s")]
    Timeout { endpoint: String, elapsed_s: f64 },
    #[error("{endpoint}: transport failure: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint}: HTTP status {code}")]
    Status { endpoint: String, code: u16 },
    #[error("{endpoint}: unexpected response: {message}")]
    BadResponse { endpoint: String, message: String },
    #[error("{endpoint}: empty response")]
    EmptyResponse { endpoint: String },
    #[error("no mock response for '{0}'")]
    NoMockResponse(String),
    #[error("service config: {0}")]
    Config(String),
}

/// What a backend is asked to complete.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a Prompt,
    pub video_id: &'a str,
    pub window_index: usize,
    pub scene: &'a SceneDescription,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency_s: f64,
    pub model: String,
}

pub trait CompletionService: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_s: f64,
    pub temperature: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: DEFAULT_MODEL.into(),
            api_key: None,
            timeout_s: 30.0,
            temperature: 0.0,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Overrides fields from `VCD_ENDPOINT`, `VCD_MODEL`, `VCD_API_KEY` and
    /// `VCD_TIMEOUT_S`.
    pub fn with_env(self) -> Result<Self, ServiceError> {
        self.with_vars(|k| std::env::var(k).ok())
    }

    pub fn with_vars(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        if let Some(v) = var("VCD_ENDPOINT") {
            self.endpoint = v;
        }
        if let Some(v) = var("VCD_MODEL") {
            self.model = v;
        }
        if let Some(v) = var("VCD_API_KEY") {
            self.api_key = Some(v);
        }
        if let Some(v) = var("VCD_TIMEOUT_S") {
            self.timeout_s = v
                .parse()
                .map_err(|_| ServiceError::Config(format!("VCD_TIMEOUT_S='{v}' is not a number")))?;
        }
        if !(self.timeout_s > 0.0) {
            return Err(ServiceError::Config(format!("timeout must be positive, got {}", self.timeout_s)));
        }
        Ok(self)
    }
}

pub struct HttpService {
    config: ServiceConfig,
    agent: ureq::Agent,
}

impl HttpService {
    pub fn new(config: ServiceConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
                .http_status_as_error(true)
                .build(),
        );
        Self { config, agent }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn body(&self, prompt: &Prompt) -> Value {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        })
    }

    fn attempt(&self, body: &Value, started: Instant) -> Result<String, (ServiceError, bool)> {
        let endpoint = &self.config.endpoint;
        let mut req = self.agent.post(endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let classify = |e: ureq::Error| -> (ServiceError, bool) {
            match e {
                ureq::Error::Timeout(_) => (
                    ServiceError::Timeout {
                        endpoint: endpoint.clone(),
                        elapsed_s: started.elapsed().as_secs_f64(),
                    },
                    false,
                ),
                ureq::Error::StatusCode(code) => (
                    ServiceError::Status {
                        endpoint: endpoint.clone(),
                        code,
                    },
                    false,
                ),
                ureq::Error::Json(e) => (
                    ServiceError::BadResponse {
                        endpoint: endpoint.clone(),
                        message: e.to_string(),
                    },
                    false,
                ),
                other => (
                    ServiceError::Transport {
                        endpoint: endpoint.clone(),
                        message: other.to_string(),
                    },
                    true,
                ),
            }
        };
        let reply: Value = req
            .send_json(body)
            .map_err(classify)?
            .body_mut()
            .read_json()
            .map_err(classify)?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                (
                    ServiceError::BadResponse {
                        endpoint: endpoint.clone(),
                        message: "no choices[0].message.content".into(),
                    },
                    false,
                )
            })?;
        Ok(text.to_string())
    }
}

impl CompletionService for HttpService {
    fn model(&self) -> &str {
        &self.config.model
    }

    /// Posts the prompt, retrying once when the connection itself fails.
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ServiceError> {
        let body = self.body(request.prompt);
        let started = Instant::now();
        let text = match self.attempt(&body, started) {
            Ok(t) => t,
            Err((e, true)) => {
                log::warn!("{e}; retrying once");
                self.attempt(&body, started).map_err(|(e, _)| e)?
            }
            Err((e, false)) => return Err(e),
        };
        if text.trim().is_empty() {
            return Err(ServiceError::EmptyResponse {
                endpoint: self.config.endpoint.clone(),
            });
        }
        Ok(Completion {
            text,
            latency_s: started.elapsed().as_secs_f64(),
            model: self.config.model.clone(),
        })
    }
}

/// Canned responses with an optional artificial delay.
#[derive(Debug, Clone, Default)]
pub struct MockService {
    responses: BTreeMap<String, String>,
    delay: Duration,
    timeout: Option<Duration>,
}

impl MockService {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self {
            responses,
            ..Self::default()
        }
    }

    /// Answers every request with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        Self::new(BTreeMap::from([("*".to_string(), text.into())]))
    }

    /// Reads a JSON object mapping keys to response text.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let map = serde_json::from_str(&text)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(map))
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.responses.insert(key.into(), text.into());
    }

    pub fn lookup(&self, video_id: &str, window_index: usize) -> Option<&str> {
        let window = format!("window_{window_index:04}");
        [format!("{video_id}/{window}"), window, "*".to_string()]
            .iter()
            .find_map(|k| self.responses.get(k))
            .map(String::as_str)
    }
}

impl CompletionService for MockService {
    fn model(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ServiceError> {
        let started = Instant::now();
        let text = self
            .lookup(request.video_id, request.window_index)
            .ok_or_else(|| {
                ServiceError::NoMockResponse(format!(
                    "{}/window_{:04}",
                    request.video_id, request.window_index
                ))
            })?;
        match self.timeout {
            Some(t) if self.delay > t => {
                thread::sleep(t);
                return Err(ServiceError::Timeout {
                    endpoint: "mock".into(),
                    elapsed_s: started.elapsed().as_secs_f64(),
                });
            }
            _ => thread::sleep(self.delay),
        }
        if text.trim().is_empty() {
            return Err(ServiceError::EmptyResponse {
                endpoint: "mock".into(),
            });
        }
        Ok(Completion {
            text: text.to_string(),
            latency_s: started.elapsed().as_secs_f64(),
            model: "mock".into(),
        })
    }
}

/// Deterministic verdicts from scene evidence.
///
/// A pedestrian is risky when it stands on a road, or when it is within
/// medium range and moving toward the road at `approach_threshold` frame
/// widths per second or more.
#[derive(Debug, Clone, Copy)]
pub struct RuleService {
    pub approach_threshold: f64,
}

impl Default for RuleService {
    fn default() -> Self {
        Self {
            approach_threshold: 0.02,
        }
    }
}

impl RuleService {
    pub fn verdict_text(&self, scene: &SceneDescription) -> String {
        let mut risks = String::new();
        let mut evaluation = String::new();
        for (id, ev) in &scene.evidence {
            let f = ev.latest();
            let surface = f.surface.map_or("no mapped surface".to_string(), |s| s.to_string());
            let range = f.distance.map_or("unknown", DistanceClass::as_str);
            let on_road = f.surface.is_some_and(|s| s.is_road());
            let close = f.distance.is_some_and(|d| d <= DistanceClass::Medium);
            let approaching = ev.approach_rate >= self.approach_threshold;
            let risky = on_road || (close && approaching);
            let line = if risky {
                format!("Person {id} is on {surface} at {range} range and moving toward the road, indicating intention to cross.")
            } else if f.speed == SpeedClass::Fast {
                format!("Person {id} walks on {surface} at {range} range, not toward the road; no immediate risk.")
            } else {
                format!("Person {id} stationary on {surface} at {range} range; no immediate risk.")
            };
            let _ = writeln!(risks, "{line}");
            let _ = writeln!(evaluation, "Person {id} : {}", if risky { "Risky" } else { "Safe" });
        }
        format!(
            "### Scene\n{} pedestrian(s) in frames {}.\n\n#### Potential Risks\n{}\n#### Safety Evaluation\n{}",
            scene.persons.len(),
            scene.window,
            risks,
            evaluation
        )
    }
}

impl CompletionService for RuleService {
    fn model(&self) -> &str {
        "rules"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ServiceError> {
        let started = Instant::now();
        let text = self.verdict_text(request.scene);
        Ok(Completion {
            text,
            latency_s: started.elapsed().as_secs_f64(),
            model: "rules".into(),
        })
    }
}
