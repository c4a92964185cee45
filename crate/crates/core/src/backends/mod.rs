//! Wire-level abstraction over the three external model capabilities.
//!
//! * cognition: an LLM that writes style descriptions, captions, reflections,
//!   role utterances, stance labels and self-assessment scores;
//! * detector: a forgery detector returning a confidence in `[0, 1]`;
//! * edit: an image editor applying one operator to one image reference.
//!
//! The pipeline only talks to the traits below. [`HttpBackend`] reaches real
//! services over `POST /v1/{cognition,detect,edit}`; [`StubBackend`] answers
//! the same requests deterministically from a seed.

mod http;
mod stub;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rational::Rational;

pub use http::{backoff_delays, HttpBackend};
pub use stub::{make_stub, StubBackend};

/// Environment variable consulted for the bearer token when the config has none.
pub const AUTH_TOKEN_ENV: &str = "FORGESIM_AUTH_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Cognition,
    Detector,
    Edit,
}

impl BackendKind {
    pub fn path(self) -> &'static str {
        match self {
            BackendKind::Cognition => "/v1/cognition",
            BackendKind::Detector => "/v1/detect",
            BackendKind::Edit => "/v1/edit",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BackendKind::Cognition => "cognition",
            BackendKind::Detector => "detector",
            BackendKind::Edit => "edit",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("{kind} request timed out after {attempts} attempt(s)")]
    Timeout { kind: BackendKind, attempts: u32 },
    #[error("{kind} transport error after {attempts} attempt(s): {message}")]
    Transport {
        kind: BackendKind,
        attempts: u32,
        message: String,
    },
    #[error("{kind} protocol error on attempt {attempts}: {message}")]
    Protocol {
        kind: BackendKind,
        attempts: u32,
        message: String,
    },
    #[error("{kind} retries exhausted after {attempts} attempt(s); last error: {last}")]
    Exhausted {
        kind: BackendKind,
        attempts: u32,
        last: String,
    },
}

impl BackendError {
    pub fn attempts(&self) -> u32 {
        match self {
            BackendError::Timeout { attempts, .. }
            | BackendError::Transport { attempts, .. }
            | BackendError::Protocol { attempts, .. }
            | BackendError::Exhausted { attempts, .. } => *attempts,
        }
    }

    fn protocol(kind: BackendKind, message: impl Into<String>) -> Self {
        BackendError::Protocol {
            kind,
            attempts: 1,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Never serialized back out.
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    200
}

/// Upper bound on configured retries.
pub const MAX_RETRIES_LIMIT: u32 = 16;

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: endpoint_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint_url.trim().is_empty() {
            return Err("endpoint_url is empty".into());
        }
        if self.timeout_ms < 1 {
            return Err("timeout_ms must be >= 1".into());
        }
        if self.retry_backoff_ms < 1 {
            return Err("retry_backoff_ms must be >= 1".into());
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(format!("max_retries must be <= {MAX_RETRIES_LIMIT}"));
        }
        Ok(())
    }

    /// Token from the config, falling back to [`AUTH_TOKEN_ENV`].
    pub fn resolved_token(&self) -> Option<String> {
        self.auth_token
            .clone()
            .or_else(|| std::env::var(AUTH_TOKEN_ENV).ok())
            .filter(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitionTask {
    StyleDescription,
    Describe,
    Reflect,
    RoleUtterance,
    StanceClassify,
    SelfScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionRequest {
    pub task: CognitionTask,
    pub context: serde_json::Value,
}

impl CognitionRequest {
    pub fn new(task: CognitionTask, context: serde_json::Value) -> Self {
        CognitionRequest { task, context }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionResponse {
    pub text: String,
    #[serde(default)]
    pub score: Option<Rational>,
}

impl CognitionResponse {
    pub fn validate(&self, task: CognitionTask) -> Result<(), BackendError> {
        let kind = BackendKind::Cognition;
        match (task, self.score) {
            (CognitionTask::SelfScore, None) => {
                return Err(BackendError::protocol(kind, "self_score response without score"))
            }
            (_, Some(s)) if !s.is_unit_interval() => {
                return Err(BackendError::protocol(kind, format!("score {s} outside [0, 1]")))
            }
            _ => {}
        }
        if task != CognitionTask::SelfScore && self.text.trim().is_empty() {
            return Err(BackendError::protocol(kind, format!("empty text for {task:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorRequest {
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorResponse {
    pub forgery_confidence: Rational,
}

impl DetectorResponse {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.forgery_confidence.is_unit_interval() {
            return Err(BackendError::protocol(
                BackendKind::Detector,
                format!("confidence {} outside [0, 1]", self.forgery_confidence),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub image_ref: String,
    pub op_id: String,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditResponse {
    pub image_ref: String,
}

impl EditResponse {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.image_ref.trim().is_empty() {
            return Err(BackendError::protocol(BackendKind::Edit, "empty image_ref"));
        }
        Ok(())
    }
}

/// Implementors provide `complete`; callers use `call`, which validates.
pub trait CognitionBackend: Send + Sync {
    fn complete(&self, request: &CognitionRequest) -> Result<CognitionResponse, BackendError>;

    fn call(&self, request: &CognitionRequest) -> Result<CognitionResponse, BackendError> {
        let response = self.complete(request)?;
        response.validate(request.task)?;
        Ok(response)
    }
}

pub trait DetectorBackend: Send + Sync {
    fn score(&self, request: &DetectorRequest) -> Result<DetectorResponse, BackendError>;

    fn call(&self, request: &DetectorRequest) -> Result<DetectorResponse, BackendError> {
        let response = self.score(request)?;
        response.validate()?;
        Ok(response)
    }
}

pub trait EditBackend: Send + Sync {
    fn apply(&self, request: &EditRequest) -> Result<EditResponse, BackendError>;

    fn call(&self, request: &EditRequest) -> Result<EditResponse, BackendError> {
        let response = self.apply(request)?;
        response.validate()?;
        Ok(response)
    }
}

/// The three handles a run needs.
#[derive(Clone)]
pub struct Backends {
    pub cognition: Arc<dyn CognitionBackend>,
    pub detector: Arc<dyn DetectorBackend>,
    pub edit: Arc<dyn EditBackend>,
    /// Short label recorded in manifest headers (`"stub"` or `"http"`).
    pub label: String,
}

impl Backends {
    pub fn stub(seed: u64) -> Self {
        let stub = make_stub(seed);
        Backends {
            cognition: stub.clone(),
            detector: stub.clone(),
            edit: stub,
            label: "stub".into(),
        }
    }

    pub fn http(cognition: &BackendConfig, detector: &BackendConfig, edit: &BackendConfig) -> Result<Self, String> {
        Ok(Backends {
            cognition: Arc::new(HttpBackend::new(cognition.clone())?),
            detector: Arc::new(HttpBackend::new(detector.clone())?),
            edit: Arc::new(HttpBackend::new(edit.clone())?),
            label: "http".into(),
        })
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends").field("label", &self.label).finish()
    }
}
