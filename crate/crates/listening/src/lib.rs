//! AB and ABX listening tests: randomized trial serving, response
//! recording and de-randomized preference results, over HTTP.

mod http;
mod service;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use http::{router, serve};
pub use service::ListeningService;
pub use stylevc::evaluation::PreferenceSummary;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("no responses recorded for test {0}")]
    EmptyResult(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Validation(_) => "validation",
            ServiceError::Protocol(_) => "protocol",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::EmptyResult(_) => "empty_result",
            ServiceError::Storage(_) => "storage",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    AB,
    ABX,
}

/// A trial as defined by the experimenter, with system identities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDefinition {
    pub trial_id: String,
    pub system_a: String,
    pub stimulus_a: String,
    pub system_b: String,
    pub stimulus_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_x: Option<String>,
    #[serde(default)]
    pub prompt: String,
}

/// Body of `POST /tests`. `audio` maps audio ids to WAV files on the
/// server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestDefinition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
    pub kind: TestKind,
    pub trials: Vec<TrialDefinition>,
    pub audio: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedTest {
    pub test_id: String,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub prompt: String,
}

/// Public view of a test; no system identities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestInfo {
    pub test_id: String,
    pub kind: TestKind,
    pub trial_count: usize,
    pub trials: Vec<TrialSummary>,
}

/// A trial as presented to one listener, slots already assigned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub kind: TestKind,
    pub stimulus_a: String,
    pub stimulus_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_x: Option<String>,
    pub prompt: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub served: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextTrial {
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<Trial>,
    pub progress: Progress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    NP,
}

impl Choice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Choice::A),
            "B" => Ok(Choice::B),
            "NP" => Ok(Choice::NP),
            other => Err(ServiceError::Validation(format!(
                "choice must be A, B or NP, got {other:?}"
            ))),
        }
    }
}

/// Body of `POST /tests/{id}/responses`. The choice is kept as text so an
/// invalid value is reported as a validation error.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    pub trial_id: String,
    pub listener_id: String,
    pub choice: String,
    pub replay_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// A stored response. `timestamp` is the client's value when given,
/// otherwise server receipt time in Unix milliseconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub trial_id: String,
    pub listener_id: String,
    pub choice: Choice,
    pub replay_count: u32,
    pub timestamp: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub progress: Progress,
}
