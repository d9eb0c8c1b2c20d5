// SPDX-License-Identifier: Apache-2.0

//! Requirement-driven front-end: turns requests into requirement lists via a
//! chat client, plans tool calls, executes them with a repair ladder and
//! logs every action to a replayable manifest.

pub mod client;
pub mod docs;
pub mod execute;
pub mod plan;
pub mod requirement;
pub mod session;

use thiserror::Error;

pub use client::{ChatClient, ClientError, HttpClient, HttpConfig, Message, MockClient, MockScript, Role};
pub use docs::DocumentationStore;
pub use execute::{execute, ExecutionPolicy, Manifest, ManifestRecord, ModelToolbox, SubtaskResult, Toolbox};
pub use plan::{plan, PlanContext, RetryPolicy, TaskGraph, Tool};
pub use requirement::RequirementList;
pub use session::{format_request, replay, Agent, AgentConfig, SessionResult};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("requirement: {0}")]
    Requirement(String),
    #[error("documentation store: {0}")]
    Docs(String),
    #[error("could not format the request after {attempts} attempts: {last_error}")]
    Format { attempts: usize, last_error: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("plan: {0}")]
    Plan(String),
    #[error("tool: {0}")]
    Tool(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("replay diverged at manifest line {line}:\n  expected {expected}\n  got      {got}")]
    Replay { line: usize, expected: String, got: String },
}
