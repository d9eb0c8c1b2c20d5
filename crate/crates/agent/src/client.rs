// SPDX-License-Identifier: Apache-2.0

//! Chat-model clients: a JSON-over-HTTP client and a deterministic mock
//! that replays scripted replies keyed by prompt hash.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no scripted reply for prompt hash {0}")]
    Unscripted(String),
    #[error("chat endpoint error: {0}")]
    Transport(String),
    #[error("chat reply has no message content")]
    EmptyReply,
    #[error("client configuration: {0}")]
    Config(String),
    #[error("prompt rejected: {0}")]
    Guard(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

pub trait ChatClient {
    /// Sends the conversation and returns the assistant's reply.
    fn complete(&mut self, messages: &[Message]) -> Result<String, ClientError>;

    /// Every message sent and received so far, one exchange after another.
    fn transcript(&self) -> &[Message];
}

fn record(transcript: &mut Vec<Message>, sent: &[Message], reply: &str) {
    transcript.extend_from_slice(sent);
    transcript.push(Message::new(Role::Assistant, reply));
}

/// Rejects text that looks like a raw topology matrix: a matrix header or
/// a long unbroken run of binary cells. Prompts may carry paths, sizes,
/// statistics and violation boxes only.
pub fn guard(text: &str) -> Result<(), ClientError> {
    if text.contains("P-TOPO") || text.contains("P-GEOM") {
        return Err(ClientError::Guard("topology or geometry file content".into()));
    }
    const LIMIT: usize = 16;
    for line in text.lines() {
        let mut run = 0;
        for ch in line.chars() {
            run = if matches!(ch, '0' | '1' | '#' | '.') { run + 1 } else { 0 };
            if run >= LIMIT {
                return Err(ClientError::Guard("raw cell matrix".into()));
            }
        }
        let mut tokens = 0;
        for tok in line.split(|c: char| c.is_whitespace() || matches!(c, ',' | '[' | ']')) {
            if tok.is_empty() {
                continue;
            }
            tokens = if tok == "0" || tok == "1" { tokens + 1 } else { 0 };
            if tokens >= LIMIT {
                return Err(ClientError::Guard("raw cell matrix".into()));
            }
        }
    }
    Ok(())
}

/// Hex sha256 of a prompt text.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// The key a mock reply is looked up by: the last user message.
pub fn prompt_key(messages: &[Message]) -> String {
    let last = messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str());
    prompt_hash(last)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Literal prompt text; hashed on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    pub response: String,
}

/// Mock script file: replies keyed by prompt, plus an optional reply for
/// anything unmatched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: Vec<ScriptEntry>,
    #[serde(default)]
    pub default: Option<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Default)]
pub struct MockClient {
    replies: BTreeMap<String, String>,
    default: Option<String>,
    transcript: Vec<Message>,
    calls: usize,
}

impl MockClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: &MockScript) -> Result<Self, ClientError> {
        let mut m = Self::new();
        for e in &script.responses {
            let key = match (&e.prompt, &e.hash) {
                (Some(p), _) => prompt_hash(p),
                (None, Some(h)) => h.to_ascii_lowercase(),
                (None, None) => return Err(ClientError::Config("script entry needs a prompt or a hash".into())),
            };
            m.replies.insert(key, e.response.clone());
        }
        m.default = script.default.clone();
        Ok(m)
    }

    /// Replies with `response` whenever the last user message is `prompt`.
    pub fn on(mut self, prompt: &str, response: &str) -> Self {
        self.replies.insert(prompt_hash(prompt), response.to_string());
        self
    }

    pub fn otherwise(mut self, response: &str) -> Self {
        self.default = Some(response.to_string());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl ChatClient for MockClient {
    fn complete(&mut self, messages: &[Message]) -> Result<String, ClientError> {
        self.calls += 1;
        let key = prompt_key(messages);
        let reply = self
            .replies
            .get(&key)
            .or(self.default.as_ref())
            .cloned()
            .ok_or(ClientError::Unscripted(key))?;
        record(&mut self.transcript, messages, &reply);
        Ok(reply)
    }

    fn transcript(&self) -> &[Message] {
        &self.transcript
    }
}

pub const ENV_ENDPOINT: &str = "LAYOUTGEN_CHAT_ENDPOINT";
pub const ENV_MODEL: &str = "LAYOUTGEN_CHAT_MODEL";
pub const ENV_TIMEOUT: &str = "LAYOUTGEN_CHAT_TIMEOUT_SECS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

impl HttpConfig {
    /// Reads the endpoint, model and timeout from the environment.
    pub fn from_env() -> Result<Self, ClientError> {
        let get = |k: &str| std::env::var(k).map_err(|_| ClientError::Config(format!("{k} is not set")));
        let timeout_secs = match std::env::var(ENV_TIMEOUT) {
            Ok(v) => v.parse().map_err(|_| ClientError::Config(format!("{ENV_TIMEOUT} must be an integer")))?,
            Err(_) => default_timeout(),
        };
        Ok(Self {
            endpoint: get(ENV_ENDPOINT)?,
            model: get(ENV_MODEL)?,
            timeout_secs,
        })
    }

    /// Reads `{endpoint, model, timeout_secs}` from a JSON file.
    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))
    }
}

/// Posts `{model, messages}` and reads the reply from `choices[0].message`,
/// `message` or `content`.
pub struct HttpClient {
    config: HttpConfig,
    agent: ureq::Agent,
    transcript: Vec<Message>,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Self {
            config,
            agent,
            transcript: Vec::new(),
        }
    }
}

fn reply_content(v: &serde_json::Value) -> Option<String> {
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/message/content"),
        v.pointer("/content"),
    ];
    candidates.into_iter().flatten().find_map(|c| c.as_str().map(str::to_string))
}

impl ChatClient for HttpClient {
    fn complete(&mut self, messages: &[Message]) -> Result<String, ClientError> {
        let body = serde_json::json!({ "model": self.config.model, "messages": messages });
        let resp = self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json")
            .send_string(&body.to_string())
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let text = resp.into_string().map_err(|e| ClientError::Transport(e.to_string()))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ClientError::Transport(e.to_string()))?;
        let reply = reply_content(&v).ok_or(ClientError::EmptyReply)?;
        record(&mut self.transcript, messages, &reply);
        Ok(reply)
    }

    fn transcript(&self) -> &[Message] {
        &self.transcript
    }
}
