// SPDX-License-Identifier: Apache-2.0

//! Request formatting, the end-to-end agent run, and manifest replay.

use std::path::Path;

use layoutgen::seed::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::client::{guard, ChatClient, Message, Role};
use crate::docs::DocumentationStore;
use crate::execute::{
    ExecutionPolicy, Executor, Manifest, ManifestRecord, SubtaskResult, Toolbox, REQUIREMENT_FORMATTING, SESSION,
};
use crate::plan::{plan, PlanContext};
use crate::requirement::{parse_drafts, template, RequirementList};
use crate::AgentError;

/// Re-prompts after the first invalid reply.
pub const MAX_REPROMPTS: usize = 3;

pub fn system_prompt(styles: &[String], docs: &DocumentationStore) -> String {
    format!(
        "You turn layout pattern requests into requirement lists. Split the request into one list per \
         distinct pattern specification.\n{}\n{}",
        template(styles),
        docs.context()
    )
}

fn complete_all(reply: &str, styles: &[String], docs: &DocumentationStore) -> Result<Vec<RequirementList>, AgentError> {
    parse_drafts(reply)?
        .into_iter()
        .map(|d| {
            let method = match (&d.topology_size, &d.style) {
                (Some(size), Some(style)) => docs.recommend(*size, style).method,
                _ => crate::requirement::DEFAULT_EXTENSION_METHOD,
            };
            d.complete(styles, method)
        })
        .collect()
}

/// Like [`format_request`], also returning the number of client calls.
pub fn format_request_counted(
    user_text: &str,
    client: &mut dyn ChatClient,
    styles: &[String],
    docs: &DocumentationStore,
) -> Result<(Vec<RequirementList>, usize), AgentError> {
    if user_text.trim().is_empty() {
        return Err(AgentError::Requirement("empty request".into()));
    }
    let mut messages = vec![
        Message::new(Role::System, system_prompt(styles, docs)),
        Message::new(Role::User, user_text),
    ];
    let mut last_error = String::new();
    for attempt in 1..=MAX_REPROMPTS + 1 {
        for m in &messages {
            guard(&m.content)?;
        }
        let reply = client.complete(&messages)?;
        match complete_all(&reply, styles, docs) {
            Ok(lists) => return Ok((lists, attempt)),
            Err(e) => {
                last_error = e.to_string();
                messages.push(Message::new(Role::Assistant, reply));
                messages.push(Message::new(
                    Role::User,
                    format!("That reply was rejected ({last_error}). Reply again with only the corrected JSON array."),
                ));
            }
        }
    }
    Err(AgentError::Format {
        attempts: MAX_REPROMPTS + 1,
        last_error,
    })
}

/// Prompts the client with the template and `user_text`, then validates
/// and default-fills one requirement list per sub-task.
pub fn format_request(
    user_text: &str,
    client: &mut dyn ChatClient,
    styles: &[String],
    docs: &DocumentationStore,
) -> Result<Vec<RequirementList>, AgentError> {
    format_request_counted(user_text, client, styles, docs).map(|(l, _)| l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub styles: Vec<String>,
    pub plan: PlanContext,
    pub policy: ExecutionPolicy,
    /// Root seed; sub-tasks without their own seed derive from it.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionResult {
    pub requirements: Vec<RequirementList>,
    pub subtasks: Vec<SubtaskResult>,
}

impl SessionResult {
    pub fn quota_met(&self) -> bool {
        self.subtasks.iter().all(|s| !s.shortfall)
    }
}

pub struct Agent<'a> {
    pub client: &'a mut dyn ChatClient,
    pub toolbox: &'a dyn Toolbox,
    pub docs: &'a mut DocumentationStore,
    pub config: AgentConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    user_text: String,
    config: AgentConfig,
    documentation: DocumentationStore,
}

impl Agent<'_> {
    /// Formats, plans and executes `user_text`, writing artifacts under
    /// `run_dir` and logging to `manifest`.
    pub fn run(&mut self, user_text: &str, run_dir: &Path, manifest: &mut Manifest) -> Result<SessionResult, AgentError> {
        let header = Header {
            user_text: user_text.to_string(),
            config: self.config.clone(),
            documentation: self.docs.clone(),
        };
        manifest.push(ManifestRecord {
            node: "0".into(),
            tool: SESSION.into(),
            args: serde_json::to_value(&header).expect("header serializes"),
            seed: Some(self.config.seed),
            outcome: "ok".into(),
            violation: None,
        })?;
        let formatted = format_request_counted(user_text, self.client, &self.config.styles, self.docs);
        let (requirements, attempts) = match formatted {
            Ok(v) => v,
            Err(e) => {
                manifest.push(ManifestRecord {
                    node: "0".into(),
                    tool: REQUIREMENT_FORMATTING.into(),
                    args: json!({}),
                    seed: None,
                    outcome: format!("error: {e}"),
                    violation: None,
                })?;
                return Err(e);
            }
        };
        manifest.push(ManifestRecord {
            node: "0".into(),
            tool: REQUIREMENT_FORMATTING.into(),
            args: json!({ "client_calls": attempts, "requirements": requirements }),
            seed: None,
            outcome: "ok".into(),
            violation: None,
        })?;
        let graphs = requirements
            .iter()
            .map(|r| plan(r, self.config.plan, self.config.policy.retry))
            .collect::<Result<Vec<_>, _>>()?;
        let mut subtasks = Vec::with_capacity(graphs.len());
        for (g, graph) in graphs.iter().enumerate() {
            let label = (g + 1).to_string();
            let root = graph
                .requirement
                .seed
                .unwrap_or_else(|| derive_seed(self.config.seed, "subtask", g as u64));
            manifest.push(ManifestRecord {
                node: label.clone(),
                tool: "Task_Planning".into(),
                args: serde_json::to_value(graph).expect("graph serializes"),
                seed: Some(root),
                outcome: "ok".into(),
                violation: None,
            })?;
            let mut exec = Executor {
                toolbox: self.toolbox,
                docs: self.docs,
                policy: self.config.policy,
                run_dir,
                manifest,
            };
            subtasks.push(exec.execute(graph, &label, root)?);
        }
        Ok(SessionResult { requirements, subtasks })
    }
}

/// Re-runs the session recorded in `manifest_path` into `run_dir` and
/// checks every manifest line matches byte for byte.
pub fn replay(
    manifest_path: &Path,
    client: &mut dyn ChatClient,
    toolbox: &dyn Toolbox,
    run_dir: &Path,
) -> Result<SessionResult, AgentError> {
    let expected = Manifest::read(manifest_path)?;
    let first = expected
        .first()
        .ok_or_else(|| AgentError::Manifest("empty manifest".into()))?;
    let rec: ManifestRecord = serde_json::from_str(first).map_err(|e| AgentError::Manifest(e.to_string()))?;
    if rec.tool != SESSION {
        return Err(AgentError::Manifest("first record is not a session header".into()));
    }
    let header: Header = serde_json::from_value(rec.args).map_err(|e| AgentError::Manifest(e.to_string()))?;
    let mut docs = header.documentation;
    let mut manifest = Manifest::in_memory();
    let mut agent = Agent {
        client,
        toolbox,
        docs: &mut docs,
        config: header.config,
    };
    let outcome = agent.run(&header.user_text, run_dir, &mut manifest);
    let got = manifest.lines();
    for i in 0..expected.len().max(got.len()) {
        let (e, g) = (expected.get(i), got.get(i));
        if e != g {
            return Err(AgentError::Replay {
                line: i + 1,
                expected: e.cloned().unwrap_or_else(|| "<end>".into()),
                got: g.cloned().unwrap_or_else(|| "<end>".into()),
            });
        }
    }
    outcome
}
