// SPDX-License-Identifier: Apache-2.0

//! Turns a requirement list into an ordered task graph.

use layoutgen::editing::{plan_extension, ExtensionPlan};
use serde::{Deserialize, Serialize};

use crate::requirement::RequirementList;
use crate::AgentError;

/// Tools the agent can call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tool {
    Generate,
    Extend,
    Modify,
    Legalize,
    Evaluate,
}

pub const REGISTRY: [Tool; 5] = [Tool::Generate, Tool::Extend, Tool::Modify, Tool::Legalize, Tool::Evaluate];

impl Tool {
    /// Name used in run manifests.
    pub fn action_name(self) -> &'static str {
        match self {
            Tool::Generate => "Random_Topology_Generation",
            Tool::Extend => "Topology_Extension",
            Tool::Modify => "Topology_Modification",
            Tool::Legalize => "Topology_Legalization",
            Tool::Evaluate => "Evaluation",
        }
    }
}

/// Repair budget for failed legalizations of one pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Regenerate the reported violation region, same style, new seed.
    pub modifications: usize,
    /// Start the pattern over from new initial noise.
    pub regenerations: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            modifications: 2,
            regenerations: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "lowercase")]
pub enum Task {
    /// `count` window-sized topologies.
    Generate { count: usize, rows: usize, cols: usize, style: String },
    Extend { plan: ExtensionPlan },
    Legalize { extent: [i64; 2], retry: RetryPolicy, drop_allowed: bool },
    Evaluate,
}

impl Task {
    pub fn tool(&self) -> Tool {
        match self {
            Task::Generate { .. } => Tool::Generate,
            Task::Extend { .. } => Tool::Extend,
            Task::Legalize { .. } => Tool::Legalize,
            Task::Evaluate => Tool::Evaluate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: usize,
    #[serde(flatten)]
    pub task: Task,
    pub depends_on: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub requirement: RequirementList,
    pub nodes: Vec<TaskNode>,
}

impl TaskGraph {
    /// Nodes are listed in dependency order; edges point backwards only.
    pub fn validate(&self) -> Result<(), AgentError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(AgentError::Plan(format!("node {i} has id {}", n.id)));
            }
            if n.depends_on.iter().any(|&d| d >= i) {
                return Err(AgentError::Plan(format!("node {i} depends on a later node")));
            }
            if !REGISTRY.contains(&n.task.tool()) {
                return Err(AgentError::Plan(format!("node {i} uses an unregistered tool")));
            }
        }
        Ok(())
    }

    pub fn extension(&self) -> Option<&ExtensionPlan> {
        self.nodes.iter().find_map(|n| match &n.task {
            Task::Extend { plan } => Some(plan),
            _ => None,
        })
    }
}

/// Model window and out-painting stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanContext {
    pub window: usize,
    pub stride: usize,
}

/// generate → [extend →] legalize → evaluate.
pub fn plan(req: &RequirementList, ctx: PlanContext, retry: RetryPolicy) -> Result<TaskGraph, AgentError> {
    let [rows, cols] = req.topology_size;
    let l = ctx.window;
    if rows < l || cols < l {
        return Err(AgentError::Plan(format!(
            "topology size {rows}x{cols} is below the {l}x{l} model window"
        )));
    }
    let retry = RetryPolicy {
        modifications: if req.modification_allowed { retry.modifications } else { 0 },
        ..retry
    };
    let mut nodes = vec![TaskNode {
        id: 0,
        task: Task::Generate {
            count: req.count,
            rows: l,
            cols: l,
            style: req.style.clone(),
        },
        depends_on: vec![],
    }];
    if rows > l || cols > l {
        let ext = plan_extension([l, l], [cols, rows], l, ctx.stride, req.extension_method)
            .map_err(|e| AgentError::Plan(e.to_string()))?;
        nodes.push(TaskNode {
            id: 1,
            task: Task::Extend { plan: ext },
            depends_on: vec![0],
        });
    }
    let prev = nodes.len() - 1;
    nodes.push(TaskNode {
        id: prev + 1,
        task: Task::Legalize {
            extent: req.physical_size,
            retry,
            drop_allowed: req.drop_allowed,
        },
        depends_on: vec![prev],
    });
    nodes.push(TaskNode {
        id: prev + 2,
        task: Task::Evaluate,
        depends_on: vec![prev + 1],
    });
    let graph = TaskGraph {
        requirement: req.clone(),
        nodes,
    };
    graph.validate()?;
    Ok(graph)
}
