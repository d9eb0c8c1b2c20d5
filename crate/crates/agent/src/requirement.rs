// SPDX-License-Identifier: Apache-2.0

//! The requirement-list template and its validation.

use layoutgen::editing::ExtensionMethod;
use serde::{Deserialize, Serialize};

use crate::AgentError;

/// One fully specified sub-task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequirementList {
    /// `[rows, cols]` of the topology matrix.
    #[serde(rename = "Topology Size")]
    pub topology_size: [usize; 2],
    /// `[width, height]` in nm.
    #[serde(rename = "Physical Size")]
    pub physical_size: [i64; 2],
    #[serde(rename = "Style")]
    pub style: String,
    #[serde(rename = "Count")]
    pub count: usize,
    #[serde(rename = "Extension Method")]
    pub extension_method: ExtensionMethod,
    #[serde(rename = "Drop Allowed")]
    pub drop_allowed: bool,
    /// Seconds; `None` means unlimited.
    #[serde(rename = "Time Limitation")]
    pub time_limit: Option<f64>,
    #[serde(rename = "Seed")]
    pub seed: Option<u64>,
    #[serde(rename = "Modification Allowed")]
    pub modification_allowed: bool,
}

/// A requirement list as returned by the client, before defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementDraft {
    #[serde(rename = "Topology Size")]
    pub topology_size: Option<[usize; 2]>,
    #[serde(rename = "Physical Size")]
    pub physical_size: Option<[i64; 2]>,
    #[serde(rename = "Style")]
    pub style: Option<String>,
    #[serde(rename = "Count")]
    pub count: Option<usize>,
    #[serde(rename = "Extension Method", default, deserialize_with = "method_any_case")]
    pub extension_method: Option<ExtensionMethod>,
    #[serde(rename = "Drop Allowed", default)]
    pub drop_allowed: Option<bool>,
    #[serde(rename = "Time Limitation", default)]
    pub time_limit: Option<f64>,
    #[serde(rename = "Seed", default)]
    pub seed: Option<u64>,
    #[serde(rename = "Modification Allowed", default)]
    pub modification_allowed: Option<bool>,
}

fn method_any_case<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<ExtensionMethod>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

pub const DEFAULT_EXTENSION_METHOD: ExtensionMethod = ExtensionMethod::Out;
pub const DEFAULT_DROP_ALLOWED: bool = true;
pub const DEFAULT_MODIFICATION_ALLOWED: bool = true;

impl RequirementDraft {
    /// Checks the basic part and fills the advanced part. `method` is the
    /// extension method to use when the draft leaves it unset.
    pub fn complete(self, styles: &[String], method: ExtensionMethod) -> Result<RequirementList, AgentError> {
        let missing = |f: &str| AgentError::Requirement(format!("missing basic field {f:?}"));
        let topology_size = self.topology_size.ok_or_else(|| missing("Topology Size"))?;
        let physical_size = self.physical_size.ok_or_else(|| missing("Physical Size"))?;
        let style = self.style.ok_or_else(|| missing("Style"))?;
        let count = self.count.ok_or_else(|| missing("Count"))?;
        if topology_size.contains(&0) || physical_size.iter().any(|&v| v <= 0) || count == 0 {
            return Err(AgentError::Requirement("basic fields must be positive".into()));
        }
        if !styles.contains(&style) {
            return Err(AgentError::Requirement(format!("unknown style {style:?}; known: {styles:?}")));
        }
        if let Some(t) = self.time_limit {
            if !(t > 0.0) {
                return Err(AgentError::Requirement("time limitation must be positive".into()));
            }
        }
        Ok(RequirementList {
            topology_size,
            physical_size,
            style,
            count,
            extension_method: self.extension_method.unwrap_or(method),
            drop_allowed: self.drop_allowed.unwrap_or(DEFAULT_DROP_ALLOWED),
            time_limit: self.time_limit,
            seed: self.seed,
            modification_allowed: self.modification_allowed.unwrap_or(DEFAULT_MODIFICATION_ALLOWED),
        })
    }
}

/// The template text sent to the client.
pub fn template(styles: &[String]) -> String {
    format!(
        "Fill one requirement list per sub-task and reply with only a JSON array of objects.\n\
         Basic part (required):\n\
         - \"Topology Size\": [rows, cols] in cells\n\
         - \"Physical Size\": [width, height] in nm\n\
         - \"Style\": one of {styles:?}\n\
         - \"Count\": number of patterns\n\
         Advanced part (optional):\n\
         - \"Extension Method\": \"out\" or \"in\" (Default: Out)\n\
         - \"Drop Allowed\": true or false (Default: True)\n\
         - \"Time Limitation\": seconds or null (Default: None)\n\
         - \"Seed\": integer or null (Default: None)\n\
         - \"Modification Allowed\": true or false (Default: True)"
    )
}

/// Parses a client reply: a JSON array of drafts, optionally wrapped in
/// prose or a code fence.
pub fn parse_drafts(reply: &str) -> Result<Vec<RequirementDraft>, AgentError> {
    let start = reply.find('[');
    let end = reply.rfind(']');
    let body = match (start, end) {
        (Some(s), Some(e)) if s < e => &reply[s..=e],
        _ => return Err(AgentError::Requirement("reply holds no JSON array".into())),
    };
    let drafts: Vec<RequirementDraft> =
        serde_json::from_str(body).map_err(|e| AgentError::Requirement(format!("invalid requirement JSON: {e}")))?;
    if drafts.is_empty() {
        return Err(AgentError::Requirement("no requirement lists in reply".into()));
    }
    Ok(drafts)
}
