// SPDX-License-Identifier: Apache-2.0

//! Documentation store: recorded extension statistics per size and style,
//! used to pick a default extension method and as prompt context.

use std::path::Path;

use layoutgen::editing::ExtensionMethod;
use layoutgen::metrics::LibraryReport;
use serde::{Deserialize, Serialize};

use crate::requirement::DEFAULT_EXTENSION_METHOD;
use crate::AgentError;

pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    /// `[rows, cols]` of the extended topologies.
    pub size: [usize; 2],
    pub style: String,
    pub method: ExtensionMethod,
    pub runs: usize,
    pub patterns: usize,
    pub legal: usize,
    /// Diversity of the most recent evaluated run.
    pub diversity: f64,
}

impl MethodStats {
    pub fn legality(&self) -> f64 {
        if self.patterns == 0 {
            0.0
        } else {
            self.legal as f64 / self.patterns as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentationStore {
    pub version: u32,
    #[serde(default)]
    pub entries: Vec<MethodStats>,
}

impl Default for DocumentationStore {
    fn default() -> Self {
        Self {
            version: STORE_VERSION,
            entries: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub method: ExtensionMethod,
    /// Recorded statistics for every method at this size and style.
    pub stats: Vec<MethodStats>,
    /// False when nothing was recorded and the template default applies.
    pub from_table: bool,
}

impl DocumentationStore {
    /// The store shipped with the crate.
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../data/documentation.json")).expect("bundled store parses")
    }

    /// Loads a store; a missing file is an empty store.
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| AgentError::Docs(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(AgentError::Docs(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let text = serde_json::to_string_pretty(self).expect("store serializes");
        std::fs::write(path, text).map_err(|e| AgentError::Docs(format!("{}: {e}", path.display())))
    }

    /// Highest recorded legality wins; ties and empty tables give "out".
    pub fn recommend(&self, size: [usize; 2], style: &str) -> Recommendation {
        let stats: Vec<MethodStats> = self
            .entries
            .iter()
            .filter(|e| e.size == size && e.style == style && e.patterns > 0)
            .cloned()
            .collect();
        let method = stats
            .iter()
            .fold(None::<&MethodStats>, |best, s| match best {
                Some(b) if b.legality() > s.legality() => Some(b),
                Some(b) if b.legality() == s.legality() && b.method == DEFAULT_EXTENSION_METHOD => Some(b),
                _ => Some(s),
            })
            .map_or(DEFAULT_EXTENSION_METHOD, |s| s.method);
        Recommendation {
            method,
            from_table: !stats.is_empty(),
            stats,
        }
    }

    /// Adds an evaluated run.
    pub fn record(&mut self, size: [usize; 2], style: &str, method: ExtensionMethod, report: &LibraryReport) {
        let pos = self
            .entries
            .iter()
            .position(|e| e.size == size && e.style == style && e.method == method);
        let e = match pos {
            Some(i) => &mut self.entries[i],
            None => {
                self.entries.push(MethodStats {
                    size,
                    style: style.to_string(),
                    method,
                    runs: 0,
                    patterns: 0,
                    legal: 0,
                    diversity: 0.0,
                });
                self.entries.last_mut().expect("just pushed")
            }
        };
        e.runs += 1;
        e.patterns += report.patterns;
        e.legal += report.legal;
        e.diversity = report.diversity;
    }

    /// Plain-text summary for prompts.
    pub fn context(&self) -> String {
        if self.entries.is_empty() {
            return "No extension statistics recorded yet; the default method is out-painting.".into();
        }
        let mut out = String::from("Recorded extension statistics (size, style, method: legality, diversity):\n");
        for e in &self.entries {
            out.push_str(&format!(
                "- {}x{}, {}, {:?}: {:.3} over {} patterns, H {:.3}\n",
                e.size[0],
                e.size[1],
                e.style,
                e.method,
                e.legality(),
                e.patterns,
                e.diversity
            ));
        }
        out
    }
}
