// SPDX-License-Identifier: Apache-2.0

//! Output directories and run manifests.
//!
//! Every subcommand that writes files owns one output directory holding its
//! artifacts plus `run.json`. Layout version 1:
//!
//! | command  | artifacts                                             |
//! |----------|-------------------------------------------------------|
//! | datagen  | `NNNNN.topo`, `NNNNN.geom`, `manifest.json`           |
//! | train    | `model.bin`, `model.bin.json`, `checkpoint-N.bin`     |
//! | sample   | `NNNNN.topo`                                          |
//! | extend   | `NNNNN.topo`, `plan.json`                             |
//! | modify   | `modified.topo`                                       |
//! | legalize | `pattern.geom`, `pattern.json` or `violations.json`   |
//! | agent    | `session-NNN/` with `manifest.jsonl` and artifacts    |

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Module(String),
    #[error("{message}\n{report}")]
    Violations { message: String, report: String },
    #[error("quota missed: {0}")]
    Quota(String),
}

pub fn module(e: impl std::fmt::Display) -> CliError {
    CliError::Module(e.to_string())
}

pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io(path))
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io(path))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
pub fn prepare(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let empty = std::fs::read_dir(dir).map_err(io(dir))?.next().is_none();
        if !empty {
            if !force {
                return Err(CliError::Usage(format!(
                    "{} exists and is not empty; pass --force to replace it",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir).map_err(io(dir))?;
        }
    }
    std::fs::create_dir_all(dir).map_err(io(dir))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub layout_version: u32,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub records: Vec<Value>,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            command: command.to_string(),
            seed,
            config,
            records: Vec::new(),
            status: "ok".into(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        write(
            &dir.join("run.json"),
            &serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }
}
