// SPDX-License-Identifier: Apache-2.0

//! Runs a task graph against a toolbox, repairing failed legalizations and
//! logging every action to a JSON-lines manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use layoutgen::diffusion::sample;
use layoutgen::editing::{self, extend, EditMask, ExtensionPlan, ExtensionRun};
use layoutgen::metrics::{complexity, ComplexityPair, LibraryReport};
use layoutgen::seed::derive_seed;
use layoutgen::{
    decode, legalize, CellBox, Denoiser, DesignRules, GeometryVectors, NoiseSchedule, PhysicalExtent, StyleCondition,
    TopologyMatrix, ViolationReport,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::docs::DocumentationStore;
use crate::plan::{RetryPolicy, Task, TaskGraph, Tool};
use crate::AgentError;

/// The operations the executor calls. Implementations must be pure
/// functions of their arguments so runs replay exactly.
pub trait Toolbox {
    /// Side length of generated topologies.
    fn window(&self) -> usize;
    fn generate(&self, style: &str, seed: u64) -> Result<TopologyMatrix, AgentError>;
    fn extend(
        &self,
        start: &TopologyMatrix,
        plan: &ExtensionPlan,
        style: &str,
        seed: u64,
    ) -> Result<ExtensionRun, AgentError>;
    /// Regenerates `region`, keeping everything else.
    fn modify(&self, topology: &TopologyMatrix, region: CellBox, style: &str, seed: u64)
        -> Result<TopologyMatrix, AgentError>;
    fn legalize(&self, topology: &TopologyMatrix, extent: PhysicalExtent) -> Result<GeometryVectors, ViolationReport>;
}

/// Toolbox backed by a trained denoiser.
pub struct ModelToolbox<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub window: usize,
    pub rules: DesignRules,
}

fn tool_err(e: impl std::fmt::Display) -> AgentError {
    AgentError::Tool(e.to_string())
}

/// Start of a `window`-long span covering `[lo, hi]` as centrally as the
/// canvas allows.
fn window_start(lo: usize, hi: usize, window: usize, len: usize) -> usize {
    if len <= window {
        return 0;
    }
    let centre = (lo + hi) / 2;
    centre.saturating_sub(window / 2).min(len - window)
}

impl Toolbox for ModelToolbox<'_> {
    fn window(&self) -> usize {
        self.window
    }

    fn generate(&self, style: &str, seed: u64) -> Result<TopologyMatrix, AgentError> {
        sample(self.window, self.window, &StyleCondition::new(style), self.denoiser, self.schedule, seed).map_err(tool_err)
    }

    fn extend(
        &self,
        start: &TopologyMatrix,
        plan: &ExtensionPlan,
        style: &str,
        seed: u64,
    ) -> Result<ExtensionRun, AgentError> {
        extend(Some(start), plan, &StyleCondition::new(style), self.denoiser, self.schedule, seed).map_err(tool_err)
    }

    fn modify(
        &self,
        topology: &TopologyMatrix,
        region: CellBox,
        style: &str,
        seed: u64,
    ) -> Result<TopologyMatrix, AgentError> {
        let (rows, cols) = (topology.rows(), topology.cols());
        if region.bottom >= rows || region.right >= cols || region.upper > region.bottom || region.left > region.right {
            return Err(AgentError::Tool(format!("region {region:?} is outside the {rows}x{cols} topology")));
        }
        let (h, w) = (rows.min(self.window), cols.min(self.window));
        let r0 = window_start(region.upper, region.bottom, self.window, rows);
        let c0 = window_start(region.left, region.right, self.window, cols);
        let local = CellBox {
            upper: region.upper.max(r0) - r0,
            left: region.left.max(c0) - c0,
            bottom: region.bottom.min(r0 + h - 1) - r0,
            right: region.right.min(c0 + w - 1) - c0,
        };
        let known = topology.window(r0, c0, h, w);
        let mask = EditMask::regenerate_box(h, w, local).map_err(tool_err)?;
        let out = editing::modify(&known, &mask, &StyleCondition::new(style), self.denoiser, self.schedule, seed)
            .map_err(tool_err)?;
        let mut t = topology.clone();
        t.paste(r0, c0, &out);
        Ok(t)
    }

    fn legalize(&self, topology: &TopologyMatrix, extent: PhysicalExtent) -> Result<GeometryVectors, ViolationReport> {
        legalize(topology, extent, &self.rules)
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub node: String,
    pub tool: String,
    pub args: serde_json::Value,
    pub seed: Option<u64>,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<ViolationReport>,
}

pub const SESSION: &str = "Session";
pub const REQUIREMENT_FORMATTING: &str = "Requirement_Formatting";
pub const PATTERN_STATUS: &str = "Pattern_Status";

type Observer = Box<dyn FnMut(&ManifestRecord)>;

/// Serialized writer for manifest records, optionally mirrored to a file
/// and to an observer.
#[derive(Default)]
pub struct Manifest {
    lines: Vec<String>,
    file: Option<BufWriter<File>>,
    observer: Option<Observer>,
}

impl Manifest {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn create(path: &Path) -> Result<Self, AgentError> {
        let f = File::create(path).map_err(|e| AgentError::Manifest(format!("{}: {e}", path.display())))?;
        Ok(Self {
            file: Some(BufWriter::new(f)),
            ..Self::default()
        })
    }

    pub fn with_observer(mut self, f: impl FnMut(&ManifestRecord) + 'static) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn push(&mut self, record: ManifestRecord) -> Result<(), AgentError> {
        let line = serde_json::to_string(&record).expect("record serializes");
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| AgentError::Manifest(e.to_string()))?;
        }
        if let Some(obs) = &mut self.observer {
            obs(&record);
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn records(&self) -> Vec<ManifestRecord> {
        self.lines
            .iter()
            .map(|l| serde_json::from_str(l).expect("own lines parse"))
            .collect()
    }

    /// Reads a manifest file's lines.
    pub fn read(path: &Path) -> Result<Vec<String>, AgentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AgentError::Manifest(format!("{}: {e}", path.display())))?;
        Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPolicy {
    pub retry: RetryPolicy,
    /// Give up on the quota after `count * attempt_factor` patterns.
    pub attempt_factor: usize,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            attempt_factor: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternStatus {
    Legal,
    Dropped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub label: String,
    pub requested: usize,
    pub produced: usize,
    pub dropped: usize,
    pub failed: usize,
    pub shortfall: bool,
    pub report: LibraryReport,
    /// Run-relative paths of the legal patterns, in pattern order.
    pub outputs: Vec<String>,
}

/// Everything `execute` needs besides the graph.
pub struct Executor<'a> {
    pub toolbox: &'a dyn Toolbox,
    pub docs: &'a mut DocumentationStore,
    pub policy: ExecutionPolicy,
    pub run_dir: &'a Path,
    pub manifest: &'a mut Manifest,
}

struct PatternOutcome {
    status: PatternStatus,
    output: Option<String>,
    pair: Option<ComplexityPair>,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

fn bbox_args(b: CellBox) -> serde_json::Value {
    json!({ "upper": b.upper, "left": b.left, "bottom": b.bottom, "right": b.right })
}

impl Executor<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn write(&self, rel: &str, text: &str) -> Result<(), AgentError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| AgentError::Manifest(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(&p, text).map_err(|e| AgentError::Manifest(format!("{}: {e}", p.display())))
    }

    fn log(
        &mut self,
        node: &str,
        tool: &str,
        args: serde_json::Value,
        seed: Option<u64>,
        outcome: &str,
        violation: Option<ViolationReport>,
    ) -> Result<(), AgentError> {
        self.manifest.push(ManifestRecord {
            node: node.to_string(),
            tool: tool.to_string(),
            args,
            seed,
            outcome: outcome.to_string(),
            violation,
        })
    }

    /// Runs one sub-task. `label` prefixes node ids and file names; `root`
    /// is the sub-task's root seed.
    pub fn execute(&mut self, graph: &TaskGraph, label: &str, root: u64) -> Result<SubtaskResult, AgentError> {
        graph.validate()?;
        let req = &graph.requirement;
        let node = |tool: Tool| -> String {
            let id = graph.nodes.iter().find(|n| n.task.tool() == tool).map_or(0, |n| n.id);
            format!("{label}.{id}")
        };
        let (extent, retry, drop_allowed) = graph
            .nodes
            .iter()
            .find_map(|n| match &n.task {
                Task::Legalize {
                    extent,
                    retry,
                    drop_allowed,
                } => Some((PhysicalExtent::new(extent[0], extent[1]), *retry, *drop_allowed)),
                _ => None,
            })
            .ok_or_else(|| AgentError::Plan("graph has no legalization node".into()))?;
        let ext = graph.extension().cloned();
        if !graph.nodes.iter().any(|n| matches!(n.task, Task::Evaluate)) {
            return Err(AgentError::Plan("graph has no evaluation node".into()));
        }
        let names = PatternNodes {
            generate: node(Tool::Generate),
            extend: node(Tool::Extend),
            legalize: node(Tool::Legalize),
        };

        let started = Instant::now();
        let limit = req.time_limit;
        let max_patterns = req.count.saturating_mul(self.policy.attempt_factor.max(1));
        let (mut produced, mut dropped, mut failed) = (0, 0, 0);
        let mut pairs = Vec::new();
        let mut outputs = Vec::new();
        let mut processed = 0;
        let mut shortfall = false;
        while produced + failed < req.count {
            let timed_out = limit.is_some_and(|t| started.elapsed().as_secs_f64() >= t);
            if timed_out || processed >= max_patterns {
                shortfall = true;
                break;
            }
            let pseed = derive_seed(root, "pattern", processed as u64);
            let out = self.pattern(&names, label, processed, pseed, req.style.as_str(), ext.as_ref(), extent, retry, drop_allowed)?;
            processed += 1;
            match out.status {
                PatternStatus::Legal => {
                    produced += 1;
                    pairs.extend(out.pair);
                    outputs.extend(out.output);
                }
                PatternStatus::Dropped => dropped += 1,
                PatternStatus::Failed => failed += 1,
            }
        }
        shortfall |= produced < req.count;

        let report = LibraryReport::from_pairs(processed, &pairs);
        if let Some(plan) = &ext {
            self.docs.record(req.topology_size, &req.style, plan.method, &report);
        }
        self.log(
            &node(Tool::Evaluate),
            Tool::Evaluate.action_name(),
            json!({
                "requested": req.count,
                "patterns": report.patterns,
                "legal": report.legal,
                "legality": report.legality,
                "diversity": report.diversity,
                "dropped": dropped,
                "failed": failed,
                "shortfall": shortfall,
            }),
            None,
            if shortfall { "shortfall" } else { "ok" },
            None,
        )?;
        Ok(SubtaskResult {
            label: label.to_string(),
            requested: req.count,
            produced,
            dropped,
            failed,
            shortfall,
            report,
            outputs,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn pattern(
        &mut self,
        names: &PatternNodes,
        label: &str,
        index: usize,
        pseed: u64,
        style: &str,
        ext: Option<&ExtensionPlan>,
        extent: PhysicalExtent,
        retry: RetryPolicy,
        drop_allowed: bool,
    ) -> Result<PatternOutcome, AgentError> {
        let stem = format!("{label}_p{index:05}");
        let (mut regens, mut mods, mut attempts) = (0, 0, 0);
        'fresh: loop {
            let gseed = derive_seed(pseed, "generate", regens as u64);
            let mut topo = self.toolbox.generate(style, gseed)?;
            let mut current = rel(&["topologies", &format!("{stem}_g{regens}.topo")]);
            self.write(&current, &topo.to_text())?;
            self.log(
                &names.generate,
                Tool::Generate.action_name(),
                json!({ "pattern": index, "regeneration": regens, "style": style,
                        "rows": topo.rows(), "cols": topo.cols(), "output": current,
                        "checksum": topo.checksum() }),
                Some(gseed),
                "ok",
                None,
            )?;
            if let Some(plan) = ext {
                let eseed = derive_seed(pseed, "extend", regens as u64);
                let run = self.toolbox.extend(&topo, plan, style, eseed)?;
                let output = rel(&["topologies", &format!("{stem}_e{regens}.topo")]);
                self.write(&output, &run.topology.to_text())?;
                let window_seeds: Vec<u64> = run.windows.iter().map(|w| w.seed).collect();
                self.log(
                    &names.extend,
                    Tool::Extend.action_name(),
                    json!({ "pattern": index, "input": current, "output": output, "method": plan.method,
                            "width": plan.width, "height": plan.height, "window": plan.window,
                            "stride": plan.stride, "windows": plan.window_count(),
                            "sampler_calls": run.sampler_calls, "window_seeds": window_seeds,
                            "checksum": run.topology.checksum() }),
                    Some(eseed),
                    "ok",
                    None,
                )?;
                topo = run.topology;
                current = output;
            }
            loop {
                attempts += 1;
                match self.toolbox.legalize(&topo, extent) {
                    Ok(geom) => {
                        let pattern = decode(&topo, &geom).map_err(tool_err)?;
                        let pair = complexity(&pattern).map_err(tool_err)?;
                        let base = rel(&["patterns", &stem]);
                        self.write(&format!("{base}.topo"), &topo.to_text())?;
                        self.write(&format!("{base}.geom"), &geom.to_text())?;
                        self.write(&format!("{base}.json"), &pattern.to_json())?;
                        self.log(
                            &names.legalize,
                            Tool::Legalize.action_name(),
                            json!({ "pattern": index, "input": current, "extent": [extent.width, extent.height],
                                    "output": format!("{base}.geom"), "checksum": sha256_hex(&geom.to_text()) }),
                            None,
                            "ok",
                            None,
                        )?;
                        self.status(names, index, PatternStatus::Legal, attempts, mods, regens, Some(&base))?;
                        return Ok(PatternOutcome {
                            status: PatternStatus::Legal,
                            output: Some(format!("{base}.json")),
                            pair: Some(pair),
                        });
                    }
                    Err(report) => {
                        let region = report.violations.first().map(|v| v.bbox);
                        self.log(
                            &names.legalize,
                            Tool::Legalize.action_name(),
                            json!({ "pattern": index, "input": current, "extent": [extent.width, extent.height] }),
                            None,
                            "violation",
                            Some(report),
                        )?;
                        if let (Some(region), true) = (region, mods < retry.modifications) {
                            let mseed = derive_seed(pseed, "modify", mods as u64);
                            topo = self.toolbox.modify(&topo, region, style, mseed)?;
                            mods += 1;
                            let output = rel(&["topologies", &format!("{stem}_m{mods}.topo")]);
                            self.write(&output, &topo.to_text())?;
                            let mut args = bbox_args(region);
                            let obj = args.as_object_mut().expect("object");
                            obj.insert("pattern".into(), json!(index));
                            obj.insert("topology_path".into(), json!(current));
                            obj.insert("output".into(), json!(output));
                            obj.insert("style".into(), json!(style));
                            obj.insert("checksum".into(), json!(topo.checksum()));
                            self.log(&names.legalize, Tool::Modify.action_name(), args, Some(mseed), "ok", None)?;
                            current = output;
                            continue;
                        }
                        if regens < retry.regenerations {
                            regens += 1;
                            continue 'fresh;
                        }
                        let status = if drop_allowed { PatternStatus::Dropped } else { PatternStatus::Failed };
                        self.status(names, index, status, attempts, mods, regens, None)?;
                        return Ok(PatternOutcome {
                            status,
                            output: None,
                            pair: None,
                        });
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn status(
        &mut self,
        names: &PatternNodes,
        index: usize,
        status: PatternStatus,
        attempts: usize,
        mods: usize,
        regens: usize,
        base: Option<&str>,
    ) -> Result<(), AgentError> {
        let outcome = serde_json::to_value(status).expect("status serializes");
        let mut args = json!({ "pattern": index, "legalizations": attempts, "modifications": mods, "regenerations": regens });
        if let Some(b) = base {
            args["output"] = json!(format!("{b}.json"));
        }
        self.log(&names.legalize, PATTERN_STATUS, args, None, outcome.as_str().expect("string"), None)
    }
}

struct PatternNodes {
    generate: String,
    extend: String,
    legalize: String,
}

/// Runs `graph` as sub-task `label` under `root`.
pub fn execute(graph: &TaskGraph, label: &str, root: u64, exec: &mut Executor<'_>) -> Result<SubtaskResult, AgentError> {
    exec.execute(graph, label, root)
}
