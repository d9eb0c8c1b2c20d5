// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use layoutgen::corpus::toy_rules;
use layoutgen::editing::{ExtensionPlan, ExtensionRun, WindowRecord};
use layoutgen::seed::derive_seed;
use layoutgen::{
    legalize, Axis, CellBox, GeometryVectors, PhysicalExtent, TopologyMatrix, Violation, ViolationKind,
    ViolationReport,
};
use layoutgen_agent::{AgentError, Toolbox};

/// 2x2 blocks on a 3-cell pitch, each present per a seed bit. Blocks never
/// touch, so every output legalizes at a generous extent.
pub fn blocks(rows: usize, cols: usize, seed: u64) -> TopologyMatrix {
    let mut t = TopologyMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            if r % 3 == 2 || c % 3 == 2 {
                continue;
            }
            let block = ((r / 3) * 1000 + c / 3) as u64;
            if derive_seed(seed, "block", block) & 1 == 1 {
                t.set(r, c, 1);
            }
        }
    }
    t
}

/// Cheap deterministic toolbox. Modification clears the region.
pub struct FakeToolbox {
    pub window: usize,
    pub calls: AtomicUsize,
}

impl FakeToolbox {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            calls: AtomicUsize::new(0),
        }
    }
}

impl Toolbox for FakeToolbox {
    fn window(&self) -> usize {
        self.window
    }

    fn generate(&self, _style: &str, seed: u64) -> Result<TopologyMatrix, AgentError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(blocks(self.window, self.window, seed))
    }

    fn extend(
        &self,
        start: &TopologyMatrix,
        plan: &ExtensionPlan,
        _style: &str,
        seed: u64,
    ) -> Result<ExtensionRun, AgentError> {
        let mut t = blocks(plan.height, plan.width, seed);
        // keep the seed's cells where the pitch lines up
        if start.rows() % 3 == 0 && start.cols() % 3 == 0 {
            t.paste(0, 0, start);
        }
        let windows = (0..plan.window_count())
            .map(|index| WindowRecord {
                index,
                seed: derive_seed(seed, "window", index as u64),
                sampled: index > 0,
            })
            .collect();
        Ok(ExtensionRun {
            topology: t,
            windows,
            sampler_calls: plan.window_count() - 1,
            peak_state_cells: plan.window * plan.window,
        })
    }

    fn modify(
        &self,
        topology: &TopologyMatrix,
        region: CellBox,
        _style: &str,
        _seed: u64,
    ) -> Result<TopologyMatrix, AgentError> {
        let mut t = topology.clone();
        for (r, c) in region.cells() {
            t.set(r, c, 0);
        }
        Ok(t)
    }

    fn legalize(&self, topology: &TopologyMatrix, extent: PhysicalExtent) -> Result<GeometryVectors, ViolationReport> {
        legalize(topology, extent, &toy_rules())
    }
}

/// Fails the first `failures` legalizations with a space violation at
/// `region`, then defers to the inner toolbox. A fresh instance behaves
/// identically, so replays match.
pub struct Faulty<T> {
    pub inner: T,
    pub region: CellBox,
    pub failures: usize,
    pub seen: AtomicUsize,
}

impl<T> Faulty<T> {
    pub fn new(inner: T, region: CellBox, failures: usize) -> Self {
        Self {
            inner,
            region,
            failures,
            seen: AtomicUsize::new(0),
        }
    }
}

pub fn injected_report(region: CellBox) -> ViolationReport {
    ViolationReport {
        violations: vec![Violation {
            kind: ViolationKind::Space,
            axis: Some(Axis::X),
            bbox: region,
            polygons: vec![0, 1],
            measured: 0.0,
            required: 48.0,
        }],
    }
}

impl<T: Toolbox> Toolbox for Faulty<T> {
    fn window(&self) -> usize {
        self.inner.window()
    }

    fn generate(&self, style: &str, seed: u64) -> Result<TopologyMatrix, AgentError> {
        self.inner.generate(style, seed)
    }

    fn extend(
        &self,
        start: &TopologyMatrix,
        plan: &ExtensionPlan,
        style: &str,
        seed: u64,
    ) -> Result<ExtensionRun, AgentError> {
        self.inner.extend(start, plan, style, seed)
    }

    fn modify(
        &self,
        topology: &TopologyMatrix,
        region: CellBox,
        style: &str,
        seed: u64,
    ) -> Result<TopologyMatrix, AgentError> {
        self.inner.modify(topology, region, style, seed)
    }

    fn legalize(&self, topology: &TopologyMatrix, extent: PhysicalExtent) -> Result<GeometryVectors, ViolationReport> {
        if self.seen.fetch_add(1, Ordering::Relaxed) < self.failures {
            return Err(injected_report(self.region));
        }
        self.inner.legalize(topology, extent)
    }
}

/// A two-part request in the style of the running example, and the
/// scripted reply splitting it into two sub-tasks.
pub const TWO_PART_REQUEST: &str = "I need 4 patterns of style A with topology size 24x24 and physical size \
    1536 nm by 1536 nm, and also 3 patterns of style B at 12x12 topology, 768 nm square, using in-painting.";

pub const TWO_PART_REPLY: &str = r#"Sub-task lists:
```json
[
  {"Topology Size": [24, 24], "Physical Size": [1536, 1536], "Style": "A", "Count": 4},
  {"Topology Size": [12, 12], "Physical Size": [768, 768], "Style": "B", "Count": 3, "Extension Method": "In"}
]
```"#;

pub fn styles() -> Vec<String> {
    vec!["A".into(), "B".into()]
}

/// Tool names of a manifest's records.
pub fn tools(lines: &[String]) -> Vec<String> {
    lines
        .iter()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["tool"].as_str().unwrap().to_string())
        .collect()
}
