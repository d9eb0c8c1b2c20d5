// SPDX-License-Identifier: Apache-2.0

mod common;

use std::path::Path;

use common::*;
use layoutgen::editing::ExtensionMethod;
use layoutgen::CellBox;
use layoutgen_agent::client::guard;
use layoutgen_agent::execute::{Executor, PATTERN_STATUS};
use layoutgen_agent::requirement::RequirementList;
use layoutgen_agent::{
    format_request, plan, replay, Agent, AgentConfig, AgentError, ChatClient, DocumentationStore, ExecutionPolicy,
    Manifest, ManifestRecord, MockClient, PlanContext, RetryPolicy, Toolbox,
};
use proptest::prelude::*;
use serde_json::Value;

const WINDOW: usize = 12;

fn config(seed: u64) -> AgentConfig {
    AgentConfig {
        styles: styles(),
        plan: PlanContext {
            window: WINDOW,
            stride: WINDOW / 2,
        },
        policy: ExecutionPolicy::default(),
        seed,
    }
}

fn requirement(count: usize, drop_allowed: bool) -> RequirementList {
    RequirementList {
        topology_size: [WINDOW, WINDOW],
        physical_size: [768, 768],
        style: "A".into(),
        count,
        extension_method: ExtensionMethod::Out,
        drop_allowed,
        time_limit: None,
        seed: Some(5),
        modification_allowed: true,
    }
}

fn run_graph(
    req: &RequirementList,
    toolbox: &dyn Toolbox,
    policy: ExecutionPolicy,
    dir: &Path,
) -> (layoutgen_agent::SubtaskResult, Vec<ManifestRecord>) {
    let graph = plan(req, config(0).plan, policy.retry).unwrap();
    let mut docs = DocumentationStore::default();
    let mut manifest = Manifest::in_memory();
    let mut exec = Executor {
        toolbox,
        docs: &mut docs,
        policy,
        run_dir: dir,
        manifest: &mut manifest,
    };
    let res = exec.execute(&graph, "1", 99).unwrap();
    (res, manifest.records())
}

fn of_tool<'a>(records: &'a [ManifestRecord], tool: &str) -> Vec<&'a ManifestRecord> {
    records.iter().filter(|r| r.tool == tool).collect()
}

#[test]
fn two_part_request_yields_two_lists() {
    let mut client = MockClient::new().on(TWO_PART_REQUEST, TWO_PART_REPLY);
    let lists = format_request(TWO_PART_REQUEST, &mut client, &styles(), &DocumentationStore::default()).unwrap();
    assert_eq!(lists.len(), 2);
    assert_eq!(lists[0].style, "A");
    assert_eq!(lists[0].extension_method, ExtensionMethod::Out);
    assert!(lists[0].drop_allowed && lists[0].modification_allowed);
    assert_eq!(lists[0].time_limit, None);
    assert_eq!((lists[1].topology_size, lists[1].count), ([12, 12], 3));
    assert_eq!(lists[1].extension_method, ExtensionMethod::In);
    assert_eq!(client.calls(), 1);
}

#[test]
fn unset_method_follows_documentation() {
    let mut docs = DocumentationStore::default();
    let report = |legal: usize| {
        let pairs: Vec<_> = (0..legal).map(|i| layoutgen::metrics::ComplexityPair { cx: i, cy: 1 }).collect();
        layoutgen::metrics::LibraryReport::from_pairs(10, &pairs)
    };
    docs.record([24, 24], "A", ExtensionMethod::Out, &report(2));
    docs.record([24, 24], "A", ExtensionMethod::In, &report(9));
    let mut client = MockClient::new().on(TWO_PART_REQUEST, TWO_PART_REPLY);
    let lists = format_request(TWO_PART_REQUEST, &mut client, &styles(), &docs).unwrap();
    assert_eq!(lists[0].extension_method, ExtensionMethod::In);
    // the statistics went out as prompt context
    assert!(client.transcript()[0].content.contains("24x24, A, In"));
}

#[test]
fn invalid_style_fails_after_three_reprompts() {
    let bad = r#"[{"Topology Size": [12, 12], "Physical Size": [768, 768], "Style": "Layer-10001", "Count": 2}]"#;
    let mut client = MockClient::new().otherwise(bad);
    let err = format_request("two patterns please", &mut client, &styles(), &DocumentationStore::default()).unwrap_err();
    match err {
        AgentError::Format { attempts, last_error } => {
            assert_eq!(attempts, 4);
            assert!(last_error.contains("unknown style"), "{last_error}");
        }
        other => panic!("{other}"),
    }
    assert_eq!(client.calls(), 4);
}

#[test]
fn clean_run_has_no_repair_actions() {
    let dir = tempfile::tempdir().unwrap();
    let tb = FakeToolbox::new(WINDOW);
    let (res, records) = run_graph(&requirement(5, true), &tb, ExecutionPolicy::default(), dir.path());
    assert_eq!((res.produced, res.dropped, res.failed, res.shortfall), (5, 0, 0, false));
    assert!(of_tool(&records, "Topology_Modification").is_empty());
    assert_eq!(of_tool(&records, "Random_Topology_Generation").len(), 5);
    assert!(records.iter().all(|r| r.violation.is_none()));
    assert_eq!(res.report.legality, 1.0);
    for out in &res.outputs {
        let text = std::fs::read_to_string(dir.path().join(out)).unwrap();
        layoutgen::LayoutPattern::from_json(&text).unwrap();
    }
}

#[test]
fn double_failure_triggers_modification_of_the_region() {
    let dir = tempfile::tempdir().unwrap();
    let region = CellBox {
        upper: 3,
        left: 4,
        bottom: 6,
        right: 8,
    };
    let tb = Faulty::new(FakeToolbox::new(WINDOW), region, 2);
    let (res, records) = run_graph(&requirement(1, true), &tb, ExecutionPolicy::default(), dir.path());
    assert_eq!(res.produced, 1);
    let mods = of_tool(&records, "Topology_Modification");
    assert_eq!(mods.len(), 2);
    for m in &mods {
        for (k, v) in [("upper", 3), ("left", 4), ("bottom", 6), ("right", 8)] {
            assert_eq!(m.args[k], v);
        }
        assert_eq!(m.args["style"], "A");
        assert!(m.args["topology_path"].as_str().unwrap().ends_with(".topo"));
        assert!(m.seed.is_some());
    }
    assert_ne!(mods[0].seed, mods[1].seed);
    let failed: Vec<_> = of_tool(&records, "Topology_Legalization")
        .into_iter()
        .filter(|r| r.outcome == "violation")
        .collect();
    assert_eq!(failed.len(), 2);
    assert_eq!(failed[0].violation.as_ref().unwrap().violations[0].bbox, region);
    // the modified topology on disk has the region cleared
    let path = dir.path().join(mods[1].args["output"].as_str().unwrap());
    let t = layoutgen::TopologyMatrix::from_text(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(region.cells().all(|(r, c)| t.get(r, c) == 0));
}

#[test]
fn unrepairable_pattern_fails_after_full_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(0, 0), usize::MAX);
    let (res, records) = run_graph(&requirement(1, false), &tb, ExecutionPolicy::default(), dir.path());
    assert_eq!((res.produced, res.failed, res.shortfall), (0, 1, true));
    let status = of_tool(&records, PATTERN_STATUS);
    assert_eq!(status.len(), 1);
    assert_eq!(status[0].outcome, "failed");
    assert_eq!(status[0].args["legalizations"], 4);
    assert_eq!(status[0].args["modifications"], 2);
    assert_eq!(status[0].args["regenerations"], 1);
    let eval = of_tool(&records, "Evaluation");
    assert_eq!(eval[0].outcome, "shortfall");
}

#[test]
fn dropped_patterns_are_replaced_until_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    // 2 patterns' worth of full ladders fail, then all succeed
    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(1, 1), 8);
    let (res, records) = run_graph(&requirement(3, true), &tb, ExecutionPolicy::default(), dir.path());
    assert_eq!((res.produced, res.dropped, res.shortfall), (3, 2, false));
    assert_eq!(res.report.patterns, 5);
    let statuses: Vec<_> = of_tool(&records, PATTERN_STATUS).iter().map(|r| r.outcome.clone()).collect();
    assert_eq!(statuses, ["dropped", "dropped", "legal", "legal", "legal"]);

    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(1, 1), usize::MAX);
    let (res, _) = run_graph(&requirement(2, true), &tb, ExecutionPolicy::default(), dir.path());
    assert_eq!((res.produced, res.dropped, res.shortfall), (0, 8, true));
}

#[test]
fn exhausted_time_limit_flags_shortfall() {
    let dir = tempfile::tempdir().unwrap();
    let mut req = requirement(3, true);
    req.time_limit = Some(1e-12);
    let (res, records) = run_graph(&req, &FakeToolbox::new(WINDOW), ExecutionPolicy::default(), dir.path());
    assert!(res.shortfall && res.produced < 3);
    assert_eq!(records.last().unwrap().args["shortfall"], true);
}

#[test]
fn modification_can_be_disallowed() {
    let dir = tempfile::tempdir().unwrap();
    let mut req = requirement(1, false);
    req.modification_allowed = false;
    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(0, 0), usize::MAX);
    let (_, records) = run_graph(&req, &tb, ExecutionPolicy::default(), dir.path());
    assert!(of_tool(&records, "Topology_Modification").is_empty());
    assert_eq!(of_tool(&records, PATTERN_STATUS)[0].args["legalizations"], 2);
}

/// Walks one pattern's actions and checks the ladder order.
fn check_ladder(records: &[ManifestRecord], retry: RetryPolicy, drop_allowed: bool) {
    let (mut mods, mut regens, mut legs) = (0, 0, 0);
    let mut current = None;
    for r in records {
        let pattern = r.args.get("pattern").and_then(Value::as_u64);
        if pattern.is_some() && pattern != current {
            current = pattern;
            (mods, regens, legs) = (0, 0, 0);
        }
        match r.tool.as_str() {
            "Topology_Modification" => {
                mods += 1;
                assert!(mods <= retry.modifications);
                assert_eq!(regens, 0, "modification after regeneration");
            }
            "Random_Topology_Generation" if r.args["regeneration"] != 0 => {
                assert_eq!(mods, retry.modifications, "regeneration before all modifications");
                regens += 1;
                assert!(regens <= retry.regenerations);
            }
            "Topology_Legalization" => legs += 1,
            PATTERN_STATUS if r.outcome != "legal" => {
                assert_eq!(r.outcome, if drop_allowed { "dropped" } else { "failed" });
                assert_eq!((mods, regens), (retry.modifications, retry.regenerations));
                assert_eq!(legs, 1 + retry.modifications + retry.regenerations);
            }
            _ => {}
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn repair_ladder_order(
        failures in 0usize..20,
        r1 in 0usize..4,
        r2 in 0usize..3,
        drop_allowed: bool,
        count in 1usize..4,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let policy = ExecutionPolicy { retry: RetryPolicy { modifications: r1, regenerations: r2 }, attempt_factor: 3 };
        let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(2, 2), failures);
        let (res, records) = run_graph(&requirement(count, drop_allowed), &tb, policy, dir.path());
        check_ladder(&records, policy.retry, drop_allowed);
        let per_pattern = 1 + r1 + r2;
        let bad = failures / per_pattern;
        if drop_allowed {
            prop_assert_eq!(res.dropped, bad.min(count * 3));
        } else {
            prop_assert_eq!(res.failed, bad.min(count));
        }
    }
}

fn run_session(dir: &Path, failures: usize) -> (Vec<String>, layoutgen_agent::SessionResult, MockClient) {
    let mut client = MockClient::new().on(TWO_PART_REQUEST, TWO_PART_REPLY);
    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(4, 4), failures);
    let mut docs = DocumentationStore::default();
    let mut manifest = Manifest::create(&dir.join("manifest.jsonl")).unwrap();
    let mut agent = Agent {
        client: &mut client,
        toolbox: &tb,
        docs: &mut docs,
        config: config(21),
    };
    let res = agent.run(TWO_PART_REQUEST, dir, &mut manifest).unwrap();
    (manifest.lines().to_vec(), res, client)
}

#[test]
fn full_session_replays_bit_exactly() {
    let a = tempfile::tempdir().unwrap();
    let (lines, res, _) = run_session(a.path(), 2);
    assert_eq!(res.requirements.len(), 2);
    assert!(res.quota_met());
    let t = tools(&lines);
    assert_eq!(t[0], "Session");
    assert_eq!(t[1], "Requirement_Formatting");
    assert!(t.contains(&"Topology_Extension".to_string()));
    assert!(t.contains(&"Topology_Modification".to_string()));

    let b = tempfile::tempdir().unwrap();
    let mut client = MockClient::new().on(TWO_PART_REQUEST, TWO_PART_REPLY);
    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(4, 4), 2);
    let again = replay(&a.path().join("manifest.jsonl"), &mut client, &tb, b.path()).unwrap();
    assert_eq!(again, res);
    for out in res.subtasks.iter().flat_map(|s| &s.outputs) {
        let x = std::fs::read(a.path().join(out)).unwrap();
        let y = std::fs::read(b.path().join(out)).unwrap();
        assert_eq!(x, y, "{out}");
    }

    // a different toolbox behaviour is caught
    let c = tempfile::tempdir().unwrap();
    let mut client = MockClient::new().on(TWO_PART_REQUEST, TWO_PART_REPLY);
    let tb = Faulty::new(FakeToolbox::new(WINDOW), CellBox::cell(4, 4), 3);
    let err = replay(&a.path().join("manifest.jsonl"), &mut client, &tb, c.path()).unwrap_err();
    assert!(matches!(err, AgentError::Replay { .. }), "{err}");
}

#[test]
fn extension_runs_update_documentation() {
    let dir = tempfile::tempdir().unwrap();
    let mut client = MockClient::new().on(TWO_PART_REQUEST, TWO_PART_REPLY);
    let tb = FakeToolbox::new(WINDOW);
    let mut docs = DocumentationStore::default();
    let mut manifest = Manifest::in_memory();
    let mut agent = Agent {
        client: &mut client,
        toolbox: &tb,
        docs: &mut docs,
        config: config(3),
    };
    agent.run(TWO_PART_REQUEST, dir.path(), &mut manifest).unwrap();
    let rec = docs.recommend([24, 24], "A");
    assert!(rec.from_table);
    assert_eq!(rec.stats[0].patterns, 4);
    assert_eq!(rec.stats[0].legality(), 1.0);
    // window-sized sub-task has no extension, so nothing recorded
    assert!(!docs.recommend([12, 12], "B").from_table);
}

#[test]
fn prompts_never_carry_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let (lines, _, client) = run_session(dir.path(), 3);
    assert!(!client.transcript().is_empty());
    for m in client.transcript() {
        guard(&m.content).unwrap();
    }
    // the manifest refers to topologies by path, never by content
    for l in &lines {
        guard(l).unwrap();
    }
}

#[test]
fn failing_formatting_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let mut client = MockClient::new().otherwise("sorry");
    let tb = FakeToolbox::new(WINDOW);
    let mut docs = DocumentationStore::default();
    let mut manifest = Manifest::in_memory();
    let mut agent = Agent {
        client: &mut client,
        toolbox: &tb,
        docs: &mut docs,
        config: config(3),
    };
    assert!(agent.run("make things", dir.path(), &mut manifest).is_err());
    let recs = manifest.records();
    assert_eq!(recs.len(), 2);
    assert!(recs[1].outcome.starts_with("error"));
}
