// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::io::Write;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layoutgen"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    model: PathBuf,
}

/// A small corpus and a briefly trained 32-cell model, shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        ok(&["datagen", "--out", s(&corpus), "--count", "12", "--seed", "3"]);
        let train = dir.path().join("train");
        ok(&[
            "train", "--corpus", s(&corpus), "--out", s(&train), "--seed", "1", "--iterations", "4",
            "--channels", "4", "--dilations", "1,2", "--embed", "4", "--time-features", "4", "--steps", "4",
            "--beta1", "0.05", "--beta-k", "0.5", "--batch-size", "4", "--learning-rate", "0.003",
        ]);
        Fixture {
            corpus,
            model: train.join("model.bin"),
            _dir: dir,
        }
    })
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn evaluate_on_corpus_output_is_fully_legal() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let out = ok(&["evaluate", "--input", s(&f.corpus), "--report", s(&report)]);
    assert!(out.contains("100.00%"), "{out}");
    let r = json(&report);
    assert_eq!(r["legality"], 1.0);
    assert_eq!(r["patterns"], 24);
}

#[test]
fn sample_is_seed_deterministic() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "sample", "--checkpoint", s(&f.model), "--count", "100", "--style", "A", "--seed", "7", "--out", s(d),
        ]);
    }
    let (x, y) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(x.len(), 101);
    assert_eq!(x, y);
    // parallelism does not change the output
    let c = tmp.path().join("c");
    ok(&[
        "--jobs", "3", "sample", "--checkpoint", s(&f.model), "--count", "100", "--style", "A", "--seed", "7",
        "--out", s(&c),
    ]);
    assert_eq!(dir_bytes(&c), x);
    let d = tmp.path().join("d");
    ok(&["sample", "--checkpoint", s(&f.model), "--count", "100", "--style", "A", "--seed", "8", "--out", s(&d)]);
    assert_ne!(dir_bytes(&d), x);
}

#[test]
fn in_painting_256_with_window_128_records_nine_sampler_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus128");
    ok(&["datagen", "--out", s(&corpus), "--count", "2", "--styles", "A", "--window", "128", "--seed", "1"]);
    let train = tmp.path().join("train128");
    ok(&[
        "train", "--corpus", s(&corpus), "--out", s(&train), "--seed", "1", "--iterations", "1", "--channels", "2",
        "--dilations", "1", "--embed", "2", "--time-features", "2", "--steps", "2", "--batch-size", "2",
    ]);
    let out = tmp.path().join("ext");
    ok(&[
        "extend", "--checkpoint", s(&train.join("model.bin")), "--method", "in", "--target", "256", "--window", "128",
        "--seed", "5", "--out", s(&out),
    ]);
    let m = json(&out.join("run.json"));
    assert_eq!(m["config"]["windows"], 9);
    assert_eq!(m["records"][0]["sampler_calls"], 9);
    assert_eq!(m["records"][0]["windows"].as_array().unwrap().len(), 9);
    let t = std::fs::read_to_string(out.join("00000.topo")).unwrap();
    let t = layoutgen::TopologyMatrix::from_text(&t).unwrap();
    assert_eq!((t.rows(), t.cols()), (256, 256));
    let plan = json(&out.join("plan.json"));
    assert_eq!(plan["placements"].as_array().unwrap().len(), 9);
}

#[test]
fn output_directories_need_force_to_overwrite() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let args = ["sample", "--checkpoint", s(&f.model), "--count", "2", "--seed", "1", "--out", s(&out)];
    ok(&args);
    let again = run(&args);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!run(&["sample"]).status.success());
    assert!(!run(&["frobnicate"]).status.success());
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    // generation subcommands need a seed
    let out = run(&["sample", "--checkpoint", s(&f.model), "--count", "2", "--out", s(tmp.path())]);
    assert!(!out.status.success());
    let out = run(&[
        "sample", "--checkpoint", s(&f.model), "--count", "2", "--seed", "1", "--style", "Z", "--out",
        s(&tmp.path().join("z")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn legalize_and_check_roundtrip() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let topo = f.corpus.join("00000.topo");
    let out = tmp.path().join("leg");
    ok(&["legalize", "--input", s(&topo), "--extent", "2048", "--out", s(&out)]);
    let report = ok(&["check", "--pattern", s(&out.join("pattern.json"))]);
    assert_eq!(serde_json::from_str::<Value>(&report).unwrap()["violations"], Value::Array(vec![]));
    ok(&["check", "--topology", s(&topo), "--geometry", s(&f.corpus.join("00000.geom"))]);

    // far too small an extent fails with a violation report on disk
    let bad = tmp.path().join("bad");
    let r = run(&["legalize", "--input", s(&topo), "--extent", "40", "--out", s(&bad)]);
    assert!(!r.status.success());
    let v = json(&bad.join("violations.json"));
    assert!(!v["violations"].as_array().unwrap().is_empty());
    assert!(String::from_utf8_lossy(&r.stderr).contains("violation"));
}

#[test]
fn evaluate_legalizes_bare_topologies() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    ok(&["sample", "--checkpoint", s(&f.model), "--count", "5", "--seed", "2", "--out", s(&out)]);
    assert!(!run(&["evaluate", "--input", s(&out)]).status.success());
    let report = tmp.path().join("r.json");
    ok(&["evaluate", "--input", s(&out), "--extent", "2048", "--report", s(&report)]);
    assert_eq!(json(&report)["patterns"], 5);
}

#[test]
fn modify_keeps_cells_outside_the_box() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let topo = f.corpus.join("00001.topo");
    let out = tmp.path().join("m");
    ok(&[
        "modify", "--checkpoint", s(&f.model), "--input", s(&topo), "--box", "4,4,11,11", "--seed", "9", "--out",
        s(&out),
    ]);
    let read = |p: &Path| layoutgen::TopologyMatrix::from_text(&std::fs::read_to_string(p).unwrap()).unwrap();
    let (a, b) = (read(&topo), read(&out.join("modified.topo")));
    for r in 0..32 {
        for c in 0..32 {
            if !((4..=11).contains(&r) && (4..=11).contains(&c)) {
                assert_eq!(a.get(r, c), b.get(r, c), "({r}, {c})");
            }
        }
    }
}

fn agent_session(script: &str, dir: &Path, extra: &[&str], input: &str) -> Output {
    let f = fixture();
    let sp = dir.join("script.json");
    std::fs::write(&sp, script).unwrap();
    let out = dir.join("agent");
    let mut args = vec![
        "agent", "--checkpoint", s(&f.model), "--mock-script", s(&sp), "--seed", "11", "--out", s(&out),
    ];
    args.extend_from_slice(extra);
    let mut child = bin()
        .args(&args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn agent_repl_with_mock_script_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let script = r#"{"default": "[{\"Topology Size\": [32, 32], \"Physical Size\": [2048, 2048], \"Style\": \"A\", \"Count\": 2}]"}"#;
    let docs = tmp.path().join("docs.json");
    let out = agent_session(script, tmp.path(), &["--docs", s(&docs)], "two style A patterns\n:quit\n");
    let stdout = String::from_utf8_lossy(&out.stdout);
    // a barely trained model may need repairs, but the actions stream out
    assert!(stdout.contains("Random_Topology_Generation"), "{stdout}");
    assert!(stdout.contains("Evaluation"), "{stdout}");
    let manifest = tmp.path().join("agent/session-001/manifest.jsonl");
    assert!(manifest.is_file());
    assert!(docs.is_file());

    let sp = tmp.path().join("script.json");
    let again = tmp.path().join("again");
    let f = fixture();
    ok(&[
        "agent", "--checkpoint", s(&f.model), "--mock-script", s(&sp), "--seed", "11", "--out", s(&again),
        "--replay", s(&manifest),
    ]);
}

#[test]
fn agent_exit_status_reflects_missed_quota() {
    let tmp = tempfile::tempdir().unwrap();
    // 40 nm cannot hold 32 cells, so nothing ever legalizes
    let script = r#"{"default": "[{\"Topology Size\": [32, 32], \"Physical Size\": [40, 40], \"Style\": \"B\", \"Count\": 1}]"}"#;
    let out = agent_session(script, tmp.path(), &["--modifications", "0", "--regenerations", "0"], "one pattern\n");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quota"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("shortfall"), "{stdout}");
}
