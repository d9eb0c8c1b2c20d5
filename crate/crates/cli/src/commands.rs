// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use layoutgen::corpus::{generate_corpus, generate_item, read_dataset, toy_rules, write_dataset, CorpusSpec, GeneratorParams};
use layoutgen::denoiser::checkpoint::{self, Sidecar, FORMAT_VERSION};
use layoutgen::denoiser::{train, DenoiserParameters, NetworkConfig, TrainError, TrainingConfig};
use layoutgen::diffusion::{item_seed, sample_batch};
use layoutgen::editing::{self, extend, plan_extension, EditMask};
use layoutgen::metrics::{complexity, evaluate_library, render_table, LibraryReport};
use layoutgen::seed::derive_seed;
use layoutgen::{
    check, decode, legalize, DesignRules, GeometryVectors, LayoutPattern, NoiseSchedule, PhysicalExtent,
    StyleCondition, TopologyMatrix,
};
use layoutgen_agent::execute::ManifestRecord;
use layoutgen_agent::{
    replay, Agent, AgentConfig, ChatClient, DocumentationStore, ExecutionPolicy, HttpClient, HttpConfig, Manifest,
    MockClient, MockScript, ModelToolbox, PlanContext, RetryPolicy, Toolbox,
};
use rayon::prelude::*;
use serde_json::json;

use crate::args::*;
use crate::output::{io, module, prepare, read, write, CliError, RunManifest};

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Datagen(a) => datagen(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Extend(a) => extend_cmd(a),
        Command::Modify(a) => modify(a),
        Command::Legalize(a) => legalize_cmd(a),
        Command::Check(a) => check_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Agent(a) => agent(a),
    }
}

fn rules(arg: &RulesArg) -> Result<DesignRules, CliError> {
    match &arg.rules {
        Some(p) => DesignRules::from_json(&read(p)?).map_err(module),
        None => Ok(toy_rules()),
    }
}

fn topology(path: &Path) -> Result<TopologyMatrix, CliError> {
    TopologyMatrix::from_text(&read(path)?).map_err(|e| CliError::Module(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<(DenoiserParameters, NoiseSchedule), CliError> {
    let (params, side) = checkpoint::load(path).map_err(module)?;
    let schedule = side
        .training
        .map(|t| t.schedule)
        .ok_or_else(|| CliError::Usage(format!("{}: sidecar has no training config, so no schedule", path.display())))?;
    Ok((params, schedule))
}

fn checked_style(params: &DenoiserParameters, style: &str) -> Result<StyleCondition, CliError> {
    if params.class_index(style).is_none() {
        return Err(CliError::Usage(format!(
            "style {style:?} is not one of {:?}",
            params.config().classes
        )));
    }
    Ok(StyleCondition::new(style))
}

fn datagen(a: DatagenArgs) -> Result<(), CliError> {
    prepare(&a.out.out, a.out.force)?;
    let rules = rules(&a.rules)?;
    let specs: Vec<CorpusSpec> = a
        .styles
        .iter()
        .enumerate()
        .map(|(i, style)| CorpusSpec {
            style: style.clone(),
            count: a.count,
            window: a.window,
            extent: a.extent,
            grid: a.grid,
            rules,
            params: GeneratorParams::for_style(style),
            seed: derive_seed(a.seed, "datagen", i as u64),
        })
        .collect();
    let mut items = Vec::new();
    for spec in &specs {
        // an empty run validates the spec
        generate_corpus(&CorpusSpec { count: 0, ..spec.clone() }).map_err(module)?;
        let batch = (0..spec.count)
            .into_par_iter()
            .map(|i| generate_item(spec, i))
            .collect::<Result<Vec<_>, _>>()
            .map_err(module)?;
        items.extend(batch);
    }
    let dataset = write_dataset(&a.out.out, &specs, &items).map_err(module)?;
    let mut run = RunManifest::new("datagen", Some(a.seed), json!({ "specs": specs }));
    run.records = dataset
        .items
        .iter()
        .map(|e| json!({ "style": e.style, "topology": e.topology, "topology_sha256": e.topology_sha256 }))
        .collect();
    run.save(&a.out.out)?;
    println!("wrote {} patterns to {}", items.len(), a.out.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let (_, items) = read_dataset(&a.corpus).map_err(module)?;
    let first = items
        .first()
        .ok_or_else(|| CliError::Usage(format!("{} holds no patterns", a.corpus.display())))?;
    let mut cfg: TrainingConfig = match &a.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(module)?,
        None => TrainingConfig::default(),
    };
    let mut net: NetworkConfig = match &a.network {
        Some(p) => serde_json::from_str(&read(p)?).map_err(module)?,
        None => NetworkConfig {
            window: first.topology.rows(),
            ..NetworkConfig::default()
        },
    };
    cfg.seed = a.seed;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(cfg.iterations, a.iterations);
    set!(cfg.learning_rate, a.learning_rate);
    set!(cfg.batch_size, a.batch_size);
    set!(cfg.lambda, a.lambda);
    set!(cfg.dropout, a.dropout);
    set!(cfg.checkpoint_every, a.checkpoint_every);
    if a.steps.is_some() || a.beta1.is_some() || a.beta_k.is_some() {
        let s = &cfg.schedule;
        let k = a.steps.unwrap_or(s.steps());
        let b1 = a.beta1.unwrap_or(s.betas()[0]);
        let bk = a.beta_k.unwrap_or(*s.betas().last().expect("non-empty schedule"));
        cfg.schedule = NoiseSchedule::linear(k, b1, bk).map_err(module)?;
    }
    set!(net.channels, a.channels);
    set!(net.dilations, a.dilations.clone());
    set!(net.embed, a.embed);
    set!(net.time_features, a.time_features);

    let out = &a.out.out;
    prepare(out, a.out.force)?;
    let corpus: Vec<(TopologyMatrix, String)> = items.into_iter().map(|i| (i.topology, i.style)).collect();
    let sidecar = |network: &NetworkConfig, iteration: usize| Sidecar {
        format_version: FORMAT_VERSION,
        network: network.clone(),
        training: Some(cfg.clone()),
        iteration: Some(iteration),
    };
    let mut hook_error = None;
    let result = train(&corpus, net, &cfg, |it, params, _| {
        let p = out.join(format!("checkpoint-{it}.bin"));
        if let Err(e) = checkpoint::save(&p, params, &sidecar(params.config(), it)) {
            hook_error.get_or_insert(e);
        }
    });
    if let Some(e) = hook_error {
        return Err(module(e));
    }
    let mut run = RunManifest::new("train", Some(a.seed), json!({ "training": cfg, "corpus": a.corpus }));
    let model = out.join("model.bin");
    match result {
        Ok(r) => {
            checkpoint::save(&model, &r.params, &sidecar(r.params.config(), cfg.iterations)).map_err(module)?;
            run.records = vec![json!({ "model": "model.bin", "history": r.history })];
            run.save(out)?;
            let tail = &r.history[r.history.len().saturating_sub(20)..];
            let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            println!("trained {} iterations; final loss {mean:.5}; model at {}", cfg.iterations, model.display());
            Ok(())
        }
        Err(TrainError::Diverged {
            iteration,
            last_good,
            history,
        }) => {
            checkpoint::save(&model, &last_good, &sidecar(last_good.config(), iteration)).map_err(module)?;
            run.status = "diverged".into();
            run.records = vec![json!({ "model": "model.bin", "diverged_at": iteration, "history": history })];
            run.save(out)?;
            Err(CliError::Module(format!(
                "loss diverged at iteration {iteration}; last finite parameters saved to {}",
                model.display()
            )))
        }
        Err(e) => Err(module(e)),
    }
}

const CHUNK: usize = 16;

fn sample(a: SampleArgs) -> Result<(), CliError> {
    let (params, schedule) = load_model(&a.model.checkpoint)?;
    let cond = checked_style(&params, &a.model.style)?;
    prepare(&a.out.out, a.out.force)?;
    let l = params.config().window;
    let seeds: Vec<u64> = (0..a.count as u64).map(|i| item_seed(a.seed, i)).collect();
    let samples: Vec<TopologyMatrix> = seeds
        .par_chunks(CHUNK)
        .map(|c| sample_batch(l, l, &cond, &params, &schedule, c))
        .collect::<Result<Vec<_>, _>>()
        .map_err(module)?
        .into_iter()
        .flatten()
        .collect();
    let mut run = RunManifest::new(
        "sample",
        Some(a.seed),
        json!({ "style": a.model.style, "count": a.count, "window": l, "steps": schedule.steps() }),
    );
    for (i, (t, seed)) in samples.iter().zip(&seeds).enumerate() {
        let name = format!("{i:05}.topo");
        write(&a.out.out.join(&name), &t.to_text())?;
        run.records.push(json!({ "index": i, "seed": seed, "file": name, "checksum": t.checksum() }));
    }
    run.save(&a.out.out)?;
    println!("wrote {} topologies to {}", samples.len(), a.out.out.display());
    Ok(())
}

fn extend_cmd(a: ExtendArgs) -> Result<(), CliError> {
    let (params, schedule) = load_model(&a.model.checkpoint)?;
    let cond = checked_style(&params, &a.model.style)?;
    let net_window = params.config().window;
    let window = a.window.unwrap_or(net_window);
    if window != net_window {
        return Err(CliError::Usage(format!("--window {window} does not match the checkpoint's {net_window}")));
    }
    let width = a.width.or(a.target).ok_or_else(|| CliError::Usage("give --target or --width".into()))?;
    let height = a.height.or(a.target).ok_or_else(|| CliError::Usage("give --target or --height".into()))?;
    let stride = a.stride.unwrap_or((window / 2).max(1));
    let start = a.input.as_deref().map(topology).transpose()?;
    let current = start.as_ref().map_or([0, 0], |t| [t.rows(), t.cols()]);
    let plan = plan_extension(current, [width, height], window, stride, a.method).map_err(module)?;
    prepare(&a.out.out, a.out.force)?;
    write(&a.out.out.join("plan.json"), &plan.to_json())?;
    let runs = (0..a.count)
        .into_par_iter()
        .map(|i| {
            let seed = item_seed(a.seed, i as u64);
            extend(start.as_ref(), &plan, &cond, &params, &schedule, seed).map(|r| (seed, r))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(module)?;
    let mut run = RunManifest::new(
        "extend",
        Some(a.seed),
        json!({ "style": a.model.style, "method": plan.method, "width": width, "height": height,
                "window": window, "stride": stride, "windows": plan.window_count(), "plan": "plan.json",
                "input": a.input }),
    );
    for (i, (seed, r)) in runs.iter().enumerate() {
        let name = format!("{i:05}.topo");
        write(&a.out.out.join(&name), &r.topology.to_text())?;
        run.records.push(json!({
            "index": i, "seed": seed, "file": name, "checksum": r.topology.checksum(),
            "sampler_calls": r.sampler_calls, "peak_state_cells": r.peak_state_cells, "windows": r.windows,
        }));
    }
    run.save(&a.out.out)?;
    println!(
        "extended {} topologies to {width}x{height} with {} windows each",
        runs.len(),
        plan.window_count()
    );
    Ok(())
}

fn modify(a: ModifyArgs) -> Result<(), CliError> {
    let (params, schedule) = load_model(&a.model.checkpoint)?;
    let cond = checked_style(&params, &a.model.style)?;
    let input = topology(&a.input)?;
    let out = match (&a.region, &a.mask) {
        (Some(region), None) => {
            let tb = ModelToolbox {
                denoiser: &params,
                schedule: &schedule,
                window: params.config().window,
                rules: toy_rules(),
            };
            tb.modify(&input, *region, &a.model.style, a.seed).map_err(module)?
        }
        (None, Some(mask)) => {
            let m = EditMask::new(topology(mask)?).map_err(module)?;
            editing::modify(&input, &m, &cond, &params, &schedule, a.seed).map_err(module)?
        }
        _ => return Err(CliError::Usage("give exactly one of --box or --mask".into())),
    };
    prepare(&a.out.out, a.out.force)?;
    write(&a.out.out.join("modified.topo"), &out.to_text())?;
    let mut run = RunManifest::new(
        "modify",
        Some(a.seed),
        json!({ "style": a.model.style, "input": a.input, "box": a.region, "mask": a.mask }),
    );
    run.records.push(json!({ "file": "modified.topo", "checksum": out.checksum() }));
    run.save(&a.out.out)?;
    println!("wrote {}", a.out.out.join("modified.topo").display());
    Ok(())
}

fn legalize_cmd(a: LegalizeArgs) -> Result<(), CliError> {
    let rules = rules(&a.rules)?;
    let t = topology(&a.input)?;
    prepare(&a.out.out, a.out.force)?;
    let extent = PhysicalExtent::new(a.extent[0], a.extent[1]);
    let mut run = RunManifest::new(
        "legalize",
        None,
        json!({ "input": a.input, "extent": a.extent, "rules": rules }),
    );
    match legalize(&t, extent, &rules) {
        Ok(g) => {
            let p = decode(&t, &g).map_err(module)?;
            write(&a.out.out.join("pattern.geom"), &g.to_text())?;
            write(&a.out.out.join("pattern.json"), &p.to_json())?;
            run.records.push(json!({ "geometry": "pattern.geom", "pattern": "pattern.json" }));
            run.save(&a.out.out)?;
            println!("legal; geometry at {}", a.out.out.join("pattern.geom").display());
            Ok(())
        }
        Err(report) => {
            write(&a.out.out.join("violations.json"), &report.to_json())?;
            run.status = "violations".into();
            run.records.push(json!({ "violations": "violations.json", "count": report.violations.len() }));
            run.save(&a.out.out)?;
            Err(CliError::Violations {
                message: format!("legalization failed with {} violation(s)", report.violations.len()),
                report: report.to_json(),
            })
        }
    }
}

fn check_cmd(a: CheckArgs) -> Result<(), CliError> {
    let rules = rules(&a.rules)?;
    let pattern = match (&a.pattern, &a.topology, &a.geometry) {
        (Some(p), _, _) => LayoutPattern::from_json(&read(p)?).map_err(module)?,
        (None, Some(t), Some(g)) => {
            let geom = GeometryVectors::from_text(&read(g)?).map_err(module)?;
            decode(&topology(t)?, &geom).map_err(module)?
        }
        _ => return Err(CliError::Usage("give --pattern or --topology with --geometry".into())),
    };
    let report = check(&pattern, &rules).map_err(module)?;
    println!("{}", report.to_json());
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Violations {
            message: format!("{} violation(s)", report.violations.len()),
            report: report.to_json(),
        })
    }
}

fn topo_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "topo"))
        .collect();
    files.sort();
    Ok(files)
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let rules = rules(&a.rules)?;
    let report = if a.input.join("manifest.json").is_file() {
        let (_, items) = read_dataset(&a.input).map_err(module)?;
        let patterns: Vec<LayoutPattern> = items.iter().map(|i| i.pattern()).collect();
        evaluate_library(&patterns, &rules).map_err(module)?
    } else {
        let files = topo_files(&a.input)?;
        if files.is_empty() {
            return Err(CliError::Usage(format!("{} holds no .topo files", a.input.display())));
        }
        let pairs = files
            .par_iter()
            .map(|f| -> Result<_, CliError> {
                let t = topology(f)?;
                let pattern = match a.extent {
                    Some([w, h]) => match legalize(&t, PhysicalExtent::new(w, h), &rules) {
                        Ok(g) => decode(&t, &g).map_err(module)?,
                        Err(_) => return Ok(None),
                    },
                    None => {
                        let gp = f.with_extension("geom");
                        if !gp.is_file() {
                            return Err(CliError::Usage(format!(
                                "{} has no geometry; pass --extent to legalize bare topologies",
                                f.display()
                            )));
                        }
                        let g = GeometryVectors::from_text(&read(&gp)?).map_err(module)?;
                        let p = decode(&t, &g).map_err(module)?;
                        if !check(&p, &rules).map_err(module)?.is_clean() {
                            return Ok(None);
                        }
                        p
                    }
                };
                complexity(&pattern).map(Some).map_err(module)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let legal: Vec<_> = pairs.iter().flatten().copied().collect();
        LibraryReport::from_pairs(files.len(), &legal)
    };
    let name = a.input.file_name().map_or("input".into(), |n| n.to_string_lossy().into_owned());
    print!("{}", render_table(&[(name, report.clone())]));
    if let Some(p) = &a.report {
        write(p, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn summarize(r: &ManifestRecord) -> String {
    let mut line = format!("[{}] {} {}", r.node, r.tool, r.outcome);
    let arg = |k: &str| r.args.get(k).map(|v| v.to_string());
    if r.tool == "Topology_Modification" {
        let b: Vec<String> = ["upper", "left", "bottom", "right"].iter().filter_map(|k| arg(k)).collect();
        line.push_str(&format!(" box [{}]", b.join(", ")));
    }
    if let Some(p) = arg("pattern") {
        line.push_str(&format!(" pattern {p}"));
    }
    if let Some(v) = &r.violation {
        line.push_str(&format!(" ({} violation(s))", v.violations.len()));
    }
    if r.tool == "Evaluation" {
        for k in ["legal", "patterns", "legality", "diversity"] {
            if let Some(v) = arg(k) {
                line.push_str(&format!(" {k}={v}"));
            }
        }
    }
    line
}

fn agent(a: AgentArgs) -> Result<(), CliError> {
    let (params, schedule) = load_model(&a.checkpoint)?;
    let rules = rules(&a.rules)?;
    let window = params.config().window;
    let toolbox = ModelToolbox {
        denoiser: &params,
        schedule: &schedule,
        window,
        rules,
    };
    let mut client: Box<dyn ChatClient> = match (&a.mock_script, &a.chat_config) {
        (Some(p), _) => Box::new(MockClient::from_script(&MockScript::load(p).map_err(module)?).map_err(module)?),
        (None, Some(p)) => Box::new(HttpClient::new(HttpConfig::from_file(p).map_err(module)?)),
        (None, None) => Box::new(HttpClient::new(HttpConfig::from_env().map_err(module)?)),
    };
    prepare(&a.out.out, a.out.force)?;
    if let Some(m) = &a.replay {
        let res = replay(m, client.as_mut(), &toolbox, &a.out.out).map_err(module)?;
        println!("replay matched {} sub-task(s)", res.subtasks.len());
        return Ok(());
    }
    let mut docs = match &a.docs {
        Some(p) => DocumentationStore::load(p).map_err(module)?,
        None => DocumentationStore::bundled(),
    };
    let defaults = RetryPolicy::default();
    let base = AgentConfig {
        styles: params.config().classes.clone(),
        plan: PlanContext {
            window,
            stride: a.stride.unwrap_or((window / 2).max(1)),
        },
        policy: ExecutionPolicy {
            retry: RetryPolicy {
                modifications: a.modifications.unwrap_or(defaults.modifications),
                regenerations: a.regenerations.unwrap_or(defaults.regenerations),
            },
            ..ExecutionPolicy::default()
        },
        seed: a.seed,
    };
    let (mut sessions, mut errors, mut missed) = (0u64, 0usize, 0usize);
    let stdin = std::io::stdin();
    loop {
        eprint!("layoutgen> ");
        std::io::stderr().flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| CliError::Module(e.to_string()))? == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" | ":q" => break,
            ":docs" => {
                println!("{}", docs.context());
                continue;
            }
            _ => {}
        }
        sessions += 1;
        let dir = a.out.out.join(format!("session-{sessions:03}"));
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut manifest = Manifest::create(&dir.join("manifest.jsonl"))
            .map_err(module)?
            .with_observer(|r| println!("{}", summarize(r)));
        let mut agent = Agent {
            client: client.as_mut(),
            toolbox: &toolbox as &dyn Toolbox,
            docs: &mut docs,
            config: AgentConfig {
                seed: derive_seed(a.seed, "session", sessions),
                ..base.clone()
            },
        };
        match agent.run(line, &dir, &mut manifest) {
            Ok(res) => {
                for s in &res.subtasks {
                    println!(
                        "sub-task {}: {}/{} patterns, legality {:.3}, diversity {:.3}{}",
                        s.label,
                        s.produced,
                        s.requested,
                        s.report.legality,
                        s.report.diversity,
                        if s.shortfall { " (shortfall)" } else { "" }
                    );
                }
                if !res.quota_met() {
                    missed += 1;
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                errors += 1;
            }
        }
        if let Some(p) = &a.docs {
            docs.save(p).map_err(module)?;
        }
    }
    if errors > 0 {
        return Err(CliError::Module(format!("{errors} session(s) failed")));
    }
    if missed > 0 {
        return Err(CliError::Quota(format!("{missed} session(s) fell short of the requested count")));
    }
    Ok(())
}
