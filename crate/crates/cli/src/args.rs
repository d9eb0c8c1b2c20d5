// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use layoutgen::editing::ExtensionMethod;
use layoutgen::CellBox;

#[derive(Debug, Parser)]
#[command(name = "layoutgen", version, about = "Layout pattern generation, extension and legalization")]
pub struct Cli {
    /// Worker threads for pattern-level parallelism (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic, DRC-clean training corpus.
    Datagen(DatagenArgs),
    /// Train a denoiser on a corpus directory.
    Train(TrainArgs),
    /// Sample window-sized topologies from a checkpoint.
    Sample(SampleArgs),
    /// Grow topologies beyond the model window.
    Extend(ExtendArgs),
    /// Regenerate part of a topology.
    Modify(ModifyArgs),
    /// Find geometry vectors for a topology at a physical size.
    Legalize(LegalizeArgs),
    /// Run the design-rule checker on a pattern.
    Check(CheckArgs),
    /// Legality and diversity of a pattern directory.
    Evaluate(EvaluateArgs),
    /// Interactive requirement-driven session.
    Agent(AgentArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RulesArg {
    /// Design rules JSON `{min_space, min_width, min_area, unit}`; defaults to the toy rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: u64,
    /// Styles to generate, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "A,B")]
    pub styles: Vec<String>,
    /// Patterns per style.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    /// Square physical extent in nm.
    #[arg(long, default_value_t = 2048)]
    pub extent: i64,
    #[arg(long, default_value_t = 32)]
    pub grid: i64,
    #[command(flatten)]
    pub rules: RulesArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: u64,
    /// Corpus directory written by `datagen`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// TrainingConfig JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// NetworkConfig JSON; flags below override it.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Diffusion steps K.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta_k: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dilations: Option<Vec<usize>>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub time_features: Option<usize>,
    /// Save an intermediate checkpoint every N iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint file written by `train` (its `.json` sidecar must sit next to it).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "A")]
    pub style: String,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub method: ExtensionMethod,
    /// Square target size in cells; `--width`/`--height` override it.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Must match the checkpoint's window; defaults to it.
    #[arg(long)]
    pub window: Option<usize>,
    /// Out-painting stride; defaults to half the window.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Topology placed at the origin before extending.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModifyArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub input: PathBuf,
    /// Cells to regenerate: `upper,left,bottom,right`, inclusive.
    #[arg(long = "box", value_parser = parse_box, conflicts_with = "mask")]
    pub region: Option<CellBox>,
    /// Window-sized topology file: 1 keeps a cell, 0 regenerates it.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

fn parse_box(s: &str) -> Result<CellBox, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad box coordinate {p:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [upper, left, bottom, right] if upper <= bottom && left <= right => Ok(CellBox {
            upper,
            left,
            bottom,
            right,
        }),
        _ => Err("expected upper,left,bottom,right with upper<=bottom and left<=right".into()),
    }
}

fn parse_extent(s: &str) -> Result<[i64; 2], String> {
    let v: Vec<i64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad extent {p:?}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [w] => Ok([w, w]),
        [w, h] => Ok([w, h]),
        _ => Err("expected WIDTH or WIDTH,HEIGHT in nm".into()),
    }
}

#[derive(Debug, Args)]
pub struct LegalizeArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// Physical size in nm: `W` or `W,H`.
    #[arg(long, value_parser = parse_extent)]
    pub extent: [i64; 2],
    #[command(flatten)]
    pub rules: RulesArg,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Pattern JSON.
    #[arg(long, conflicts_with_all = ["topology", "geometry"])]
    pub pattern: Option<PathBuf>,
    #[arg(long, requires = "geometry")]
    pub topology: Option<PathBuf>,
    #[arg(long, requires = "topology")]
    pub geometry: Option<PathBuf>,
    #[command(flatten)]
    pub rules: RulesArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A dataset directory, or a directory of `.topo` files with `.geom` siblings.
    #[arg(long)]
    pub input: PathBuf,
    /// Legalize bare topologies at this physical size (`W` or `W,H`) instead of
    /// reading `.geom` siblings.
    #[arg(long, value_parser = parse_extent)]
    pub extent: Option<[i64; 2]>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub rules: RulesArg,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scripted replies instead of a live chat endpoint.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Chat endpoint config JSON `{endpoint, model, timeout_secs}`; otherwise
    /// read from the environment.
    #[arg(long)]
    pub chat_config: Option<PathBuf>,
    /// Documentation store; read at start and updated after every session.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub modifications: Option<usize>,
    #[arg(long)]
    pub regenerations: Option<usize>,
    /// Re-run a recorded session manifest and verify it line by line.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub rules: RulesArg,
}
