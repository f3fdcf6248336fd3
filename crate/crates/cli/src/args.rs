//! Command-line surface. Every settings field has a flag of the same name;
//! flags left unset fall back to the config file, then to the defaults
//! shown in `--help`.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Parser)]
#[command(name = "slotaug", version, about = "Object-centric slot learning with interpretable slot manipulation")]
pub struct Cli {
    /// Worker threads (overrides SLOTAUG_THREADS) [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sprite dataset
    GenData(GenDataArgs),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Object discovery metrics (mIoU, FG-ARI) on a dataset
    Eval(EvalArgs),
    /// Edit one object of an image
    Manipulate(ManipulateArgs),
    /// Repeated round-trip manipulation drift
    Durability(DurabilityArgs),
    /// Property prediction probes on frozen slots
    Probe(ProbeArgs),
    /// Rank images by similarity to a query object
    Retrieve(RetrieveArgs),
    /// Decode slots gathered from several images
    Compose(ComposeArgs),
    /// Check the per-object split of the reconstruction error
    VerifyDecomposition(VerifyArgs),
    /// Write scene, reference view and (optionally) renders as PNG
    ExportPng(ExportArgs),
    /// Run the HTTP session API
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output dataset path (required)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of scenes [default: 5000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fewest objects per scene [default: 2]
    #[arg(long)]
    pub min_objects: Option<usize>,
    /// Most objects per scene [default: 4]
    #[arg(long)]
    pub max_objects: Option<usize>,
    /// Canvas side in pixels [default: 80]
    #[arg(long)]
    pub template_size: Option<usize>,
    /// Crop side in pixels [default: 64]
    #[arg(long)]
    pub crop_size: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset path (required)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use only the first N scenes, 0 for all [default: 0]
    #[arg(long)]
    pub max_scenes: Option<usize>,
    /// Scenes held out from the end of the set and scored before and after [default: 0]
    #[arg(long)]
    pub holdout: Option<usize>,
    /// v1 (augmentation only) or v3 (identity pass and consistency loss) [default: v3]
    #[arg(long)]
    pub variant: Option<String>,
    /// Optimizer steps [default: 20000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Samples per step [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 0.0004]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear warmup steps [default: 400]
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Half-life of the learning-rate decay in steps [default: 4000]
    #[arg(long)]
    pub decay_steps: Option<usize>,
    /// Decoupled weight decay [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Process samples strictly in order, single-threaded [default: false]
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub deterministic: bool,
    /// Steps between log lines [default: 100]
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Steps between checkpoint writes [default: 1000]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Model input side M [default: 64]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Number of slots K [default: 5]
    #[arg(long)]
    pub num_slots: Option<usize>,
    /// Slot width D [default: 64]
    #[arg(long)]
    pub slot_dim: Option<usize>,
    /// Binding iterations [default: 3]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Encoder, decoder and instruction-encoder width [default: 64]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Hidden width of the slot MLPs [default: 128]
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset path (required)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// First scene to use [default: 0]
    #[arg(long)]
    pub offset: Option<usize>,
    /// Scenes to use, 0 for the rest [default: 0]
    #[arg(long)]
    pub count: Option<usize>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Exit 1 unless FG-ARI reaches --min-fg-ari [default: false]
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub assert: bool,
    /// Threshold for --assert [default: 0.7]
    #[arg(long)]
    pub min_fg_ari: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ManipulateArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input PNG, resized to the model input if needed (required)
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Object position as x,y in [0,1] (required)
    #[arg(long)]
    pub target: Option<String>,
    /// Instruction JSON: {"scale","dx","dy","dhue","sat","light"} (required)
    #[arg(long)]
    pub inst: Option<String>,
    /// Output PNG (required)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DurabilityArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Checkpoint to compare against; --assert requires lower drift than it
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Dataset path (required)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// First scene to use [default: 0]
    #[arg(long)]
    pub offset: Option<usize>,
    /// Scenes to use [default: 20]
    #[arg(long)]
    pub count: Option<usize>,
    /// single or multi [default: single]
    #[arg(long)]
    pub mode: Option<String>,
    /// Round trips, 0 for 8 (single) or 4 (multi) [default: 0]
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Exit 1 unless drift is below the baseline's [default: false]
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub assert: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset path (required)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// First scene to use [default: 0]
    #[arg(long)]
    pub offset: Option<usize>,
    /// Scenes to use, 0 for the rest [default: 0]
    #[arg(long)]
    pub count: Option<usize>,
    /// all, size, color, shape or position [default: all]
    #[arg(long)]
    pub property: Option<String>,
    /// Probe hidden width [default: 64]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Probe training epochs [default: 60]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Probe learning rate [default: 0.003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of scenes used to fit the probe [default: 0.8]
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Probe seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Also write matched slots and labels as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Exit 1 unless color F1 >= 0.375 and pos@0.15 >= 0.6 [default: false]
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub assert: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrieveArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset whose reference views are the candidates
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// First candidate scene [default: 0]
    #[arg(long)]
    pub offset: Option<usize>,
    /// Candidate scenes, 0 for the rest [default: 0]
    #[arg(long)]
    pub count: Option<usize>,
    /// Extra candidate PNGs, comma separated
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<PathBuf>,
    /// Query PNG
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Query by dataset scene index instead of --query
    #[arg(long)]
    pub query_index: Option<usize>,
    /// Query object position x,y; defaults to the first object of --query-index
    #[arg(long)]
    pub target: Option<String>,
    /// slot-mse, pixel-mse or cosine [default: pixel-mse]
    #[arg(long)]
    pub metric: Option<String>,
    /// Hits to print [default: 10]
    #[arg(long)]
    pub top: Option<usize>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Composition JSON: {"sources":[{"image":"a.png","objects":[{"target":[x,y],"edits":[...]}]}]} (required)
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output PNG (required)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Built-in fixture: disjoint or overlap
    #[arg(long)]
    pub fixture: Option<String>,
    /// Checkpoint path, when not using a fixture
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset path, when not using a fixture
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Scene index in --data [default: 0]
    #[arg(long)]
    pub index: Option<usize>,
    /// hard or soft masks [default: hard]
    #[arg(long)]
    pub mode: Option<String>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Exit 1 unless the fixture's expectation holds [default: false]
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub assert: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset path (required)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Scene index [default: 0]
    #[arg(long)]
    pub index: Option<usize>,
    /// Output directory (required)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the render and per-slot alpha maps of this checkpoint
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Side of the reference view when no checkpoint is given [default: 64]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// JSON settings file; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint path (required)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Listen address [default: 127.0.0.1:8080]
    #[arg(long)]
    pub addr: Option<String>,
    /// Seed of the slot initialization noise [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
}
