use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

const FORMATS: &str = "\
FILE FORMATS (integers and floats little-endian)

  EMBX embeddings (.embx)
    magic \"EMBX\" | version u32 = 1 | dtype u8 (0 = f32) | modality u8 (0 = image, 1 = text)
    | d u32 | count u64 | count x (u16 length, UTF-8 id) | count x d f32 row-major
    | CRC-32 u32 of the f32 payload

  ALNW alignment map (.alnw)
    magic \"ALNW\" | version u32 = 1 | kind u8 (0 identity, 1 procrustes, 2 ols)
    | scheme u8 (0 none, 1 normalize-center-renormalize) | d u32 | image mean d x f64
    | text mean d x f64 | W d x d f64 row-major | CRC-32 u32 of bytes from kind through W

  Datastore directory
    manifest.json   {format_version, dataset, d, counts{human, synthetic}, map_fingerprint, crc32{file: u32}}
    records.jsonl   {caption_id, text, provenance, dal_iteration, source_image_id} per line
    embeddings.embx text embeddings, rows in records.jsonl order
    audit.jsonl     {caption_id, dal_iteration, score, threshold} per synthetic caption

  CSV inputs (header row required)
    pairs        image_id,caption_id
    captions     caption_id,text[,image_id]
    references   image_id,text
    gold         image_id,caption_id
    metric csv   id,metric_name,value

  JSONL inputs
    judgments    {\"id\"?, \"image_id\", \"candidate\", \"human_score\", \"metric_scores\"?: {name: value}}
                 id defaults to the zero-based line number
    candidates   {\"id\"?, \"image_id\", \"candidate\"}

SERVICES
  --generator-url  http(s)://host:port serving POST /v1/generate
                   {prompt, num_samples, temperature, top_p, max_tokens, seed} -> {candidates: [str]}
                   or mock:resample | mock:echo | mock:hash for in-process deterministic mocks
  --embedder-url   http(s)://host:port serving POST /v1/embed {texts: [str]} -> {dim, vectors}
                   or mock[:SEED] for hash-derived unit vectors

CONFIG
  --config FILE (TOML, or JSON for *.json) holds one table per command: fit, store_build, caption,
  eval_tau, eval_recall, eval_scores, eval_pearson, dal. Keys are the long flag names with
  underscores. Flags override the file. Every run writes a manifest with the effective settings.

EXIT CODES
  0 success, 2 invalid input, 3 numerical failure, 4 external service failure, 5 internal error";

#[derive(Debug, Parser)]
#[command(name = "capalign", version, about = "Embedding alignment, retrieval-augmented captioning and caption metrics", after_long_help = FORMATS)]
pub struct Cli {
    /// Settings file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a linear map from image to text embeddings
    Fit(FitArgs),
    /// Datastore utilities
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Caption images with retrieval-augmented generation
    Caption(CaptionArgs),
    /// Metrics and correlation with human judgments
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Grow the datastore with filtered synthetic captions
    Dal(DalArgs),
}

#[derive(Debug, Subcommand)]
pub enum StoreCommand {
    /// Build a datastore from caption text embeddings
    Build(StoreBuildArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Kendall tau between human scores and metric scores, printed x100
    Tau(TauArgs),
    /// Image-to-caption recall@k against a datastore
    Recall(RecallArgs),
    /// aCLIP-S or RefaCLIP-S for candidate captions
    Scores(ScoresArgs),
    /// Pearson correlations between metric columns
    Pearson(PearsonArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Image embeddings (EMBX)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// Text embeddings (EMBX)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texts: Option<PathBuf>,
    /// image_id,caption_id rows; without it rows are paired by position
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// procrustes | ols [default: procrustes]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// none | center [default: center]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    /// Dataset tag recorded in the fit report [default: image file stem]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Output map (ALNW); the fit report goes to OUT.report.json
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct StoreBuildArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    /// Raw caption text embeddings (EMBX), ids = caption ids
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texts: Option<PathBuf>,
    /// caption_id,text[,image_id] CSV
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenerationArgs {
    /// Retrieved captions per prompt [default: 13]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_url: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder_url: Option<String>,
    /// Candidates sampled per image [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    /// [default: 40]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// worst_to_best | best_to_worst [default: worst_to_best]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<String>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct CaptionArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    /// Datastore directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Image embeddings to caption (EMBX)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_emb: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub generation: GenerationArgs,
    /// Output JSONL, one object per image
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TauArgs {
    /// Judgments JSONL
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgments: Option<PathBuf>,
    /// Extra metric columns (id,metric_name,value)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_csv: Option<PathBuf>,
    /// Only this metric; prints a bare number
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    /// b | c [default: b]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Also write the unscaled values as JSON
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RecallArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Query image embeddings (EMBX)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// image_id,caption_id rows naming the correct captions
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    /// Comma-separated k values [default: 1,5,10]
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    /// Full per-query reports as JSON
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScoresArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    /// Image embeddings (EMBX) keyed by image_id
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// Candidates JSONL
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<PathBuf>,
    /// image_id,text reference captions, needed for refaclip-s
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub references: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder_url: Option<String>,
    /// aclip-s | refaclip-s [default: aclip-s]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PearsonArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgments: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_csv: Option<PathBuf>,
    /// Leave the human score column out
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_human: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DalArgs {
    /// Continue the run checkpointed in DIR
    #[arg(long, value_name = "DIR")]
    #[serde(skip)]
    pub resume: Option<PathBuf>,
    /// Checkpoint directory for a new run
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    /// Initial (human) datastore directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Training image embeddings; references come from the store's captions
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_images: Option<PathBuf>,
    /// image_id,text validation references
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_references: Option<PathBuf>,
    /// Iterations [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u32>,
    /// aclip-s | refaclip-s [default: aclip-s]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    /// Comma-separated k values searched after each iteration [default: 1..17]
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    /// Add every candidate above the threshold instead of the best one
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_passing: Option<bool>,
    /// Images between progress checkpoints [default: 64]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub generation: GenerationArgs,
}
