//! Command-line surface. Every option is optional here; unset options fall
//! back to the config file and then to the documented default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bldclass", version, about = "Building type and function classification on localized subgraphs")]
#[command(after_help = "Exit codes: 0 success, 2 usage or configuration error, 3 data error, 4 training divergence.\n\
Settings resolve as: command-line flag > config file ([<command>] table, then top-level keys) > default.\n\
Every command writes its resolved settings to <out>/<command>.config.toml and timing to <out>/run.log.")]
pub struct Cli {
    /// TOML config file. Top-level keys apply to every command, a table named
    /// after a command (e.g. [train]) overrides them for that command. Keys
    /// are the long flag names with underscores.
    #[arg(long, global = true, env = "BLDCLASS_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages; 0 uses every core. Results do not
    /// depend on this value. [default: 1]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic town as GeoJSON layers plus an ingestion config.
    Synth(SynthArgs),
    /// Read footprints and auxiliary layers into a building table.
    Ingest(IngestArgs),
    /// Cut localized subgraphs and write a graph dataset.
    Build(BuildArgs),
    /// Train a classifier on a graph dataset.
    Train(TrainArgs),
    /// Evaluate a trained model on the test split.
    Eval(EvalArgs),
    /// Permutation (and, for trees, impurity) feature importance.
    Importance(ImportanceArgs),
    /// Aggregate evaluation reports into performance tables and charts.
    Report(ReportArgs),
    /// Compare subgraph generation modes and label policies by Cohen's kappa.
    CompareSettings(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Build(_) => "build",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Importance(_) => "importance",
            Command::Report(_) => "report",
            Command::CompareSettings(_) => "compare-settings",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory. [default: synth]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of buildings (at least 20). [default: 2000]
    #[arg(long = "n", value_name = "N")]
    pub n_buildings: Option<usize>,
    /// Probability that an observed label is replaced by another class. [default: 0.05]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Share of buildings without a usable tag. [default: 0.2]
    #[arg(long)]
    pub unlabeled: Option<f64>,
    /// Probability that a lot holds its zone's dominant class. [default: 0.75]
    #[arg(long)]
    pub purity: Option<f64>,
    /// Standard deviation of the log size factor of footprints. [default: 0.25]
    #[arg(long)]
    pub shape_noise: Option<f64>,
    /// Share of urban districts covered by the urban atlas layer. [default: 1.0]
    #[arg(long)]
    pub urban_atlas_coverage: Option<f64>,
    /// Country codes assigned to districts, comma separated. [default: de,fr,nl]
    #[arg(long, value_delimiter = ',')]
    pub countries: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Ingestion config (TOML) such as the one written by `synth`; the flags
    /// below override its entries.
    #[arg(long, env = "BLDCLASS_INGEST_CONFIG", value_name = "FILE")]
    pub ingest_config: Option<PathBuf>,
    /// Footprint feature collection (GeoJSON).
    #[arg(long, env = "BLDCLASS_FOOTPRINTS", value_name = "FILE")]
    pub footprints: Option<PathBuf>,
    /// Land-use layer; repeat for several. Features carry `code` and `source` (ua or clc).
    #[arg(long, value_name = "FILE")]
    pub land_use: Option<Vec<PathBuf>>,
    /// DEGURBA unit polygons with a `degurba` property in {1,2,3}.
    #[arg(long, value_name = "FILE")]
    pub degurba: Option<PathBuf>,
    /// Country polygons with a `country` property, used when a footprint has none.
    #[arg(long, value_name = "FILE")]
    pub country_layer: Option<PathBuf>,
    /// Footprint property holding the country code. [default: country]
    #[arg(long)]
    pub country_property: Option<String>,
    /// Building tag mapping table (CSV tag,class). [default: built-in table]
    #[arg(long, value_name = "FILE")]
    pub tag_table: Option<PathBuf>,
    /// Land-use code mapping table (CSV source,code,class). [default: built-in table]
    #[arg(long, value_name = "FILE")]
    pub land_use_table: Option<PathBuf>,
    /// Metric CRS of every layer. [default: EPSG:3035]
    #[arg(long)]
    pub crs: Option<String>,
    /// Output directory. [default: ingest]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Building source: an `ingest` output directory (buildings.jsonl), a
    /// `synth` output directory (ingest.toml), or either file directly.
    #[arg(long, env = "BLDCLASS_INPUT", value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Output directory. [default: dataset]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for center sampling, neighbour order and the split. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subgraph generation: distance, two_hop or unconstrained. [default: distance]
    #[arg(long)]
    pub mode: Option<String>,
    /// Loss labels: all (every labeled node) or center. [default: all]
    #[arg(long)]
    pub label_policy: Option<String>,
    /// Number of subgraphs (capped at the number of labeled buildings). [default: 5000]
    #[arg(long)]
    pub n_graphs: Option<usize>,
    /// Buildings per distance-based subgraph. [default: 20]
    #[arg(long)]
    pub n_sub: Option<usize>,
    /// Train, validation and test shares, comma separated. [default: 0.7,0.15,0.15]
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
    /// Edge feature threshold stored with the dataset, in metres. [default: 50]
    #[arg(long)]
    pub xi: Option<f64>,
    /// Hop radius of unconstrained subgraphs. [default: 4]
    #[arg(long)]
    pub hops: Option<usize>,
}

/// Model hyperparameters; unset values come from the chosen profile.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Hyperparameter profile: reference (full-size values) or desk (reduced
    /// widths and epochs for a single machine). [default: reference]
    #[arg(long)]
    pub profile: Option<String>,
    /// Hidden width of every layer. [default: profile value]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Number of GNN layers. [default: profile value]
    #[arg(long)]
    pub gnn_layers: Option<usize>,
    /// Number of fully connected layers after the GNN stack. [default: profile value]
    #[arg(long)]
    pub standard_layers: Option<usize>,
    /// Attention heads (GAT and transformer). [default: profile value]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Dropout probability. [default: profile value]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam learning rate. [default: profile value]
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 weight decay. [default: profile value]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Subgraphs (or rows for the MLP) per batch. [default: profile value]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum number of epochs. [default: profile value]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early stopping patience in epochs. [default: profile value]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Neighbour sampling fanouts per GNN layer, comma separated; `none` disables sampling. [default: profile value]
    #[arg(long)]
    pub fanouts: Option<String>,
    /// Edge feature threshold used by the model, in metres. [default: profile value]
    #[arg(long)]
    pub model_xi: Option<f64>,
    /// Maximum tree depth. [default: profile value]
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Trees in a random forest. [default: profile value]
    #[arg(long)]
    pub n_trees: Option<usize>,
    /// Candidate features per split; 0 considers all. [default: profile value]
    #[arg(long)]
    pub max_features: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Graph dataset file or `build` output directory.
    #[arg(long, env = "BLDCLASS_DATASET", value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Output directory. [default: model]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture: tree, forest, mlp, gcn, sage, gat or transformer. [default: transformer]
    #[arg(long)]
    pub arch: Option<String>,
    /// Label space: combined9, typology5 or binary2. [default: combined9]
    #[arg(long)]
    pub task: Option<String>,
    /// Override the dataset's loss label policy: all or center. [default: as stored]
    #[arg(long)]
    pub label_policy: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint or `train` output directory.
    #[arg(long, env = "BLDCLASS_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Graph dataset file or `build` output directory.
    #[arg(long, env = "BLDCLASS_DATASET", value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Output directory. [default: eval]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Scored nodes: flagged (every labeled test node) or centers. [default: flagged]
    #[arg(long)]
    pub scope: Option<String>,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    /// Model checkpoint or `train` output directory.
    #[arg(long, env = "BLDCLASS_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Graph dataset file or `build` output directory.
    #[arg(long, env = "BLDCLASS_DATASET", value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Output directory. [default: importance]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Scored nodes: flagged or centers. [default: flagged]
    #[arg(long)]
    pub scope: Option<String>,
    /// Permutation seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation reports (eval_report.json files or `eval` output directories).
    #[arg(value_name = "REPORT")]
    pub reports: Vec<PathBuf>,
    /// Output directory. [default: report]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Building source, as for `build`.
    #[arg(long, env = "BLDCLASS_INPUT", value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Output directory. [default: compare]
    #[arg(long, env = "BLDCLASS_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for dataset generation; training seeds start here too. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture to compare with. [default: transformer]
    #[arg(long)]
    pub arch: Option<String>,
    /// Tasks, comma separated. [default: combined9]
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    /// Cross-validation splits per setting. [default: 2]
    #[arg(long)]
    pub splits: Option<usize>,
    /// Training seeds per split. [default: 5]
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Subgraphs per dataset. [default: 5000]
    #[arg(long)]
    pub n_graphs: Option<usize>,
    /// Buildings per distance-based subgraph. [default: 20]
    #[arg(long)]
    pub n_sub: Option<usize>,
    /// Scored nodes: flagged or centers. [default: flagged]
    #[arg(long)]
    pub scope: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}
