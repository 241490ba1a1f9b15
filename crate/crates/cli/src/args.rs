use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "fcnlp", version, about = "Cross-modal tweet graphs and label propagation for fake news detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the similarity graph and report its statistics.
    BuildGraph(GraphCmd),
    /// Train one model and write a checkpoint plus the loss curve.
    Train(DataCmd),
    /// Score a checkpoint, or run the multi-seed protocol, on the test split.
    Eval(EvalCmd),
    /// Retrain over a list of thresholds.
    SweepTau(SweepCmd),
    /// Retrain over a λ × μ grid.
    Grid(GridCmd),
    /// Compare the five model variants with shared seeds.
    Ablation(DataCmd),
    /// Write a synthetic event-clustered dataset.
    GenSynth(SynthCmd),
    /// Write the graph as JSON or DOT.
    ExportGraph(ExportCmd),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradCmd),
}

/// Hyperparameter flags; any flag given overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// key = value file with defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated subset of II,TT,IT,TI.
    #[arg(long)]
    pub channels: Option<String>,
    /// Fail instead of skipping cross channels when dims differ.
    #[arg(long)]
    pub strict_channels: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub gcn_layers: Option<usize>,
    #[arg(long)]
    pub la_layers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// baseline | fcn-only | fcn-lpn-no-mmd | lpn-alpha | full (or i..v).
    #[arg(long)]
    pub variant: Option<String>,
    /// Train on the graph over all nodes, test nodes included.
    #[arg(long)]
    pub transductive_train: bool,
    /// Reuse the neighbour weight for the self term.
    #[arg(long)]
    pub shared_self_weight: bool,
    /// Average the cross-entropy terms instead of summing them.
    #[arg(long)]
    pub mean_reduction: bool,
    /// Force unseen nodes into (true) or out of (false) the supervised set.
    #[arg(long)]
    pub merge_unseen: Option<bool>,
}

#[derive(Args, Debug)]
pub struct DataCmd {
    /// Input dataset (TFRE v1).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GraphCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub strict_channels: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportCmd {
    #[command(flatten)]
    pub graph: GraphCmd,
    /// json or dot.
    #[arg(long, default_value = "json")]
    pub format: String,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataCmd,
    /// Score this checkpoint instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    #[command(flatten)]
    pub data: DataCmd,
    /// Comma-separated thresholds.
    #[arg(
        long,
        default_value = "0.85,0.86,0.87,0.88,0.89,0.9,0.91,0.92,0.93,0.94,0.95,0.96,0.97,0.98,0.99"
    )]
    pub taus: String,
}

#[derive(Args, Debug)]
pub struct GridCmd {
    #[command(flatten)]
    pub data: DataCmd,
    /// Comma-separated values used for both λ and μ.
    #[arg(long, default_value = "0.01,0.1,1,10,100")]
    pub values: String,
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    #[arg(long, default_value_t = 6)]
    pub events: usize,
    #[arg(long, default_value_t = 100)]
    pub per_event: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub fake_offset: f64,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradCmd {
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
