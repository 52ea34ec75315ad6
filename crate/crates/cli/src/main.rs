//! `larm` command-line tool.
//!
//! Exit codes: 0 success, 1 a negative result (validation errors, an
//! exhausted generation session), 2 usage, I/O, syntax or runtime errors.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use larm::agent::{Backend, Conditioning, ConditioningMode};

#[derive(Parser)]
#[command(name = "larm", version, about = "Language-aligned reward machines toolkit")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Config file (JSON or `key = value` lines); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse a reward machine and print its canonical form.
    Parse { path: PathBuf },
    /// Validate a reward machine and run the structural analyses.
    Validate { path: PathBuf },
    /// Render a reward machine as Graphviz DOT.
    Viz(VizArgs),
    /// Train agents on one task.
    Train(TrainArgs),
    /// Evaluate a saved agent (or the planner oracle) on a task.
    Eval(EvalArgs),
    /// Multi-task conditioning ablation.
    Ablate(AblateArgs),
    /// Train on two tasks, evaluate zero-shot on their composite.
    Zeroshot(ZeroshotArgs),
    /// Generator–critic synthesis of a reward machine, labeling and instructions.
    Gen(GenArgs),
    /// Embed per-state instructions and project them with PCA.
    Embed(EmbedArgs),
}

#[derive(Args)]
pub struct VizArgs {
    pub path: PathBuf,
    /// Instructions shown as node tooltips; state names otherwise.
    #[arg(long)]
    pub instructions: Option<PathBuf>,
    /// Write DOT here instead of stdout.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Draw the implicit else self-loops.
    #[arg(long)]
    pub include_else: bool,
}

#[derive(Args, Clone)]
pub struct TaskArgs {
    /// Bundled task kind (doorkey, key_corridor, ...) or fixture (suite_1, zs_a, ...).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Environment config file for a custom task.
    #[arg(long)]
    pub task_config: Option<PathBuf>,
    #[arg(long)]
    pub rm: Option<PathBuf>,
    #[arg(long)]
    pub labeling: Option<PathBuf>,
    #[arg(long)]
    pub instructions: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, run as independent jobs.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Run seeds one after another instead of on the thread pool.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Clone)]
pub struct LearnArgs {
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub conditioning: Option<Conditioning>,
    /// Environment steps per run.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[arg(long)]
    pub mode: Option<ConditioningMode>,
    /// Greedy evaluation episodes after training.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Saved agent JSON (from `train`).
    #[arg(long, required_unless_present = "planner")]
    pub agent: Option<PathBuf>,
    /// Use the breadth-first-search oracle instead of an agent.
    #[arg(long)]
    pub planner: bool,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    /// Number of suite tasks (1..=5).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<ConditioningMode>>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Args)]
pub struct ZeroshotArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, conflicts_with = "mission_file")]
    pub mission: Option<String>,
    #[arg(long)]
    pub mission_file: Option<PathBuf>,
    /// OpenAI-compatible base URL, e.g. http://host/v1.
    #[arg(long, conflicts_with = "offline")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Replay a recorded transcript instead of calling a model.
    #[arg(long)]
    pub offline: Option<PathBuf>,
    /// Maximum generator–critic rounds per stage.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Ask for approval or feedback on the terminal after the critics approve.
    #[arg(long)]
    pub human: bool,
    /// Request Python labeling functions and store them verbatim.
    #[arg(long)]
    pub raw_labeling: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub instructions: PathBuf,
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Output directory for embeddings.csv; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
