use std::path::PathBuf;
use std::process::ExitCode;

use cellpheno::config::PipelineConfig;
use cellpheno_cli::{load_config, run_stage, RunOptions, Stage, StageError};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cellpheno",
    version,
    about = "Cell phenotype comparison for H&E region tiles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config; every key is optional and unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-image and per-fold parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Re-run stages even when their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,

    /// Output root (overrides the config); each stage writes `<out>/<stage>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Primary input of the stage, replacing the previous stage's artifact.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic cohort: tiles, manifest, ground truth.
    Synth,
    /// Segment nuclei in every manifest tile (input: manifest CSV).
    Segment,
    /// Per-cell features (input: segment directory).
    Features,
    /// Ensemble-vote pruning (input: features CSV).
    Prune,
    /// MDS embedding of the retained cells (input: features CSV).
    Embed,
    /// Per-group K-means with elbow selection (input: features CSV).
    Cluster,
    /// Representative-cell panels (input: cluster models JSON).
    Panel,
    /// All stages in order (input: manifest CSV; synthesizes when absent).
    Pipeline,
    /// Print the resolved config as TOML.
    Config,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), StageError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| StageError::Failure(format!("thread pool: {e}")))?;
    }
    let config = resolve_config(&cli)?;
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Segment => Stage::Segment,
        Command::Features => Stage::Features,
        Command::Prune => Stage::Prune,
        Command::Embed => Stage::Embed,
        Command::Cluster => Stage::Cluster,
        Command::Panel => Stage::Panel,
        Command::Pipeline => Stage::Pipeline,
        Command::Config => {
            let text = toml::to_string(&config)
                .map_err(|e| StageError::Failure(format!("cannot encode config: {e}")))?;
            print!("{text}");
            return Ok(());
        }
    };
    let opts = RunOptions {
        config,
        input: cli.input,
        force: cli.force,
    };
    for o in run_stage(stage, &opts)? {
        let state = if o.skipped { "up to date" } else { "done" };
        println!("{}\t{}\t{}", o.stage, state, o.dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
