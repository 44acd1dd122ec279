use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pathmil::config::PipelineConfig;
use pathmil::pipeline::{Pipeline, Stage};
use pathmil::Error;

#[derive(Parser)]
#[command(name = "pathmil", version, about = "Path-supervised question answering over a knowledge graph")]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true, default_value = "pathmil.toml")]
    config: PathBuf,
    /// Override a config key, e.g. `--set generator.beam_size=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Embedding provider, `builtin:<dim>` or `file:<path>`.
    #[arg(long, global = true)]
    embedding: Option<String>,
    /// Offline reasoner double instead of the configured endpoint.
    #[arg(long, global = true, value_enum)]
    mock_reasoner: Option<Mock>,
    /// Accept predecessor artifacts written under another config.
    #[arg(long, global = true)]
    force: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mock {
    Union,
}

#[derive(Subcommand)]
enum Command {
    Ingest,
    Enumerate,
    BuildBags,
    TrainEstimator,
    Score,
    SelectSupervision,
    TrainGenerator,
    EmitFinetune,
    Generate,
    Ground,
    Reason,
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Question JSONL with gold answers.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    SupervisionEval {
        #[arg(long)]
        supervision: Option<PathBuf>,
        #[arg(long)]
        reference_paths: Option<PathBuf>,
    },
    Pipeline,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Ingest => Stage::Ingest,
            Command::Enumerate => Stage::Enumerate,
            Command::BuildBags => Stage::BuildBags,
            Command::TrainEstimator => Stage::TrainEstimator,
            Command::Score => Stage::Score,
            Command::SelectSupervision => Stage::SelectSupervision,
            Command::TrainGenerator => Stage::TrainGenerator,
            Command::EmitFinetune => Stage::EmitFinetune,
            Command::Generate => Stage::Generate,
            Command::Ground => Stage::Ground,
            Command::Reason => Stage::Reason,
            Command::Evaluate { .. } => Stage::Evaluate,
            Command::SupervisionEval { .. } => Stage::SupervisionEval,
            Command::Pipeline => Stage::Pipeline,
        }
    }
}

fn run(cli: Cli) -> pathmil::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(e) = cli.embedding {
        overrides.push(format!("embedding=\"{e}\""));
    }
    if cli.mock_reasoner.is_some() {
        overrides.push("reasoner.mode=\"union\"".into());
    }
    let config = PipelineConfig::load(&cli.config, &overrides)?;
    let pipeline = Pipeline::new(config)?.force(cli.force);
    log::info!("config hash {}", pipeline.config_hash());
    match cli.command {
        Command::Evaluate { predictions, gold } => {
            let (summary, report) = pipeline.evaluate(predictions.as_deref(), gold.as_deref())?;
            println!("{summary}");
            print!("{}", report.metrics.to_table());
            if report.metrics.n == 0 {
                return Err(Error::Config("no predictions to evaluate".into()));
            }
        }
        Command::SupervisionEval {
            supervision,
            reference_paths,
        } => {
            println!("{}", pipeline.supervision_eval(supervision.as_deref(), reference_paths.as_deref())?);
        }
        other => {
            for s in pipeline.run(other.stage())? {
                println!("{s}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
