use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use settings::Settings;

/// Edge detection toolkit: augment, train, predict, evaluate.
#[derive(Parser, Debug)]
#[command(name = "sdped", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Plain-text file of key=value settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting (repeatable); beats --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tile, rotate and flip a dataset into a new dataset directory.
    Augment(commands::AugmentArgs),
    /// Train a model and write it with its run log.
    Train(commands::TrainArgs),
    /// Write one probability PNG per input image.
    Predict(commands::PredictArgs),
    /// Benchmark predictions against ground truth.
    Eval(commands::EvalArgs),
    /// Print a model file's configuration and parameter count.
    Info(commands::InfoArgs),
    /// List the recognised config keys.
    Keys,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SDPED_LOG", "warn")).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> sdped_core::Result<()> {
    let g = cli.global;
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(sdped_core::Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| sdped_core::Error::Config(format!("cannot start worker pool: {e}")))?;
    }
    let mut settings = Settings::default();
    if let Some(path) = &g.config {
        settings.load_file(path)?;
    }
    for pair in &g.set {
        settings.set_pair(pair)?;
    }
    if let Some(seed) = g.seed {
        settings.set("seed", seed.to_string())?;
    }

    match cli.command {
        Command::Augment(a) => commands::augment(a, settings),
        Command::Train(a) => commands::train(a, settings),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a, settings),
        Command::Info(a) => commands::info(a),
        Command::Keys => {
            for (k, doc) in settings::KEYS {
                println!("{k:<22} {doc}");
            }
            Ok(())
        }
    }
}
