//! Thin argument-parsing shell around [`flowcast::cli`]. Results go to
//! stdout, errors to stderr; exit codes: 0 success, 1 usage or config
//! error, 2 data error, 3 numerical failure.

use clap::{Parser, Subcommand};
use flowcast::cli::{self, CommandName, Invocation};

#[derive(Parser)]
#[command(
    name = "flowcast",
    version,
    about = "Zone-to-zone flow forecasting with cross-platform fusion",
    after_help = "Configuration is layered: built-in defaults, then --config file, \
                  then FLOWCAST_* environment variables (paths only), then --set \
                  overrides, then --seed. Every command writes a config.resolved \
                  snapshot that reproduces the run when passed back via --config."
)]
struct Cli {
    /// Config file of key=value lines (see config.resolved in any run dir).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<std::path::PathBuf>,

    /// Master seed. Every stochastic component (synthesis, parameter
    /// initialization, batch shuffling, dropout) derives an independent
    /// stream from it, so one value pins the whole run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for this command (default: <paths.out_dir>/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<std::path::PathBuf>,

    /// Override a config key, e.g. --set train.epochs=50. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-platform dataset as edge-list files.
    Synth,
    /// Convert raw trip CSVs into interval edge lists.
    Ingest,
    /// Train one model and write a checkpoint plus metrics.
    Train,
    /// Score a checkpoint on the held-out test split.
    Evaluate,
    /// Train the fused model and the six single-input baselines.
    Baselines,
    /// Train the four fusion-model variants.
    Ablate,
    /// Predict per-zone flows for one target interval from a checkpoint.
    Predict,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here too; they are not failures.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    let command = match cli.command {
        Command::Synth => CommandName::Synth,
        Command::Ingest => CommandName::Ingest,
        Command::Train => CommandName::Train,
        Command::Evaluate => CommandName::Evaluate,
        Command::Baselines => CommandName::Baselines,
        Command::Ablate => CommandName::Ablate,
        Command::Predict => CommandName::Predict,
    };
    let invocation = Invocation {
        config_file: cli.config,
        seed: cli.seed,
        out: cli.out,
        overrides: cli.overrides,
    };

    if let Err(err) = cli::run(command, &invocation) {
        eprintln!("flowcast {}: error: {err}", command.as_str());
        std::process::exit(err.exit_code());
    }
}
