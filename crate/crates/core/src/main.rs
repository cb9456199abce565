use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsvf_sim::cli::{self, CliError, RunArgs};

#[derive(Parser)]
#[command(name = "tsvf-sim", version, about = "Seeded weak-measurement and decoherence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV and summary.
    Run {
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Experiment parameter as key=value; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        /// TOML file with experiment, seed, out and a [params] table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List experiments and their parameters.
    List,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TSVF_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("TSVF_SIM_THREADS: expected a thread count, got '{raw}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::List => {
            print!("{}", cli::list_text());
            Ok(())
        }
        Command::Run {
            experiment,
            seed,
            params,
            config,
            out,
        } => init_threads().and_then(|()| {
            let args = RunArgs {
                experiment,
                seed,
                params,
                config,
                out,
            };
            cli::resolve(&args).and_then(|cfg| cli::run(&cfg)).map(|_| ())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tsvf-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
