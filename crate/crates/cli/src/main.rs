//! `stsc` command line: dataset preparation, training, evaluation, ablation
//! sweeps, gradient checks and network inspection.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stsc::error::{Error, ErrorKind};
use stsc::events::dataset::DatasetKind;

/// Exit status for each failure category. Usage errors exit with 2 (clap).
pub mod exit {
    pub const CHECKS_FAILED: u8 = 1;
    pub const IO: u8 = 3;
    pub const SPEC: u8 = 4;
    pub const NUMERIC: u8 = 5;
    pub const CORRUPT: u8 = 6;
    pub const INVALID: u8 = 7;
}

#[derive(Parser, Debug)]
#[command(
    name = "stsc",
    version,
    about = "Spiking networks with spatio-temporal synaptic connections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bin raw event streams into a cached frame tensor plus manifest.
    PrepareData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a network and write metrics.csv and checkpoints to --out.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load. Defaults to <out>/best.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        /// Random draws per check.
        #[arg(long, default_value_t = stsc::validate::DEFAULT_SEEDS)]
        seeds: usize,
    },
    /// Train once per grid point and collect the accuracies in ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// One of: policies, kf, kg, rf, variants, modules.
        #[arg(long)]
        grid: String,
    },
    /// Print the parsed network with parameter counts and STSC placements.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Network spec string; defaults to the configured one.
        spec: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Dataset preset the configuration starts from.
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetKind>,
    /// Key-value config file (same format as the printed effective config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Raw dataset directory.
    #[arg(long, env = "STSC_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Frame cache root.
    #[arg(long, env = "STSC_CACHE_DIR", default_value = "stsc-cache")]
    pub cache: PathBuf,
    /// Output directory. Defaults to runs/<dataset> (or the cache root for
    /// prepare-data).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override, `key=value`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Disable the thread pool.
    #[arg(long)]
    pub sequential: bool,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => exit::IO,
        ErrorKind::Spec => exit::SPEC,
        ErrorKind::Numeric => exit::NUMERIC,
        ErrorKind::CorruptInput => exit::CORRUPT,
        ErrorKind::InvalidArgument => exit::INVALID,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PrepareData { common } => commands::prepare_data(&common),
        Command::Train { common } => commands::train(&common),
        Command::Eval { common, checkpoint } => commands::eval(&common, checkpoint),
        Command::Gradcheck { seeds } => commands::gradcheck(seeds),
        Command::Ablate { common, grid } => commands::ablate(&common, &grid),
        Command::Inspect { common, spec } => commands::inspect(&common, spec),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_error_category_maps_to_its_own_code() {
        let io = Error::io("x", std::io::Error::other("gone"));
        let codes = [
            exit_code(&io),
            exit_code(&Error::Spec("s".into())),
            exit_code(&Error::Numeric("n".into())),
            exit_code(&Error::CorruptInput("c".into())),
            exit_code(&Error::InvalidArgument("i".into())),
        ];
        assert_eq!(
            codes,
            [
                exit::IO,
                exit::SPEC,
                exit::NUMERIC,
                exit::CORRUPT,
                exit::INVALID
            ]
        );
        let mut unique = codes.to_vec();
        unique.extend([0, 2, exit::CHECKS_FAILED]);
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), codes.len() + 3);
        assert_eq!(exit_code(&Error::Config("c".into())), exit::SPEC);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
