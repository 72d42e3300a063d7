use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obstacle_walk_cli::{check, list, parse_config, run, EXIT_ERROR};

#[derive(Parser)]
#[command(
    name = "obstacle-walk",
    version,
    about = "Random walks above concave obstacles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Run the built-in exhaustive-oracle suite.
    Check,
    /// List registered experiments, step laws and obstacles.
    List,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_ERROR as u8),
            };
        }
    };
    let result = match cli.command {
        Command::Run { config } => parse_config(&config)
            .map_err(Into::into)
            .and_then(|c| run(&c)),
        Command::Check => check(),
        Command::List => {
            print!("{}", list());
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
