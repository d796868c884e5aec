use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;

use rainlane_cli::args::{Cli, Command};
use rainlane_cli::error::{classify, error_line, usage};

fn init_threads(cli: &Cli) -> anyhow::Result<()> {
    let threads = match (cli.threads, &cli.command) {
        (Some(0), _) => return Err(usage("--threads must be at least 1")),
        (Some(n), _) => n,
        (None, Command::Bench(_)) => 1,
        (None, _) => return Ok(()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))
}

/// The clap report up to its usage section, on one line.
fn clap_message(text: &str) -> String {
    let parts: Vec<&str> = text
        .lines()
        .map(str::trim)
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .filter(|l| !l.is_empty())
        .collect();
    let msg = parts.join(" ");
    msg.strip_prefix("error: ").unwrap_or(&msg).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ClapKind::DisplayHelp | ClapKind::DisplayVersion => {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            ClapKind::DisplayHelpOnMissingArgumentOrSubcommand | ClapKind::MissingSubcommand => {
                eprintln!("rainlane: error[usage]: missing subcommand; see `rainlane --help`");
                return ExitCode::from(1);
            }
            _ => {
                eprintln!("rainlane: error[usage]: {}", clap_message(&e.to_string()));
                return ExitCode::from(1);
            }
        },
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();

    let result = init_threads(&cli).and_then(|()| rainlane_cli::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(classify(&e).exit_code() as u8)
        }
    }
}
