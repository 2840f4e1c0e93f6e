use clap::Parser;

use adareg_cli::cli::Cli;
use adareg_cli::{commands, exit};

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(err) = commands::run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit::code(&err));
    }
}
