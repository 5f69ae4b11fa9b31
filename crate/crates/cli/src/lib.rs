//! Command-line front end: `lus prepare | train | evaluate | predict | plot`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use error::{CliResult, Classify};

/// Resolve configuration and run one subcommand.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = config::resolve(&cli.common.overrides()).usage()?;
    match &cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Evaluate { split, checkpoint } => commands::evaluate(&cfg, (*split).into(), checkpoint.as_deref()),
        Command::Predict { checkpoint, output, json, paths } => {
            commands::predict(&cfg, checkpoint.as_deref(), output.as_deref(), *json, paths)
        }
        Command::Plot { history, out } => commands::plot(&cfg, history.as_deref(), out.as_deref()),
    }
}
