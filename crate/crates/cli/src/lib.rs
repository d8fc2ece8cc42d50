//! The `gsp` command line: one entry point per stage of an experiment.

pub mod analyze;
pub mod args;
pub mod commands;
pub mod error;
pub mod tables;

use std::path::PathBuf;

use gsp_sim::Scenario;

pub use args::{Cli, Command, Embedding};
pub use error::{CliError, Result};

/// Run a parsed invocation; returns the artifacts written, in a fixed
/// order.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let out = cli.out.clone();
    let default_log = || out.join(commands::LOG_FILE);
    let config = || commands::load_config(cli.config.as_deref(), &cli.overrides, cli.seed);
    match cli.command {
        Command::Serve { ref log } => {
            let log = log.clone().unwrap_or_else(default_log);
            commands::serve(config()?, &log, &out)?;
            Ok(vec![log])
        }
        Command::Simulate {
            ref scenario,
            render,
            no_validation,
        } => {
            let mut scenario = match scenario {
                Some(p) => Scenario::load(p)?,
                None => Scenario::default(),
            };
            if let Some(seed) = cli.seed {
                scenario.seed = seed;
            }
            let opts = commands::SimulateOptions {
                scenario,
                render,
                validation: !no_validation,
            };
            Ok(commands::simulate(config()?, &opts, &out)?.0)
        }
        Command::Validate { ref log } => commands::validate(&config()?, log.as_deref(), &out),
        Command::Analyze { ref log, embedding } => {
            let log = log.clone().unwrap_or_else(default_log);
            // only an explicit config replaces the log's renderer settings
            let config = match (&cli.config, cli.overrides.is_empty()) {
                (None, true) => None,
                _ => Some(config()?),
            };
            let opts = analyze::AnalyzeOptions {
                embedding,
                seed: cli.seed,
                config,
                stimuli: None,
            };
            Ok(analyze::analyze(&log, &opts, &out)?.0)
        }
        Command::Render {
            ref weights,
            ref indices,
            ref sentence,
        } => {
            let input = if indices.is_empty() {
                commands::RenderInput::Weights(weights.clone())
            } else {
                commands::RenderInput::Indices(indices.clone())
            };
            Ok(vec![commands::render(&config()?, input, sentence.as_deref(), &out)?])
        }
        Command::Export { ref log } => {
            let log = log.clone().unwrap_or_else(default_log);
            commands::export(&log, &out)
        }
    }
}
