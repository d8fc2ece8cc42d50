use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gsp", version, about = "Gibbs sampling with people: emotional prosody experiments")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the experiment seed; for `simulate` also the agent seed,
    /// for `analyze` the bootstrap and classifier seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Flat dotted config override, e.g. `grid.n=16`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service until interrupted or validation completes.
    Serve {
        /// Event log; created when missing. Default: OUT/events.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a closed-loop simulation and write its event log and summary.
    Simulate {
        /// Scenario file (TOML) with targets, agent policy and timing.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Render every stimulus the simulated participants hear.
        #[arg(long)]
        render: bool,
        /// Stop after the slider phase.
        #[arg(long)]
        no_validation: bool,
    },
    /// Check the config; with a log, also write its validation set.
    Validate {
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write the analysis report for a log.
    Analyze {
        /// Default: OUT/events.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Embedding::Prosody)]
        embedding: Embedding,
    },
    /// Render one stimulus to OUT/<stimulus id>.wav.
    Render {
        /// Control weights, comma separated. Default: all zero.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "indices")]
        weights: Vec<f64>,
        /// Grid indices per dimension instead of raw weights.
        #[arg(long, value_delimiter = ',')]
        indices: Vec<usize>,
        /// Default: the first configured sentence.
        #[arg(long)]
        sentence: Option<String>,
    },
    /// Write a verified copy of a log plus chain, trajectory and rating tables.
    Export {
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

/// What the PCA section treats as a stimulus's style embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedding {
    /// Prosody parameters the renderer derives from the weights (or the
    /// embedding an external renderer reports).
    Prosody,
    /// The raw latent weights.
    Latent,
}
