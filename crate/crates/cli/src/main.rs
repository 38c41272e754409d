use std::path::PathBuf;
use std::process::ExitCode;

use adadedup::pipeline::Selector;
use adadedup::{Error, Result};
use adadedup_cli::*;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adadedup", version, about = "Cluster-adaptive density de-duplication")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Random,
    GlobalDedup,
    SseUniform,
}

impl From<BaselineKind> for Selector {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::Random => Selector::Random,
            BaselineKind::GlobalDedup => Selector::GlobalDedup,
            BaselineKind::SseUniform => Selector::SseUniform,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit k-means and write the assignment and centroids.
    Cluster,
    /// Budgeted threshold de-duplication; writes the initial manifest.
    PruneInit,
    /// Density-proxy losses against the initial selection, or a validated copy of external ones.
    Losses,
    /// Adjust per-cluster ratios from the losses and re-select; writes the final manifest.
    Adapt,
    /// cluster, prune-init, losses and adapt in sequence, plus a hash summary.
    Run,
    /// Write a baseline selection manifest.
    Baseline {
        #[arg(value_enum)]
        selector: BaselineKind,
    },
    /// Generate a synthetic dataset from a JSON spec.
    Synth { spec: PathBuf },
    /// Per-cluster loss and neighbourhood tables for the latest manifest.
    Report {
        #[arg(long, default_value_t = 10)]
        k_neighbors: usize,
    },
    /// Convert a numeric CSV into the binary embedding format.
    EmbedImport {
        csv: PathBuf,
        /// First line is a header.
        #[arg(long)]
        header: bool,
        /// First column holds external sample ids.
        #[arg(long)]
        id_column: bool,
    },
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| Error::InvalidConfig("--out is required".into()))
}

fn execute(cli: Cli) -> Result<String> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("--threads: {e}")))?;
    }
    let context = || -> Result<Context> {
        let path = cli.config.as_deref().ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
        Context::new(RunConfig::load(path)?, cli.out.clone(), cli.seed)
    };
    match cli.command {
        Command::Cluster => cmd_cluster(&context()?),
        Command::PruneInit => cmd_prune_init(&context()?),
        Command::Losses => cmd_losses(&context()?),
        Command::Adapt => cmd_adapt(&context()?),
        Command::Run => cmd_run(&context()?),
        Command::Baseline { selector } => cmd_baseline(&context()?, selector.into()),
        Command::Report { k_neighbors } => cmd_report(&context()?, k_neighbors),
        Command::Synth { ref spec } => cmd_synth(spec, &require_out(cli.out.clone())?),
        Command::EmbedImport { ref csv, header, id_column } => {
            cmd_embed_import(csv, &require_out(cli.out.clone())?, header, id_column)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(log) => {
            println!("{log}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
