//! `condscope`: measure, prune and benchmark conditional embeddings, and
//! train/sample the toy AdaLN diffusion model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or contract error.
//! stdout carries a single summary line; diagnostics go to stderr.

mod commands;
mod error;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "condscope", version, about = "Forensics for conditional embeddings in AdaLN diffusion transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "y")]
    Y,
    #[value(name = "t")]
    T,
    #[value(name = "y+t")]
    YPlusT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PruneModeArg {
    Tail,
    Head,
    KeepTopK,
    ZeroTopK,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cosine, participation ratio, sparsity and variance report for an embedding matrix.
    Analyze {
        /// N×d embeddings (or a single d-vector).
        emb: PathBuf,
        /// Timestep embeddings added to `emb` in y+t mode: one row, or one per row of `emb`.
        #[arg(long)]
        timestep_emb: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Magnitude thresholds for the tail fraction and head count.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.02")]
        tau: Vec<f64>,
        /// Also report the participation ratio of every row.
        #[arg(long)]
        per_row: bool,
        /// Row dropped before analysis, e.g. a null class.
        #[arg(long)]
        exclude_row: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero coordinates of every row by magnitude.
    Prune {
        emb: PathBuf,
        #[arg(long, value_enum)]
        mode: PruneModeArg,
        #[arg(long, conflicts_with = "k")]
        tau: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, required_unless_present = "count_only")]
        out: Option<PathBuf>,
        /// Only print `removed/total (pct%)`.
        #[arg(long)]
        count_only: bool,
    },
    /// Train the toy model, writing the monitoring trace and a checkpoint.
    TrainToy {
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// DDPM sampling from a checkpoint, optionally pruning the condition vector.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        /// `tail:TAU`, `head:TAU`, `keep-top-k:K`, `zero-top-k:K`; TAU may be `AUTO<pct>`.
        #[arg(long)]
        prune: Option<String>,
        /// `every`, `initial`, `lastk` or `lastk:K`; defaults to `every`.
        #[arg(long, requires = "prune")]
        schedule: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eval: PathBuf,
    },
    /// Dense versus sparse matrix-vector timing; a sparsity list writes a CSV sweep.
    BenchSparse {
        #[arg(long, default_value_t = 1152)]
        d: usize,
        /// Defaults to 2d.
        #[arg(long)]
        out_dim: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.9")]
        sparsity: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Analyze {
            emb,
            timestep_emb,
            mode,
            tau,
            per_row,
            exclude_row,
            out,
        } => commands::analyze(&commands::AnalyzeArgs {
            emb,
            timestep_emb,
            mode,
            taus: tau,
            per_row,
            exclude_row,
            out,
        }),
        Command::Prune {
            emb,
            mode,
            tau,
            k,
            out,
            count_only,
        } => commands::prune(&emb, mode, tau, k, out.as_deref(), count_only),
        Command::TrainToy { config, seed, trace, ckpt } => commands::train_toy(config.as_deref(), seed, &trace, &ckpt),
        Command::Sample {
            ckpt,
            per_class,
            prune,
            schedule,
            seed,
            out,
            eval,
        } => commands::sample(&ckpt, per_class, prune.as_deref(), schedule.as_deref(), seed, &out, &eval),
        Command::BenchSparse {
            d,
            out_dim,
            sparsity,
            iters,
            seed,
            out,
        } => commands::bench_sparse(d, out_dim, &sparsity, iters, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
