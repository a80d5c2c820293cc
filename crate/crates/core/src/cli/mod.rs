//! The `unineurons` command-line tool.
//!
//! Every subcommand writes `manifest.json` into its output directory before
//! any data file. Exit codes: 0 success, 1 usage or invalid argument, 2 data
//! error, 3 numeric failure.

mod commands;
mod manifest;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::ids::{HeadId, NeuronId};

pub use manifest::{Run, RunManifest, TokenCounts, MANIFEST};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "UNINEURONS_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "unineurons", version, about = "Neuron universality analyses for GPT2-style models")]
pub struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TokenArgs {
    /// Token stream file.
    #[arg(long)]
    pub tokens: PathBuf,
    /// JSON exclusion config (`padding`, `bos`, `newline` id lists).
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    /// Context windows evaluated per accumulation step.
    #[arg(long, default_value_t = 32)]
    pub batch_windows: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Correlate the neurons of two models over a token stream.
    Correlate {
        /// Reference model directory.
        #[arg(long)]
        model_a: PathBuf,
        /// Comparison model directory; may be the same as the reference.
        #[arg(long)]
        model_b: PathBuf,
        #[command(flatten)]
        tokens: TokenArgs,
        /// Seed of the random-rotation baseline.
        #[arg(long, default_value_t = 0)]
        baseline_seed: u64,
        /// Comparison columns per accumulator tile.
        #[arg(long, default_value_t = crate::corr::DEFAULT_TILE)]
        tile_size: usize,
        /// Excess correlation above which a neuron counts as universal.
        #[arg(long, default_value_t = crate::corr::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Also write the full correlation and baseline matrices as tensors.
        #[arg(long)]
        save_matrix: bool,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine correlate runs into universality flags and depth specialization.
    Universality {
        /// Output directories of `correlate` runs sharing one reference model.
        #[arg(long, num_args = 1.., required = true)]
        corr: Vec<PathBuf>,
        /// Excess correlation above which a neuron counts as universal.
        #[arg(long, default_value_t = crate::corr::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Activation moments, weight metrics and within-layer percentiles.
    Stats {
        /// Model directory.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        tokens: TokenArgs,
        /// A universality.csv whose flags are joined into the table.
        #[arg(long)]
        universality: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score label tests and position information against every neuron.
    Explain {
        /// Model directory.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        tokens: TokenArgs,
        /// JSON list of label tests.
        #[arg(long)]
        tests: PathBuf,
        /// Vocabulary metadata; defaults to `vocab.json` in the model directory.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Equal-mass activation bins for position information.
        #[arg(long, default_value_t = crate::taxonomy::DEFAULT_ACT_BINS)]
        act_bins: usize,
        /// Equal-width position bins.
        #[arg(long, default_value_t = crate::taxonomy::DEFAULT_POS_BINS)]
        pos_bins: usize,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a generated label-test suite for a vocabulary and corpus.
    Suite {
        /// `{"tokens": [...]}` vocabulary file.
        #[arg(long)]
        vocab: PathBuf,
        /// Token stream used to rank word unigrams.
        #[arg(long)]
        tokens: PathBuf,
        /// Most frequent word unigrams to include.
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Vocabulary-effect moments, classes and nearest weight neighbours.
    VocabEffects {
        /// Model directory.
        #[arg(long)]
        model: PathBuf,
        /// Kurtosis above which an effect counts as prediction or suppression.
        #[arg(long, default_value_t = crate::taxonomy::DEFAULT_KURTOSIS_THRESHOLD)]
        kurtosis_threshold: f64,
        /// Within-layer variance quantile that marks partition neurons.
        #[arg(long, default_value_t = crate::taxonomy::DEFAULT_VARIANCE_QUANTILE)]
        variance_quantile: f64,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fix a neuron across a value grid and track entropy and norm scale.
    InterveneEntropy(EntropyArgs),
    /// BOS gating scores, value-norm ratios and a neuron-to-head path ablation.
    AblateBos {
        /// Model directory.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        tokens: TokenArgs,
        /// Source neuron, e.g. `L4.3594`.
        #[arg(long, value_parser = parse_neuron)]
        neuron: NeuronId,
        /// Target attention head in a later layer, e.g. `L5.H0`.
        #[arg(long, value_parser = parse_head)]
        head: HeadId,
        /// Destination positions sampled for the path ablation.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// BOS token id; defaults to the first `bos` id of the exclusions.
        #[arg(long)]
        bos: Option<u32>,
        /// Random unit directions scored as the BOS-gating baseline.
        #[arg(long, default_value_t = 1000)]
        baseline_directions: usize,
        /// Seed for sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn analysis outputs into plot-ready tables.
    Report {
        /// Directory holding analysis outputs, searched one level deep.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    /// Model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub tokens: TokenArgs,
    /// Neuron to fix, e.g. `L11.584`.
    #[arg(long, value_parser = parse_neuron)]
    pub neuron: NeuronId,
    /// `start:stop:count` or a comma-separated ascending list.
    #[arg(long, value_parser = parse_grid_arg, default_value = "-2:10:11")]
    pub grid: Grid,
    /// Random control neurons from the final two layers.
    #[arg(long, default_value_t = 20)]
    pub controls: usize,
    /// Seed for sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_neuron(s: &str) -> std::result::Result<NeuronId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_head(s: &str) -> std::result::Result<HeadId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A parsed intervention value grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f32>);

fn parse_grid_arg(s: &str) -> std::result::Result<Grid, String> {
    parse_grid(s).map(Grid)
}

/// `start:stop:count` (inclusive ends) or `a,b,c`.
pub fn parse_grid(s: &str) -> std::result::Result<Vec<f32>, String> {
    let num = |t: &str| t.trim().parse::<f32>().map_err(|e| format!("bad grid value {t:?}: {e}"));
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(format!("grid {s:?} is not start:stop:count"));
        };
        let n: usize = n.trim().parse().map_err(|e| format!("bad grid count {n:?}: {e}"))?;
        crate::interventions::linspace(num(a)?, num(b)?, n)
    } else {
        s.split(',').map(num).collect::<std::result::Result<_, _>>()?
    };
    crate::interventions::validate_grid(&grid).map_err(|e| e.to_string())?;
    Ok(grid)
}

/// Parses `argv` and runs the command, returning the process exit code.
/// Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, &text) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command inside a thread pool of the requested size.
pub fn execute(cli: Cli, argv: &[String]) -> Result<()> {
    let workers = match cli.workers {
        Some(0) => return Err(Error::Invalid("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, argv, workers))
}
