use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use truthprobe::taxonomy::TypeQuery;
use truthprobe::{Cell, Detector, TrainConfig};

mod commands;
mod provenance;

/// Truthfulness probing over LLM activation dumps.
#[derive(Debug, Parser)]
#[command(name = "truthprobe", version, about)]
struct Cli {
    /// Seed for splits, bootstrap and random selection. `synth` uses it to
    /// override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dump against every record invariant.
    Validate {
        dir: PathBuf,
        /// Write the violation report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe every (layer, position) cell and write the validation-AUC grid.
    Sweep {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render the grid as an SVG heatmap.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score records with a logit-based or P(True) detector.
    Detect {
        dir: PathBuf,
        /// Detector name, e.g. logits-min-exact; repeat or pass `all`.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one probe at a cell; the best sweep cell when omitted.
    Train {
        dir: PathBuf,
        #[arg(long)]
        cell: Option<Cell>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a saved probe with bootstrap spread.
    Eval {
        dir: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long, default_value_t = truthprobe::eval::DEFAULT_BOOTSTRAP_SEEDS)]
        bootstrap: usize,
        /// Which labeled records to score.
        #[arg(long, value_enum, default_value_t = EvalRecords::Validation)]
        records: EvalRecords,
        /// Fraction used for training when re-deriving the validation split.
        #[arg(long, default_value_t = TrainConfig::default().train_fraction)]
        train_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on each dump, test on every other, and write the matrix.
    Generalize {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Render the baseline-adjusted matrix as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Classify each question by the error type of its resampled answers.
    Taxonomy {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe whether greedy hidden states predict an error type.
    Typeprobe {
        dir: PathBuf,
        /// A leaf type (A, B1, ..., E2) or a group (B, C, E).
        #[arg(long = "type")]
        error_type: TypeQuery,
        /// Cell to probe; the best correctness-sweep cell when omitted.
        #[arg(long)]
        cell: Option<Cell>,
        #[arg(long, default_value_t = truthprobe::eval::DEFAULT_BOOTSTRAP_SEEDS)]
        bootstrap: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Pick an answer among resamples and report accuracy per error type.
    Select {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::All)]
        strategy: StrategyArg,
        /// Probe for the `probe` strategy.
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Types with fewer questions are left out of the report.
        #[arg(long, default_value_t = truthprobe::select::DEFAULT_MIN_COUNT)]
        min_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dump with planted structure.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Config of a second dump generated as a pair with the first.
        #[arg(long, requires = "pair_out")]
        pair_config: Option<PathBuf>,
        #[arg(long, requires = "pair_config")]
        pair_out: Option<PathBuf>,
        /// Give the pair orthogonal planted directions instead of a shared one.
        #[arg(long)]
        orthogonal: bool,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// L2 penalty on the probe weights.
    #[arg(long, default_value_t = TrainConfig::default().l2_strength)]
    l2: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_iterations)]
    max_iterations: usize,
    #[arg(long, default_value_t = TrainConfig::default().train_fraction)]
    train_fraction: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            l2_strength: self.l2,
            max_iterations: self.max_iterations,
            train_fraction: self.train_fraction,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalRecords {
    /// Records in the held-out split the probe's seed produces.
    Validation,
    /// Every labeled record.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Greedy,
    Random,
    Majority,
    Probe,
    /// Every strategy; `probe` only when a probe is given.
    All,
}

/// Raised for argument combinations clap cannot check on its own.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn parse_detectors(names: &[String]) -> Result<Vec<Detector>, UsageError> {
    if names.iter().any(|n| n == "all") {
        return Ok(Detector::all_names()
            .iter()
            .map(|n| n.parse().expect("listed names parse"))
            .collect());
    }
    names
        .iter()
        .map(|n| {
            n.parse().map_err(|_| {
                UsageError(format!(
                    "unknown detector {n:?}; expected one of: {}",
                    Detector::all_names().join(", ")
                ))
            })
        })
        .collect()
}

fn configure_threads() {
    if let Some(n) = std::env::var("TRUTHPROBE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
