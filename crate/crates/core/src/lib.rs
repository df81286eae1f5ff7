#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Truthfulness probing for language-model dumps.
//!
//! A dump directory holds one record per question: the generated answer with
//! token offsets and log-probabilities, the exact-answer span, a correctness
//! label and hidden states at a few named token positions for every layer.
//! This crate reads and validates dumps, scores them with logit-based
//! detectors, trains linear probes over the (layer, position) grid, measures
//! transfer between datasets, buckets questions by the error type their
//! resampled answers reveal, and picks answers among resamples.
//!
//! ```
//! use truthprobe::synth::{generate_planted, SynthConfig};
//! use truthprobe::probe::{sweep, TrainConfig};
//!
//! let config = SynthConfig { num_records: 200, num_layers: 2, hidden_dim: 8, ..Default::default() };
//! # let config = SynthConfig { planted_cell: truthprobe::eval::Cell::new(1, "exact_last"), ..config };
//! let (dataset, truth) = generate_planted(&config).unwrap();
//! let grid = sweep(&dataset, &TrainConfig::default()).unwrap();
//! assert_eq!(grid.select_best_cell().unwrap(), truth.cell);
//! ```

pub mod data;
pub mod detect;
mod error;
pub mod eval;
pub mod localize;
pub mod probe;
pub mod select;
pub mod synth;
pub mod taxonomy;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{load_dataset, read_dataset, validate_dataset, write_dataset, ProbingDataset, ProbingRecord};
pub use detect::Detector;
pub use error::{Error, Result};
pub use eval::{auc, Cell};
pub use probe::{LinearProbe, TrainConfig};
pub use taxonomy::{ErrorType, ErrorTypeLabel};

/// Code samples in the guide under `book/` are compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/data-format.md")]
    struct DataFormat;
    #[doc = include_str!("../../../book/src/exact-answers.md")]
    struct ExactAnswers;
    #[doc = include_str!("../../../book/src/detectors.md")]
    struct Detectors;
    #[doc = include_str!("../../../book/src/probing.md")]
    struct Probing;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    struct Taxonomy;
    #[doc = include_str!("../../../book/src/selection.md")]
    struct Selection;
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    struct SyntheticData;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
