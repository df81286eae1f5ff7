//! Activation-dump data model.
//!
//! A dump is a directory holding `manifest.jsonl` (one record per line),
//! `activations.bin` (a sequence of `TPAB` blocks) and optionally
//! `resamples.jsonl`. See [`format`] for the byte layout.

pub mod format;
pub mod validate;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::localize::TokenSpan;

pub use format::{load_dataset, read_dataset, write_dataset, BLOCK_MAGIC};
pub use validate::{validate_dataset, Invariant, ValidationReport, Violation};

/// Reserved position names besides `gen_<i>`.
pub const RESERVED_POSITIONS: [&str; 7] = [
    "eoq",
    "gen_-1",
    "gen_-2",
    "exact_before",
    "exact_first",
    "exact_last",
    "exact_after",
];

/// One generated token with its character range in the answer text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedToken {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl GeneratedToken {
    pub fn new(text: impl Into<String>, char_start: usize, char_end: usize) -> Self {
        GeneratedToken {
            text: text.into(),
            char_start,
            char_end,
        }
    }
}

/// Hidden states of every layer at one token position, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBlock {
    num_layers: usize,
    hidden_dim: usize,
    values: Vec<f32>,
}

impl ActivationBlock {
    pub fn new(num_layers: usize, hidden_dim: usize, values: Vec<f32>) -> Result<Self> {
        if num_layers == 0 || hidden_dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "block dimensions must be positive, got L={num_layers} d={hidden_dim}"
            )));
        }
        if values.len() != num_layers * hidden_dim {
            return Err(Error::DimensionMismatch(format!(
                "block with L={num_layers} d={hidden_dim} needs {} values, got {}",
                num_layers * hidden_dim,
                values.len()
            )));
        }
        Ok(ActivationBlock {
            num_layers,
            hidden_dim,
            values,
        })
    }

    pub fn zeros(num_layers: usize, hidden_dim: usize) -> Self {
        ActivationBlock {
            num_layers,
            hidden_dim,
            values: vec![0.0; num_layers * hidden_dim],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Hidden vector at `layer`. Panics if the layer is out of range.
    pub fn layer(&self, layer: usize) -> &[f32] {
        let d = self.hidden_dim;
        &self.values[layer * d..(layer + 1) * d]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [f32] {
        let d = self.hidden_dim;
        &mut self.values[layer * d..(layer + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One question/answer episode with its greedy generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingRecord {
    pub id: String,
    pub question: String,
    pub gold_aliases: Vec<String>,
    pub generated_answer: String,
    pub generated_tokens: Vec<GeneratedToken>,
    /// Natural-log probability of each generated token.
    pub token_logprobs: Vec<f64>,
    pub exact_answer: Option<String>,
    pub exact_span: Option<TokenSpan>,
    /// Absent for refusals and for unlabeled records.
    pub correct: Option<bool>,
    pub refusal: bool,
    pub p_true: Option<f64>,
    pub activations: IndexMap<String, ActivationBlock>,
}

impl ProbingRecord {
    /// Whether the record takes part in detection: labeled and not a refusal.
    pub fn is_labeled(&self) -> bool {
        !self.refusal && self.correct.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleSample {
    pub answer: String,
    pub exact_answer: Option<String>,
    pub correct: Option<bool>,
    pub refusal: bool,
    /// Hidden states at the sample's exact-answer position.
    pub activation: Option<ActivationBlock>,
}

impl ResampleSample {
    pub fn is_correct(&self) -> bool {
        !self.refusal && self.correct == Some(true)
    }
}

/// The K temperature samples drawn for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleSet {
    pub record_id: String,
    pub temperature: f64,
    pub samples: Vec<ResampleSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbingDataset {
    pub name: String,
    pub records: Vec<ProbingRecord>,
    pub resamples: Option<IndexMap<String, ResampleSet>>,
    pub position_names: Vec<String>,
}

impl ProbingDataset {
    /// Builds a dataset, taking the position order from the first record.
    pub fn new(
        name: impl Into<String>,
        records: Vec<ProbingRecord>,
        resamples: Option<IndexMap<String, ResampleSet>>,
    ) -> Self {
        let position_names = records
            .first()
            .map(|r| r.activations.keys().cloned().collect())
            .unwrap_or_default();
        ProbingDataset {
            name: name.into(),
            records,
            resamples,
            position_names,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(num_layers, hidden_dim)` of the first activation block, if any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.records
            .iter()
            .flat_map(|r| r.activations.values())
            .next()
            .map(|b| (b.num_layers(), b.hidden_dim()))
    }

    pub fn num_layers(&self) -> usize {
        self.dims().map_or(0, |(l, _)| l)
    }

    pub fn position_index(&self, name: &str) -> Option<usize> {
        self.position_names.iter().position(|p| p == name)
    }

    /// Indices of labeled, non-refusal records in manifest order.
    pub fn labeled_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_labeled())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn resample_set(&self, record_id: &str) -> Option<&ResampleSet> {
        self.resamples.as_ref()?.get(record_id)
    }
}
