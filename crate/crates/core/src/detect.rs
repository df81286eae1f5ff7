//! Logit-based and P(True) detectors.
//!
//! Every detector is oriented so that a larger score means "more likely
//! correct", which keeps AUC comparable across methods.

use std::fmt;
use std::str::FromStr;

use crate::data::{ProbingDataset, ProbingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    /// Raw natural-log token probabilities.
    Logprob,
    /// Token probabilities, `exp` applied per token before aggregation.
    Prob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Mean,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    FullAnswer,
    ExactSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectorSpec {
    pub quantity: Quantity,
    pub aggregate: Aggregate,
    pub scope: Scope,
}

/// A detector selectable by name on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    Aggregate(DetectorSpec),
    /// Stored P(True) score; `exact` additionally requires a located exact answer.
    PTrue { exact: bool },
}

impl Detector {
    /// The strongest logit baseline, used for baseline-adjusted generalization.
    pub const LOGITS_MIN_EXACT: Detector = Detector::Aggregate(DetectorSpec {
        quantity: Quantity::Logprob,
        aggregate: Aggregate::Min,
        scope: Scope::ExactSpan,
    });

    /// All CLI detector names.
    pub fn all_names() -> Vec<String> {
        let mut names = Vec::new();
        for q in ["logits", "probas"] {
            for a in ["mean", "min", "max"] {
                names.push(format!("{q}-{a}"));
                names.push(format!("{q}-{a}-exact"));
            }
        }
        names.push("p-true".into());
        names.push("p-true-exact".into());
        names
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let unknown = || Error::UnknownDetector(name.to_string());
        let (base, exact) = match name.strip_suffix("-exact") {
            Some(base) => (base, true),
            None => (name, false),
        };
        if base == "p-true" {
            return Ok(Detector::PTrue { exact });
        }
        let (quantity, aggregate) = base.split_once('-').ok_or_else(unknown)?;
        let quantity = match quantity {
            "logits" => Quantity::Logprob,
            "probas" => Quantity::Prob,
            _ => return Err(unknown()),
        };
        let aggregate = match aggregate {
            "mean" => Aggregate::Mean,
            "min" => Aggregate::Min,
            "max" => Aggregate::Max,
            _ => return Err(unknown()),
        };
        let scope = if exact {
            Scope::ExactSpan
        } else {
            Scope::FullAnswer
        };
        Ok(Detector::Aggregate(DetectorSpec {
            quantity,
            aggregate,
            scope,
        }))
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detector::PTrue { exact } => {
                write!(f, "p-true{}", if *exact { "-exact" } else { "" })
            }
            Detector::Aggregate(spec) => {
                let q = match spec.quantity {
                    Quantity::Logprob => "logits",
                    Quantity::Prob => "probas",
                };
                let a = match spec.aggregate {
                    Aggregate::Mean => "mean",
                    Aggregate::Min => "min",
                    Aggregate::Max => "max",
                };
                let s = match spec.scope {
                    Scope::FullAnswer => "",
                    Scope::ExactSpan => "-exact",
                };
                write!(f, "{q}-{a}{s}")
            }
        }
    }
}

pub fn aggregate_score(record: &ProbingRecord, spec: DetectorSpec) -> Result<f64> {
    let logprobs = match spec.scope {
        Scope::FullAnswer => &record.token_logprobs[..],
        Scope::ExactSpan => {
            let span = record
                .exact_span
                .ok_or_else(|| Error::MissingSpan(record.id.clone()))?;
            record
                .token_logprobs
                .get(span.first..=span.last)
                .ok_or(Error::SpanOutOfRange {
                    first: span.first,
                    last: span.last,
                    len: record.token_logprobs.len(),
                })?
        }
    };
    if logprobs.is_empty() {
        return Err(Error::EmptyTokenList(record.id.clone()));
    }
    let values = logprobs.iter().map(|&lp| match spec.quantity {
        Quantity::Logprob => lp,
        Quantity::Prob => lp.exp(),
    });
    Ok(match spec.aggregate {
        Aggregate::Mean => values.sum::<f64>() / logprobs.len() as f64,
        Aggregate::Min => values.fold(f64::INFINITY, f64::min),
        Aggregate::Max => values.fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn p_true_score(record: &ProbingRecord) -> Result<f64> {
    record
        .p_true
        .ok_or_else(|| Error::MissingPTrue(record.id.clone()))
}

pub fn score(record: &ProbingRecord, detector: Detector) -> Result<f64> {
    match detector {
        Detector::Aggregate(spec) => aggregate_score(record, spec),
        Detector::PTrue { exact } => {
            if exact && record.exact_span.is_none() {
                return Err(Error::MissingSpan(record.id.clone()));
            }
            p_true_score(record)
        }
    }
}

/// Scores of labeled records, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorScores {
    pub record_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    /// Labeled records lacking a field the detector needs.
    pub skipped: usize,
}

/// Scores every labeled, non-refusal record; records the detector cannot
/// score are counted in `skipped`.
pub fn detector_scores(dataset: &ProbingDataset, detector: Detector) -> DetectorScores {
    let mut out = DetectorScores::default();
    for r in dataset.records.iter().filter(|r| r.is_labeled()) {
        match score(r, detector) {
            Ok(s) => {
                out.record_ids.push(r.id.clone());
                out.scores.push(s);
                out.labels.push(r.correct == Some(true));
            }
            Err(_) => out.skipped += 1,
        }
    }
    out
}
