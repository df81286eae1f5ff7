use std::collections::HashSet;
use std::fmt;

use super::ProbingDataset;
use crate::localize::{char_slice, check_offsets};

/// A dataset invariant that a record can break.
#[derive(Debug, Clone, PartialEq)]
pub enum Invariant {
    DuplicateId,
    LogprobCount { tokens: usize, logprobs: usize },
    PositiveLogprob { index: usize },
    TokenOffsets(String),
    SpanOrder { first: usize, last: usize },
    SpanOutOfRange { last: usize, len: usize },
    SpanMissesExactAnswer,
    SpanWithoutExactAnswer,
    RefusalWithLabel,
    PTrueOutOfRange(f64),
    PositionSet,
    BlockDims { layers: usize, dim: usize },
    NonFiniteActivation { position: String },
    OrphanResampleSet,
    EmptyResampleSet,
    UnlabeledSample { index: usize },
    SampleBlockDims { index: usize },
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Invariant::DuplicateId => write!(f, "id: record ids must be unique"),
            Invariant::LogprobCount { tokens, logprobs } => write!(
                f,
                "token_logprobs: length {logprobs} differs from {tokens} generated tokens"
            ),
            Invariant::PositiveLogprob { index } => {
                write!(f, "token_logprobs[{index}]: log-probability must be finite and <= 0")
            }
            Invariant::TokenOffsets(msg) => write!(f, "generated_tokens: {msg}"),
            Invariant::SpanOrder { first, last } => {
                write!(f, "exact_span: first ({first}) must be <= last ({last})")
            }
            Invariant::SpanOutOfRange { last, len } => {
                write!(f, "exact_span: last ({last}) must be < {len} generated tokens")
            }
            Invariant::SpanMissesExactAnswer => {
                write!(f, "exact_span: character range does not contain exact_answer")
            }
            Invariant::SpanWithoutExactAnswer => {
                write!(f, "exact_span: present without an exact_answer")
            }
            Invariant::RefusalWithLabel => write!(f, "correct: refusals must have no label"),
            Invariant::PTrueOutOfRange(p) => write!(f, "p_true: {p} is outside [0, 1]"),
            Invariant::PositionSet => {
                write!(f, "activation_offsets: position set differs from the dataset's")
            }
            Invariant::BlockDims { layers, dim } => write!(
                f,
                "activations: block shape L={layers} d={dim} differs from the dataset's"
            ),
            Invariant::NonFiniteActivation { position } => {
                write!(f, "activations[{position}]: non-finite value")
            }
            Invariant::OrphanResampleSet => write!(f, "resamples: id has no manifest record"),
            Invariant::EmptyResampleSet => write!(f, "resamples: K must be at least 1"),
            Invariant::UnlabeledSample { index } => {
                write!(f, "resamples[{index}]: non-refusal sample lacks a correct flag")
            }
            Invariant::SampleBlockDims { index } => {
                write!(f, "resamples[{index}]: activation block shape differs from the dataset's")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record_id: String,
    pub invariant: Invariant,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, record_id: &str, invariant: Invariant) {
        self.violations.push(Violation {
            record_id: record_id.to_string(),
            invariant,
        });
    }
}

/// Checks every dataset invariant and reports violations in record order.
pub fn validate_dataset(dataset: &ProbingDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let dims = dataset.dims();
    let expected_positions: HashSet<&str> =
        dataset.position_names.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();

    for r in &dataset.records {
        let id = r.id.as_str();
        if !seen.insert(id) {
            report.push(id, Invariant::DuplicateId);
        }
        let n = r.generated_tokens.len();
        if r.token_logprobs.len() != n {
            report.push(
                id,
                Invariant::LogprobCount {
                    tokens: n,
                    logprobs: r.token_logprobs.len(),
                },
            );
        }
        if let Some(index) = r
            .token_logprobs
            .iter()
            .position(|lp| !(lp.is_finite() && *lp <= 0.0))
        {
            report.push(id, Invariant::PositiveLogprob { index });
        }
        let offsets_ok = match check_offsets(&r.generated_tokens, &r.generated_answer) {
            Ok(()) => true,
            Err(e) => {
                report.push(id, Invariant::TokenOffsets(e.to_string()));
                false
            }
        };
        if let Some(span) = r.exact_span {
            if span.first > span.last {
                report.push(
                    id,
                    Invariant::SpanOrder {
                        first: span.first,
                        last: span.last,
                    },
                );
            } else if span.last >= n {
                report.push(id, Invariant::SpanOutOfRange { last: span.last, len: n });
            } else if offsets_ok {
                match &r.exact_answer {
                    Some(exact) => {
                        let start = r.generated_tokens[span.first].char_start;
                        let end = r.generated_tokens[span.last].char_end;
                        let covered = char_slice(&r.generated_answer, start, end)
                            .is_some_and(|s| s.contains(exact.as_str()));
                        if !covered {
                            report.push(id, Invariant::SpanMissesExactAnswer);
                        }
                    }
                    None => report.push(id, Invariant::SpanWithoutExactAnswer),
                }
            }
        }
        if r.refusal && r.correct.is_some() {
            report.push(id, Invariant::RefusalWithLabel);
        }
        if let Some(p) = r.p_true {
            if !(0.0..=1.0).contains(&p) {
                report.push(id, Invariant::PTrueOutOfRange(p));
            }
        }
        let positions: HashSet<&str> = r.activations.keys().map(String::as_str).collect();
        if positions != expected_positions || r.activations.len() != expected_positions.len() {
            report.push(id, Invariant::PositionSet);
        }
        for (name, block) in &r.activations {
            if Some((block.num_layers(), block.hidden_dim())) != dims {
                report.push(
                    id,
                    Invariant::BlockDims {
                        layers: block.num_layers(),
                        dim: block.hidden_dim(),
                    },
                );
            }
            if !block.is_finite() {
                report.push(
                    id,
                    Invariant::NonFiniteActivation {
                        position: name.clone(),
                    },
                );
            }
        }
    }

    if let Some(resamples) = &dataset.resamples {
        for (key, set) in resamples {
            let id = key.as_str();
            if !seen.contains(id) || set.record_id != *key {
                report.push(id, Invariant::OrphanResampleSet);
            }
            if set.samples.is_empty() {
                report.push(id, Invariant::EmptyResampleSet);
            }
            for (index, s) in set.samples.iter().enumerate() {
                if !s.refusal && s.correct.is_none() {
                    report.push(id, Invariant::UnlabeledSample { index });
                }
                if let Some(block) = &s.activation {
                    let shape = (block.num_layers(), block.hidden_dim());
                    if dims.is_some_and(|d| d != shape) || !block.is_finite() {
                        report.push(id, Invariant::SampleBlockDims { index });
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;

    use super::*;
    use crate::data::{ActivationBlock, GeneratedToken, ProbingRecord};
    use crate::localize::TokenSpan;

    fn record(id: &str) -> ProbingRecord {
        ProbingRecord {
            id: id.into(),
            question: "q".into(),
            gold_aliases: vec!["b".into()],
            generated_answer: "a b c d".into(),
            generated_tokens: vec![
                GeneratedToken::new("a", 0, 1),
                GeneratedToken::new(" b", 1, 3),
                GeneratedToken::new(" c", 3, 5),
                GeneratedToken::new(" d", 5, 7),
            ],
            token_logprobs: vec![-0.5, -0.1, -0.2, -0.3],
            exact_answer: Some("b".into()),
            exact_span: Some(TokenSpan::new(1, 1)),
            correct: Some(true),
            refusal: false,
            p_true: None,
            activations: IndexMap::from([("eoq".to_string(), ActivationBlock::zeros(2, 2))]),
        }
    }

    fn dataset(records: Vec<ProbingRecord>) -> ProbingDataset {
        ProbingDataset::new("t", records, None)
    }

    #[test]
    fn valid_dataset_has_empty_report() {
        let ds = dataset(vec![record("a"), record("b")]);
        let report = validate_dataset(&ds);
        assert!(report.is_empty(), "{report:?}");
        assert_eq!(report, validate_dataset(&ds));
    }

    #[test]
    fn short_logprobs_flagged() {
        let mut r = record("a");
        r.token_logprobs.pop();
        let report = validate_dataset(&dataset(vec![r]));
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0].invariant,
            Invariant::LogprobCount { tokens: 4, logprobs: 3 }
        ));
    }

    #[test]
    fn reversed_span_flagged() {
        let mut r = record("a");
        r.exact_span = Some(TokenSpan::new(3, 2));
        let report = validate_dataset(&dataset(vec![r]));
        assert_eq!(report.violations.len(), 1);
        assert_eq!(
            report.violations[0].invariant,
            Invariant::SpanOrder { first: 3, last: 2 }
        );
    }

    #[test]
    fn other_violations() {
        let mut r = record("a");
        r.refusal = true;
        r.token_logprobs[0] = 0.1;
        r.exact_span = Some(TokenSpan::new(2, 3));
        let mut other = record("a");
        other.activations.insert("exact_last".into(), ActivationBlock::zeros(2, 2));
        let report = validate_dataset(&dataset(vec![r, other]));
        let kinds: Vec<_> = report.violations.iter().map(|v| v.invariant.clone()).collect();
        assert!(kinds.contains(&Invariant::RefusalWithLabel));
        assert!(kinds.contains(&Invariant::PositiveLogprob { index: 0 }));
        assert!(kinds.contains(&Invariant::SpanMissesExactAnswer));
        assert!(kinds.contains(&Invariant::DuplicateId));
        assert!(kinds.contains(&Invariant::PositionSet));
    }
}
