//! Choosing one answer per question among its resamples.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{ProbingDataset, ProbingRecord, ResampleSet};
use crate::error::{Error, Result};
use crate::probe::LinearProbe;
use crate::taxonomy::{answer_key, answer_stats, classify_error_type, ErrorType};

/// Default minimum number of questions for a type to appear in a report.
pub const DEFAULT_MIN_COUNT: usize = 30;

#[derive(Debug, Clone)]
pub enum SelectionStrategy {
    /// Keep the greedy answer.
    Greedy,
    /// Uniform seeded draw among the samples.
    Random { seed: u64 },
    /// Most frequent normalized answer.
    Majority,
    /// Sample whose exact-answer hidden state the probe rates most likely correct.
    Probe(LinearProbe),
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::Greedy => "greedy",
            SelectionStrategy::Random { .. } => "random",
            SelectionStrategy::Majority => "majority",
            SelectionStrategy::Probe(_) => "probe",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selection {
    Greedy,
    Sample(usize),
}

impl Selection {
    pub fn is_correct(&self, record: &ProbingRecord, resamples: &ResampleSet) -> bool {
        match *self {
            Selection::Greedy => !record.refusal && record.correct == Some(true),
            Selection::Sample(i) => resamples.samples[i].is_correct(),
        }
    }
}

/// FNV-1a, used to derive a per-record stream from the random seed.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn argmax_first(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks an answer; ties always go to the earliest sample.
pub fn select_answer(
    record: &ProbingRecord,
    resamples: &ResampleSet,
    strategy: &SelectionStrategy,
) -> Result<Selection> {
    if matches!(strategy, SelectionStrategy::Greedy) {
        return Ok(Selection::Greedy);
    }
    let samples = &resamples.samples;
    if samples.is_empty() {
        return Err(Error::EmptyResamples(record.id.clone()));
    }
    match strategy {
        SelectionStrategy::Greedy => unreachable!(),
        SelectionStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&record.id));
            Ok(Selection::Sample(rng.random_range(0..samples.len())))
        }
        SelectionStrategy::Majority => {
            // Count per key, remembering where each key first appeared.
            let mut counts: Vec<(String, usize, usize)> = Vec::new();
            for (i, s) in samples.iter().enumerate().filter(|(_, s)| !s.refusal) {
                let key = answer_key(&s.answer, s.exact_answer.as_deref());
                match counts.iter_mut().find(|(k, _, _)| *k == key) {
                    Some(entry) => entry.1 += 1,
                    None => counts.push((key, 1, i)),
                }
            }
            let pick = argmax_first(counts.iter().map(|(_, c, first)| (*first, *c as f64)));
            Ok(Selection::Sample(pick.unwrap_or(0)))
        }
        SelectionStrategy::Probe(probe) => {
            let mut rows = Vec::new();
            // Refusals have no exact answer, so they are never candidates.
            for (i, s) in samples.iter().enumerate().filter(|(_, s)| !s.refusal) {
                match &s.activation {
                    Some(block) => {
                        if probe.layer >= block.num_layers() {
                            return Err(Error::LayerOutOfRange {
                                layer: probe.layer,
                                num_layers: block.num_layers(),
                            });
                        }
                        rows.push((i, block.layer(probe.layer)));
                    }
                    None => {
                        return Err(Error::MissingActivations(format!(
                            "record {} sample {i} has no exact-answer activation",
                            record.id
                        )))
                    }
                }
            }
            if rows.is_empty() {
                return Ok(Selection::Sample(0));
            }
            let dim = rows[0].1.len();
            let mut x = Array2::zeros((rows.len(), dim));
            for (r, (_, values)) in rows.iter().enumerate() {
                if values.len() != dim {
                    return Err(Error::DimensionMismatch("sample blocks differ in width".into()));
                }
                for (o, v) in x.row_mut(r).iter_mut().zip(values.iter()) {
                    *o = f64::from(*v);
                }
            }
            // Decision values rank exactly like the sigmoid scores, without
            // saturating to ties.
            let scores = probe.decision_function(x.view())?;
            let best = argmax_first(rows.iter().map(|(i, _)| *i).zip(scores)).unwrap();
            Ok(Selection::Sample(best))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    /// `all` or an error type name.
    #[serde(rename = "type")]
    pub type_name: String,
    pub n: usize,
    pub accuracy: f64,
}

/// Per-type accuracy of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub strategy: String,
    /// Every row, including types below `min_count`.
    pub rows: Vec<AccuracyRow>,
    pub min_count: usize,
}

impl SelectionReport {
    /// Rows meeting `min_count`; the overall row is always kept.
    pub fn reported(&self) -> impl Iterator<Item = &AccuracyRow> {
        self.rows
            .iter()
            .filter(|r| r.type_name == "all" || r.n >= self.min_count)
    }

    pub fn row(&self, type_name: &str) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.type_name == type_name)
    }
}

/// Outcome for every question with resamples, in manifest order.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub record_id: String,
    pub selection: Selection,
    pub correct: bool,
    pub label: crate::taxonomy::ErrorTypeLabel,
}

pub fn select_all(dataset: &ProbingDataset, strategy: &SelectionStrategy) -> Result<Vec<SelectionOutcome>> {
    if dataset.resamples.is_none() {
        return Err(Error::MissingResamples);
    }
    let mut out = Vec::new();
    for r in &dataset.records {
        let Some(set) = dataset.resample_set(&r.id) else {
            continue;
        };
        let selection = select_answer(r, set, strategy)?;
        out.push(SelectionOutcome {
            record_id: r.id.clone(),
            correct: selection.is_correct(r, set),
            selection,
            label: classify_error_type(&answer_stats(set, &r.gold_aliases)),
        });
    }
    Ok(out)
}

fn accuracy_row(type_name: &str, outcomes: &[&SelectionOutcome]) -> AccuracyRow {
    let n = outcomes.len();
    let hits = outcomes.iter().filter(|o| o.correct).count();
    AccuracyRow {
        type_name: type_name.to_string(),
        n,
        accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
    }
}

/// Accuracy overall and per error-type flag (multi-label membership).
pub fn accuracy_by_type(
    dataset: &ProbingDataset,
    strategy: &SelectionStrategy,
    min_count: usize,
) -> Result<SelectionReport> {
    let outcomes = select_all(dataset, strategy)?;
    let all: Vec<&SelectionOutcome> = outcomes.iter().collect();
    let mut rows = vec![accuracy_row("all", &all)];
    for t in ErrorType::ALL {
        let members: Vec<&SelectionOutcome> = outcomes.iter().filter(|o| o.label.contains(t)).collect();
        rows.push(accuracy_row(t.name(), &members));
    }
    Ok(SelectionReport {
        strategy: strategy.name().to_string(),
        rows,
        min_count,
    })
}

/// Accuracy per first-matching flag, so that types partition the questions.
/// Questions with no flag fall in `none`.
pub fn accuracy_by_primary_type(outcomes: &[SelectionOutcome]) -> Vec<AccuracyRow> {
    let mut rows = Vec::new();
    for t in ErrorType::ALL.map(Some).into_iter().chain([None]) {
        let members: Vec<&SelectionOutcome> = outcomes.iter().filter(|o| o.label.primary() == t).collect();
        rows.push(accuracy_row(t.map_or("none", ErrorType::name), &members));
    }
    rows
}

pub fn reports_csv(reports: &[SelectionReport]) -> String {
    let mut out = String::from("strategy,type,n,accuracy\n");
    for report in reports {
        for row in report.reported() {
            out.push_str(&format!("{},{},{},{}\n", report.strategy, row.type_name, row.n, row.accuracy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;

    use super::*;
    use crate::data::{ActivationBlock, ResampleSample};
    use crate::probe::TrainMeta;

    fn record(correct: bool) -> ProbingRecord {
        ProbingRecord {
            id: "q".into(),
            question: String::new(),
            gold_aliases: vec!["a".into()],
            generated_answer: "a".into(),
            generated_tokens: vec![],
            token_logprobs: vec![],
            exact_answer: None,
            exact_span: None,
            correct: Some(correct),
            refusal: false,
            p_true: None,
            activations: IndexMap::new(),
        }
    }

    fn sample(answer: &str, correct: bool, feature: Option<f32>) -> ResampleSample {
        ResampleSample {
            answer: answer.into(),
            exact_answer: Some(answer.into()),
            correct: Some(correct),
            refusal: false,
            activation: feature.map(|f| ActivationBlock::new(1, 1, vec![f]).unwrap()),
        }
    }

    fn set(samples: Vec<ResampleSample>) -> ResampleSet {
        ResampleSet {
            record_id: "q".into(),
            temperature: 1.0,
            samples,
        }
    }

    fn unit_probe() -> LinearProbe {
        LinearProbe {
            layer: 0,
            position: "exact_last".into(),
            bias: 0.0,
            weights: vec![1.0],
            train_meta: TrainMeta { seed: 0, train_size: 0, validation_size: 0, converged: true, iterations: 0 },
        }
    }

    #[test]
    fn majority_picks_most_frequent() {
        let mut samples: Vec<_> = (0..10).map(|_| sample("b", false, None)).collect();
        samples.extend((0..20).map(|_| sample("a", true, None)));
        let s = set(samples);
        let pick = select_answer(&record(true), &s, &SelectionStrategy::Majority).unwrap();
        assert_eq!(pick, Selection::Sample(10));
    }

    #[test]
    fn majority_tie_goes_to_earliest() {
        let s = set(vec![sample("b", false, None), sample("a", true, None), sample("a", true, None), sample("B ", false, None)]);
        assert_eq!(select_answer(&record(true), &s, &SelectionStrategy::Majority).unwrap(), Selection::Sample(0));
    }

    #[test]
    fn probe_picks_highest_score() {
        let s = set(vec![sample("x", false, Some(0.1)), sample("y", true, Some(0.9)), sample("z", false, Some(0.3))]);
        let strategy = SelectionStrategy::Probe(unit_probe());
        assert_eq!(select_answer(&record(false), &s, &strategy).unwrap(), Selection::Sample(1));
        let tied = set(vec![sample("x", false, Some(0.5)), sample("y", true, Some(0.5))]);
        assert_eq!(select_answer(&record(false), &tied, &strategy).unwrap(), Selection::Sample(0));
    }

    #[test]
    fn probe_skips_refusals() {
        let mut refusal = sample("x", false, Some(5.0));
        refusal.refusal = true;
        refusal.exact_answer = None;
        let s = set(vec![refusal, sample("y", true, Some(0.2)), sample("z", false, Some(0.1))]);
        let strategy = SelectionStrategy::Probe(unit_probe());
        assert_eq!(select_answer(&record(false), &s, &strategy).unwrap(), Selection::Sample(1));
    }

    #[test]
    fn probe_requires_activations() {
        let s = set(vec![sample("x", false, None)]);
        assert!(matches!(
            select_answer(&record(false), &s, &SelectionStrategy::Probe(unit_probe())),
            Err(Error::MissingActivations(_))
        ));
    }

    #[test]
    fn greedy_ignores_resamples() {
        let s = set(vec![sample("x", false, None)]);
        let pick = select_answer(&record(true), &s, &SelectionStrategy::Greedy).unwrap();
        assert_eq!(pick, Selection::Greedy);
        assert!(pick.is_correct(&record(true), &s));
        assert!(select_answer(&record(true), &set(vec![]), &SelectionStrategy::Greedy).is_ok());
    }

    #[test]
    fn empty_resamples_rejected() {
        assert!(matches!(
            select_answer(&record(true), &set(vec![]), &SelectionStrategy::Majority),
            Err(Error::EmptyResamples(_))
        ));
    }

    #[test]
    fn random_is_seeded() {
        let s = set((0..30).map(|i| sample(&i.to_string(), false, None)).collect());
        let strategy = SelectionStrategy::Random { seed: 4 };
        let a = select_answer(&record(true), &s, &strategy).unwrap();
        assert_eq!(a, select_answer(&record(true), &s, &strategy).unwrap());
        let picks: std::collections::HashSet<_> = (0..50)
            .map(|seed| select_answer(&record(true), &s, &SelectionStrategy::Random { seed }).unwrap())
            .collect();
        assert!(picks.len() > 10);
    }

    #[test]
    fn report_filters_small_types() {
        let report = SelectionReport {
            strategy: "greedy".into(),
            rows: vec![
                AccuracyRow { type_name: "all".into(), n: 5, accuracy: 0.4 },
                AccuracyRow { type_name: "B1".into(), n: 40, accuracy: 1.0 },
                AccuracyRow { type_name: "C1".into(), n: 3, accuracy: 0.0 },
            ],
            min_count: 30,
        };
        assert_eq!(reports_csv(&[report]), "strategy,type,n,accuracy\ngreedy,all,5,0.4\ngreedy,B1,40,1\n");
    }
}
