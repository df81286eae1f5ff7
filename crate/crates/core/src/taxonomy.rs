//! Error taxonomy over repeated samples.
//!
//! Each question is resampled K times. From the distribution of answers we
//! derive behavior-based error types:
//!
//! | flag | condition (`half = ceil(K/2)`) |
//! |------|--------------------------------|
//! | A    | refusals >= half |
//! | B1/B2| correct >= half; B1 when every sample is correct |
//! | C1/C2| most frequent wrong answer >= half; C1 when no sample is correct |
//! | D    | correct and top-wrong counts both >= 5 and within 5 of each other |
//! | E1/E2| more than 10 distinct answers; E1 when no sample is correct |
//!
//! Types overlap on purpose: one question can be both C2 and D.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{ProbingDataset, ResampleSet};
use crate::error::{Error, Result};
use crate::eval::{bootstrap_auc, BootstrapSummary, Cell};
use crate::localize::{correctness_label, normalize};
use crate::probe::{cell_features, train_probe, TrainConfig};

/// Leaf error types, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    A,
    B1,
    B2,
    C1,
    C2,
    D,
    E1,
    E2,
}

impl ErrorType {
    pub const ALL: [ErrorType; 8] = [
        ErrorType::A,
        ErrorType::B1,
        ErrorType::B2,
        ErrorType::C1,
        ErrorType::C2,
        ErrorType::D,
        ErrorType::E1,
        ErrorType::E2,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorType::A => "A",
            ErrorType::B1 => "B1",
            ErrorType::B2 => "B2",
            ErrorType::C1 => "C1",
            ErrorType::C2 => "C2",
            ErrorType::D => "D",
            ErrorType::E1 => "E1",
            ErrorType::E2 => "E2",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A queryable type: a leaf or one of the parent groups B, C, E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TypeQuery {
    Leaf(ErrorType),
    B,
    C,
    E,
}

impl FromStr for TypeQuery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" => Ok(TypeQuery::B),
            "C" => Ok(TypeQuery::C),
            "E" => Ok(TypeQuery::E),
            _ => ErrorType::ALL
                .into_iter()
                .find(|t| t.name() == s)
                .map(TypeQuery::Leaf)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown error type {s:?}"))),
        }
    }
}

impl fmt::Display for TypeQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeQuery::Leaf(t) => t.fmt(f),
            TypeQuery::B => f.write_str("B"),
            TypeQuery::C => f.write_str("C"),
            TypeQuery::E => f.write_str("E"),
        }
    }
}

/// Set of error-type flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ErrorTypeLabel(u8);

impl ErrorTypeLabel {
    pub fn insert(&mut self, t: ErrorType) {
        self.0 |= t.bit();
    }

    pub fn contains(&self, t: ErrorType) -> bool {
        self.0 & t.bit() != 0
    }

    pub fn has(&self, query: TypeQuery) -> bool {
        match query {
            TypeQuery::Leaf(t) => self.contains(t),
            TypeQuery::B => self.contains(ErrorType::B1) || self.contains(ErrorType::B2),
            TypeQuery::C => self.contains(ErrorType::C1) || self.contains(ErrorType::C2),
            TypeQuery::E => self.contains(ErrorType::E1) || self.contains(ErrorType::E2),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = ErrorType> + '_ {
        ErrorType::ALL.into_iter().filter(|t| self.contains(*t))
    }

    /// First flag in the fixed order A, B1, B2, C1, C2, D, E1, E2.
    pub fn primary(&self) -> Option<ErrorType> {
        self.iter().next()
    }

    pub fn from_types(types: &[ErrorType]) -> Self {
        let mut label = ErrorTypeLabel::default();
        types.iter().for_each(|t| label.insert(*t));
        label
    }
}

impl fmt::Display for ErrorTypeLabel {
    /// Semicolon-joined flags, e.g. `C2;D`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(ErrorType::name).collect();
        f.write_str(&names.join(";"))
    }
}

/// Counts summarizing the K sampled answers of one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerStats {
    pub k: usize,
    /// Distinct normalized non-refusal answers.
    pub num_distinct: usize,
    pub correct_count: usize,
    /// Frequency of the most common incorrect answer.
    pub top_wrong_count: usize,
    pub refusal_count: usize,
}

/// Key used to compare sampled answers: the exact answer when present,
/// otherwise the full answer, normalized.
pub fn answer_key(answer: &str, exact_answer: Option<&str>) -> String {
    normalize(exact_answer.unwrap_or(answer))
}

pub fn answer_stats(resamples: &ResampleSet, gold_aliases: &[String]) -> AnswerStats {
    let mut distinct: HashMap<String, ()> = HashMap::new();
    let mut wrong: HashMap<String, usize> = HashMap::new();
    let mut correct_count = 0;
    let mut refusal_count = 0;
    for s in &resamples.samples {
        if s.refusal {
            refusal_count += 1;
            continue;
        }
        let key = answer_key(&s.answer, s.exact_answer.as_deref());
        let correct = s
            .correct
            .unwrap_or_else(|| correctness_label(&s.answer, gold_aliases, &[]));
        if correct {
            correct_count += 1;
        } else {
            *wrong.entry(key.clone()).or_default() += 1;
        }
        distinct.insert(key, ());
    }
    AnswerStats {
        k: resamples.samples.len(),
        num_distinct: distinct.len(),
        correct_count,
        top_wrong_count: wrong.values().copied().max().unwrap_or(0),
        refusal_count,
    }
}

pub fn classify_error_type(stats: &AnswerStats) -> ErrorTypeLabel {
    let half = stats.k.div_ceil(2);
    let c = stats.correct_count;
    let w = stats.top_wrong_count;
    let mut label = ErrorTypeLabel::default();
    if stats.refusal_count >= half {
        label.insert(ErrorType::A);
    }
    if c >= half {
        label.insert(if c == stats.k { ErrorType::B1 } else { ErrorType::B2 });
    }
    if w >= half {
        label.insert(if c == 0 { ErrorType::C1 } else { ErrorType::C2 });
    }
    if c >= 5 && w >= 5 && c.abs_diff(w) <= 5 {
        label.insert(ErrorType::D);
    }
    if stats.num_distinct > 10 {
        label.insert(if c == 0 { ErrorType::E1 } else { ErrorType::E2 });
    }
    label
}

/// One row of the per-record taxonomy export.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyRow {
    pub id: String,
    pub stats: AnswerStats,
    pub label: ErrorTypeLabel,
    /// Greedy answer's label, when it has one.
    pub greedy_correct: Option<bool>,
}

/// Classifies every record that has a resample set, in manifest order.
pub fn taxonomy_table(dataset: &ProbingDataset) -> Result<Vec<TaxonomyRow>> {
    if dataset.resamples.is_none() {
        return Err(Error::MissingResamples);
    }
    Ok(dataset
        .records
        .iter()
        .filter_map(|r| {
            let set = dataset.resample_set(&r.id)?;
            let stats = answer_stats(set, &r.gold_aliases);
            Some(TaxonomyRow {
                id: r.id.clone(),
                stats,
                label: classify_error_type(&stats),
                greedy_correct: if r.refusal { None } else { r.correct },
            })
        })
        .collect())
}

pub fn taxonomy_csv(rows: &[TaxonomyRow]) -> String {
    let mut out =
        String::from("id,K,num_distinct,correct_count,top_wrong_count,refusal_count,flags\n");
    for r in rows {
        let s = &r.stats;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&r.id),
            s.k,
            s.num_distinct,
            s.correct_count,
            s.top_wrong_count,
            s.refusal_count,
            r.label
        ));
    }
    out
}

pub(crate) fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// Fraction of erroneous greedy answers that fall into at least one type.
pub fn coverage(rows: &[TaxonomyRow]) -> Option<f64> {
    let errors: Vec<&TaxonomyRow> = rows
        .iter()
        .filter(|r| r.greedy_correct == Some(false))
        .collect();
    if errors.is_empty() {
        return None;
    }
    let covered = errors.iter().filter(|r| !r.label.is_empty()).count();
    Some(covered as f64 / errors.len() as f64)
}

/// One-vs-rest probing data for a single error type.
#[derive(Debug, Clone)]
pub struct TypeDataset {
    pub record_ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<bool>,
    /// True when every label is the same, so no probe can be trained.
    pub single_class: bool,
}

/// Greedy-decoding features at `cell`, labeled by membership in `query`.
pub fn build_type_dataset(dataset: &ProbingDataset, query: TypeQuery, cell: &Cell) -> Result<TypeDataset> {
    let rows = taxonomy_table(dataset)?;
    let by_id: HashMap<&str, &TaxonomyRow> = rows.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        if let Some(row) = by_id.get(r.id.as_str()) {
            indices.push(i);
            labels.push(row.label.has(query));
        }
    }
    let features = cell_features(dataset, &indices, cell)?;
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(TypeDataset {
        record_ids: indices.iter().map(|&i| dataset.records[i].id.clone()).collect(),
        features,
        single_class: positives == 0 || positives == labels.len(),
        labels,
    })
}

/// Held-out detection quality of a one-vs-rest error-type probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeProbeReport {
    pub error_type: String,
    pub cell: String,
    pub n: usize,
    pub positives: usize,
    pub auc: f64,
    pub bootstrap_mean: f64,
    pub bootstrap_std: f64,
    pub seed: u64,
}

pub fn type_probe(
    dataset: &ProbingDataset,
    query: TypeQuery,
    cell: &Cell,
    config: &TrainConfig,
    bootstrap_seeds: usize,
) -> Result<TypeProbeReport> {
    let data = build_type_dataset(dataset, query, cell)?;
    if data.single_class {
        return Err(Error::InsufficientData(format!(
            "error type {query} has {} of {} records, need both classes",
            data.labels.iter().filter(|&&l| l).count(),
            data.labels.len()
        )));
    }
    let trained = train_probe(data.features.view(), &data.labels, cell.clone(), config)?;
    let auc = trained.validation_auc()?;
    let BootstrapSummary { mean, std } = bootstrap_auc(
        &trained.validation_scores,
        &trained.validation_labels,
        bootstrap_seeds.max(1),
        config.seed,
    )?;
    Ok(TypeProbeReport {
        error_type: query.to_string(),
        cell: cell.to_string(),
        n: data.labels.len(),
        positives: data.labels.iter().filter(|&&l| l).count(),
        auc,
        bootstrap_mean: mean,
        bootstrap_std: std,
        seed: config.seed,
    })
}
