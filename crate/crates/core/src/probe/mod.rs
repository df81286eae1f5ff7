//! Linear probing classifiers on hidden states.
//!
//! A probe is an L2-regularized logistic regression trained on the hidden
//! vector at one (layer, position) cell. Features are used as-is, without
//! standardization.

pub mod lbfgs;
mod logistic;
mod sweep;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ProbingDataset;
use crate::error::{Error, Result};
use crate::eval::Cell;

pub use logistic::LogisticObjective;
pub use sweep::{select_best_cell, sweep, sweep_with_split, SweepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub l2_strength: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_strength: 1.0,
            max_iterations: 100,
            gradient_tolerance: 1e-4,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.l2_strength > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l2_strength must be positive, got {}",
                self.l2_strength
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// Weights, bias and the cell a probe was trained on.
///
/// Serializes to `{layer, position, bias, weights, train_meta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub layer: usize,
    pub position: String,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub train_meta: TrainMeta,
}

impl LinearProbe {
    pub fn cell(&self) -> Cell {
        Cell::new(self.layer, self.position.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("probe always serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: LinearProbe = serde_json::from_str(text).map_err(|e| Error::Json {
            file: "probe".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if probe.weights.iter().any(|w| !w.is_finite()) || !probe.bias.is_finite() {
            return Err(Error::InvalidConfig("probe has non-finite parameters".into()));
        }
        Ok(probe)
    }

    /// Affine scores `w . x + b`, one per row.
    pub fn decision_function(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "probe expects {} features, got {}",
                self.weights.len(),
                features.ncols()
            )));
        }
        Ok(features
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() + self.bias)
            .collect())
    }
}

/// Probability of "correct" for each row, strictly inside (0, 1).
pub fn predict_scores(probe: &LinearProbe, features: ArrayView2<f64>) -> Result<Vec<f64>> {
    const EDGE: f64 = 1e-15;
    Ok(probe
        .decision_function(features)?
        .into_iter()
        .map(|z| logistic::sigmoid(z).clamp(EDGE, 1.0 - EDGE))
        .collect())
}

/// Result of fitting on every given row.
#[derive(Debug, Clone)]
pub struct Fit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    /// Objective at `w = 0`, `b = logit(positive rate)`, the starting point.
    pub baseline_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits logistic regression to all rows of `features`.
pub fn fit_logistic(features: ArrayView2<f64>, labels: &[bool], config: &TrainConfig) -> Result<Fit> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    for ((row, col), v) in features.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { row, col });
        }
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClassTrainingSplit);
    }

    let d = features.ncols();
    let rate = positives as f64 / labels.len() as f64;
    let mut start = vec![0.0; d + 1];
    start[d] = (rate / (1.0 - rate)).ln();

    let objective = LogisticObjective::new(features, labels, config.l2_strength);
    let baseline_objective = objective.value(&start);
    let min = lbfgs::minimize(
        |p, g| objective.value_and_gradient(p, g),
        start,
        lbfgs::LbfgsConfig {
            max_iterations: config.max_iterations,
            gradient_tolerance: config.gradient_tolerance,
            ..Default::default()
        },
    );
    let mut weights = min.x;
    let bias = weights.pop().unwrap();
    Ok(Fit {
        weights,
        bias,
        objective: min.value,
        baseline_objective,
        iterations: min.iterations,
        converged: min.converged,
    })
}

/// Train/validation row indices, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded split stratified by label.
///
/// Each class with at least two members contributes
/// `max(1, round((1 - train_fraction) * n))` rows to validation; a singleton
/// class goes entirely to training.
pub fn stratified_split(labels: &[bool], train_fraction: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_val = if n >= 2 {
            (((1.0 - train_fraction) * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        validation.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Split { train, validation }
}

/// A probe plus its held-out evaluation.
#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub probe: LinearProbe,
    pub split: Split,
    /// Decision values on the validation rows, in `split.validation` order.
    pub validation_scores: Vec<f64>,
    pub validation_labels: Vec<bool>,
    pub fit: Fit,
}

impl TrainedProbe {
    pub fn validation_auc(&self) -> Result<f64> {
        crate::eval::auc(&self.validation_scores, &self.validation_labels)
    }
}

pub(crate) fn select_rows(features: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    features.select(ndarray::Axis(0), rows)
}

/// Splits `features` 80/20 (per `config`), fits on the training part and
/// scores the validation part.
pub fn train_probe(
    features: ArrayView2<f64>,
    labels: &[bool],
    cell: Cell,
    config: &TrainConfig,
) -> Result<TrainedProbe> {
    config.validate()?;
    if features.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 rows, got {}",
            features.nrows()
        )));
    }
    let split = stratified_split(labels, config.train_fraction, config.seed);
    train_on_split(features, labels, cell, config, split)
}

pub(crate) fn train_on_split(
    features: ArrayView2<f64>,
    labels: &[bool],
    cell: Cell,
    config: &TrainConfig,
    split: Split,
) -> Result<TrainedProbe> {
    let train_x = select_rows(features, &split.train);
    let train_y: Vec<bool> = split.train.iter().map(|&i| labels[i]).collect();
    let fit = fit_logistic(train_x.view(), &train_y, config)?;
    let probe = LinearProbe {
        layer: cell.layer,
        position: cell.position,
        bias: fit.bias,
        weights: fit.weights.clone(),
        train_meta: TrainMeta {
            seed: config.seed,
            train_size: split.train.len(),
            validation_size: split.validation.len(),
            converged: fit.converged,
            iterations: fit.iterations,
        },
    };
    let val_x = select_rows(features, &split.validation);
    let validation_scores = probe.decision_function(val_x.view())?;
    let validation_labels = split.validation.iter().map(|&i| labels[i]).collect();
    Ok(TrainedProbe {
        probe,
        split,
        validation_scores,
        validation_labels,
        fit,
    })
}

/// Hidden vectors at `cell` for the given records, one row each.
pub fn cell_features(dataset: &ProbingDataset, records: &[usize], cell: &Cell) -> Result<Array2<f64>> {
    if dataset.position_index(&cell.position).is_none() {
        return Err(Error::MissingPosition(cell.position.clone()));
    }
    let (num_layers, dim) = dataset
        .dims()
        .ok_or_else(|| Error::InsufficientData("dataset has no activations".into()))?;
    if cell.layer >= num_layers {
        return Err(Error::LayerOutOfRange {
            layer: cell.layer,
            num_layers,
        });
    }
    let mut out = Array2::zeros((records.len(), dim));
    for (row, &idx) in records.iter().enumerate() {
        let block = dataset.records[idx]
            .activations
            .get(&cell.position)
            .ok_or_else(|| Error::MissingPosition(cell.position.clone()))?;
        for (o, v) in out.row_mut(row).iter_mut().zip(block.layer(cell.layer)) {
            *o = f64::from(*v);
        }
    }
    Ok(out)
}

/// Labeled records' features and labels at `cell`.
pub fn labeled_cell_data(dataset: &ProbingDataset, cell: &Cell) -> Result<(Vec<usize>, Array2<f64>, Vec<bool>)> {
    let idx = dataset.labeled_indices();
    let x = cell_features(dataset, &idx, cell)?;
    let y = idx
        .iter()
        .map(|&i| dataset.records[i].correct == Some(true))
        .collect();
    Ok((idx, x, y))
}
