use std::fmt::Write as _;

use super::grid::heatmap_svg;
use super::{abs_auc, auc, Cell};
use crate::data::ProbingDataset;
use crate::detect::{score, Detector};
use crate::error::{Error, Result};
use crate::probe::{cell_features, fit_logistic, sweep_with_split, LinearProbe, TrainConfig, TrainMeta};

/// Source-to-target transfer of probes. Entry `(i, j)` is a probe trained on
/// dataset `i` and evaluated on dataset `j`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationMatrix {
    pub dataset_names: Vec<String>,
    pub abs_auc: Vec<Option<f64>>,
    /// `abs_auc` minus the target's logits-min-exact abs-AUC.
    pub baseline_adjusted: Vec<Option<f64>>,
    /// Best sweep cell of each dataset as a target.
    pub selected_cells: Vec<Cell>,
    /// abs-AUC of logits-min-exact on each target's test records.
    pub baseline_abs_auc: Vec<f64>,
}

impl GeneralizationMatrix {
    pub fn len(&self) -> usize {
        self.dataset_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset_names.is_empty()
    }

    pub fn get(&self, source: usize, target: usize) -> Option<f64> {
        self.abs_auc[source * self.len() + target]
    }

    pub fn adjusted(&self, source: usize, target: usize) -> Option<f64> {
        self.baseline_adjusted[source * self.len() + target]
    }

    fn csv(&self, values: &[Option<f64>]) -> String {
        let mut out = String::from("source\\target");
        for name in &self.dataset_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in self.dataset_names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.len() {
                out.push(',');
                if let Some(v) = values[i * self.len() + j] {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// abs-AUC matrix as CSV; absent cells are empty fields.
    pub fn to_csv(&self) -> String {
        self.csv(&self.abs_auc)
    }

    pub fn adjusted_csv(&self) -> String {
        self.csv(&self.baseline_adjusted)
    }

    pub fn to_svg(&self, adjusted: bool) -> String {
        let (values, title, scale) = if adjusted {
            (&self.baseline_adjusted, "abs-AUC minus logits-min-exact", (-0.5, 0.0, 0.5))
        } else {
            (&self.abs_auc, "abs-AUC (rows: train, columns: test)", (0.0, 0.5, 1.0))
        };
        heatmap_svg(title, &self.dataset_names, &self.dataset_names, values, scale)
    }
}

struct Prepared<'a> {
    dataset: &'a ProbingDataset,
    cell: Cell,
    train: Vec<usize>,
    test: Vec<usize>,
    baseline: f64,
}

fn labels_of(dataset: &ProbingDataset, records: &[usize]) -> Vec<bool> {
    records
        .iter()
        .map(|&i| dataset.records[i].correct == Some(true))
        .collect()
}

fn prepare<'a>(dataset: &'a ProbingDataset, config: &TrainConfig) -> Result<Prepared<'a>> {
    let outcome = sweep_with_split(dataset, config)?;
    let cell = outcome.grid.select_best_cell()?;
    let train: Vec<usize> = outcome.split.train.iter().map(|&i| outcome.labeled[i]).collect();
    let test: Vec<usize> = outcome.split.validation.iter().map(|&i| outcome.labeled[i]).collect();

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for &i in &test {
        let r = &dataset.records[i];
        if let Ok(s) = score(r, Detector::LOGITS_MIN_EXACT) {
            scores.push(s);
            labels.push(r.correct == Some(true));
        }
    }
    let baseline = auc(&scores, &labels).map_err(|_| {
        Error::InsufficientData(format!(
            "dataset {:?}: logits-min-exact needs both classes among test records with exact spans",
            dataset.name
        ))
    })?;
    Ok(Prepared {
        dataset,
        cell,
        train,
        test,
        baseline: abs_auc(baseline),
    })
}

fn has_cell(dataset: &ProbingDataset, cell: &Cell) -> bool {
    dataset.position_index(&cell.position).is_some() && cell.layer < dataset.num_layers()
}

fn transfer(source: &Prepared, target: &Prepared, config: &TrainConfig) -> Result<Option<f64>> {
    let cell = &target.cell;
    if !has_cell(source.dataset, cell) {
        return Ok(None);
    }
    let x = cell_features(source.dataset, &source.train, cell)?;
    let y = labels_of(source.dataset, &source.train);
    let fit = fit_logistic(x.view(), &y, config)?;
    let probe = LinearProbe {
        layer: cell.layer,
        position: cell.position.clone(),
        bias: fit.bias,
        weights: fit.weights,
        train_meta: TrainMeta {
            seed: config.seed,
            train_size: source.train.len(),
            validation_size: 0,
            converged: fit.converged,
            iterations: fit.iterations,
        },
    };
    let test_x = cell_features(target.dataset, &target.test, cell)?;
    let scores = probe.decision_function(test_x.view())?;
    let a = auc(&scores, &labels_of(target.dataset, &target.test))?;
    Ok(Some(abs_auc(a)))
}

/// Builds the source-to-target matrix.
///
/// For each target: sweep it, take its best cell and hold out its
/// validation records as the test set. For each source: train on the
/// source's training split at the target's cell and score the target's test
/// records. Cells whose position the source lacks are absent.
pub fn generalization_matrix(datasets: &[ProbingDataset], config: &TrainConfig) -> Result<GeneralizationMatrix> {
    if datasets.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "generalization needs at least 2 datasets, got {}",
            datasets.len()
        )));
    }
    let prepared: Vec<Prepared> = datasets
        .iter()
        .map(|d| prepare(d, config))
        .collect::<Result<_>>()?;

    let n = datasets.len();
    let mut abs = Vec::with_capacity(n * n);
    let mut adjusted = Vec::with_capacity(n * n);
    for source in &prepared {
        for target in &prepared {
            let v = transfer(source, target, config)?;
            abs.push(v);
            adjusted.push(v.map(|a| a - target.baseline));
        }
    }
    Ok(GeneralizationMatrix {
        dataset_names: datasets.iter().map(|d| d.name.clone()).collect(),
        abs_auc: abs,
        baseline_adjusted: adjusted,
        selected_cells: prepared.iter().map(|p| p.cell.clone()).collect(),
        baseline_abs_auc: prepared.iter().map(|p| p.baseline).collect(),
    })
}
