use rayon::prelude::*;

use super::{labeled_cell_data, stratified_split, train_on_split, Split, TrainConfig};
use crate::data::ProbingDataset;
use crate::error::{Error, Result};
use crate::eval::{bootstrap_auc, AucGrid, Cell, DEFAULT_BOOTSTRAP_SEEDS};

/// A sweep grid together with the split every cell was trained on.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub grid: AucGrid,
    /// Indices of the labeled records, in manifest order.
    pub labeled: Vec<usize>,
    /// Train/validation rows, indexing into `labeled`.
    pub split: Split,
}

/// Trains one probe per (layer, position) cell and records validation AUC.
///
/// All cells share the same stratified split. Cells are trained in
/// parallel; results are keyed by cell, so the grid is deterministic.
pub fn sweep(dataset: &ProbingDataset, config: &TrainConfig) -> Result<AucGrid> {
    sweep_with_split(dataset, config).map(|o| o.grid)
}

pub fn sweep_with_split(dataset: &ProbingDataset, config: &TrainConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let labeled = dataset.labeled_indices();
    let labels: Vec<bool> = labeled
        .iter()
        .map(|&i| dataset.records[i].correct == Some(true))
        .collect();
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives < 2 || negatives < 2 {
        return Err(Error::InsufficientClassCounts {
            positives,
            negatives,
            needed: 2,
        });
    }
    let num_layers = dataset.num_layers();
    let split = stratified_split(&labels, config.train_fraction, config.seed);

    let cells: Vec<(usize, usize)> = (0..num_layers)
        .flat_map(|l| (0..dataset.position_names.len()).map(move |p| (l, p)))
        .collect();
    let results: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(layer, pos)| {
            let cell = Cell::new(layer, dataset.position_names[pos].clone());
            let (_, x, y) = labeled_cell_data(dataset, &cell)?;
            let trained = train_on_split(x.view(), &y, cell, config, split.clone())?;
            let auc = trained.validation_auc()?;
            let spread = bootstrap_auc(
                &trained.validation_scores,
                &trained.validation_labels,
                DEFAULT_BOOTSTRAP_SEEDS,
                config.seed,
            )?;
            Ok((auc, spread.std))
        })
        .collect::<Result<_>>()?;

    let mut grid = AucGrid::new(num_layers, dataset.position_names.clone());
    for (&(layer, pos), (auc, std)) in cells.iter().zip(results) {
        grid.set(layer, pos, auc, std);
    }
    Ok(SweepOutcome {
        grid,
        labeled,
        split,
    })
}

/// Best validation cell; ties go to the lowest layer, then the earliest
/// position.
pub fn select_best_cell(grid: &AucGrid) -> Result<Cell> {
    grid.select_best_cell()
}
