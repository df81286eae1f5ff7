//! Detection metrics: ROC AUC, bootstrap dispersion, heatmaps and the
//! cross-dataset generalization matrix.

mod generalize;
mod grid;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use generalize::{generalization_matrix, GeneralizationMatrix};
pub use grid::{AucGrid, Cell};

/// Default number of bootstrap resamples.
pub const DEFAULT_BOOTSTRAP_SEEDS: usize = 10;

/// ROC AUC in its Mann–Whitney form: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half.
///
/// Runs in `O(n log n)` using mid-ranks. Scores are compared with
/// `f64::total_cmp`, so NaN sorts above every number.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of positive mid-ranks, doubled so that it stays integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        // 1-based ranks i+1..=j share the mid-rank (i+1+j)/2.
        let twice_mid = (i + 1 + j) as u64;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_mid * tied_pos;
        i = j;
    }
    let twice_u = twice_rank_sum - positives * (positives + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// `max(auc, 1 - auc)`: signal strength regardless of orientation.
pub fn abs_auc(a: f64) -> f64 {
    a.max(1.0 - a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Population standard deviation over bootstrap replicates.
    pub std: f64,
}

/// Mean and spread of AUC over `num_seeds` bootstrap resamples.
///
/// Replicate `i` draws with replacement from a generator seeded with
/// `seed0 + i`; single-class draws are discarded and redrawn.
pub fn bootstrap_auc(
    scores: &[f64],
    labels: &[bool],
    num_seeds: usize,
    seed0: u64,
) -> Result<BootstrapSummary> {
    auc(scores, labels)?;
    let n = scores.len();
    let mut values = Vec::with_capacity(num_seeds);
    let mut s = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    for i in 0..num_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed0.wrapping_add(i as u64));
        loop {
            s.clear();
            l.clear();
            for _ in 0..n {
                let k = rng.random_range(0..n);
                s.push(scores[k]);
                l.push(labels[k]);
            }
            if let Ok(a) = auc(&s, &l) {
                values.push(a);
                break;
            }
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("bootstrap needs at least one seed".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    Ok(BootstrapSummary {
        mean,
        std: var.sqrt(),
    })
}
