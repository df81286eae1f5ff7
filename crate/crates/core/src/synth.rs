//! Synthetic dumps with planted, fully known truthfulness structure.
//!
//! Each labeled record gets a class-conditional Gaussian hidden state at one
//! planted (layer, position) cell:
//!
//! ```text
//! h = mu_z + sigma * eps,   mu_1 - mu_0 = s * w*,   mu_z = (z - 1/2) * s * w*
//! ```
//!
//! Every other cell is pure `sigma` noise. Along `w*` the two classes are
//! `N(-s/2, sigma^2)` and `N(s/2, sigma^2)`, so the best achievable AUC is
//! `Phi(s / (sigma * sqrt(2)))`.
//!
//! When a taxonomy mix is configured, each record also gets K resampled
//! answers whose counts realize a chosen error type, and the greedy answer is
//! one draw from those samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{
    write_dataset, ActivationBlock, GeneratedToken, ProbingDataset, ProbingRecord, ResampleSample,
    ResampleSet,
};
use crate::error::{Error, Result};
use crate::eval::Cell;
use crate::localize::TokenSpan;
use crate::taxonomy::{ErrorType, ErrorTypeLabel};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

fn default_positions() -> Vec<String> {
    ["eoq", "exact_before", "exact_first", "exact_last", "exact_after", "gen_-1"]
        .map(String::from)
        .to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub name: String,
    pub num_records: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub positions: Vec<String>,
    pub planted_cell: Cell,
    /// Distance between the class means along the planted direction.
    pub signal_strength: f64,
    pub noise_std: f64,
    /// Probability of a correct greedy answer when no taxonomy mix is set.
    pub correct_rate: f64,
    /// Resamples per record.
    pub k: usize,
    pub temperature: f64,
    /// Mean log-probability gap between correct and wrong exact-answer tokens.
    pub logit_gap: f64,
    /// Relative frequency of each error type; empty means no resamples.
    pub taxonomy_mix: BTreeMap<ErrorType, f64>,
    /// Upper bound on correct samples in C2 records.
    pub c2_max_correct: usize,
    /// Strength of a per-type direction added at the planted cell.
    pub type_signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            num_records: 2000,
            num_layers: 8,
            hidden_dim: 64,
            positions: default_positions(),
            planted_cell: Cell::new(5, "exact_last"),
            signal_strength: 4.0,
            noise_std: 1.0,
            correct_rate: 0.5,
            k: 30,
            temperature: 1.0,
            logit_gap: 1.5,
            taxonomy_mix: BTreeMap::new(),
            c2_max_correct: 4,
            type_signal: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// AUC of the Bayes classifier at the planted cell.
    pub fn bayes_auc(&self) -> f64 {
        let z = self.signal_strength / (self.noise_std * std::f64::consts::SQRT_2);
        Normal::standard().cdf(z)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return bad("num_layers and hidden_dim must be positive".into());
        }
        if self.positions.is_empty() {
            return bad("at least one position is required".into());
        }
        for (i, p) in self.positions.iter().enumerate() {
            if self.positions[..i].contains(p) {
                return bad(format!("position {p:?} listed twice"));
            }
        }
        if self.planted_cell.layer >= self.num_layers || !self.positions.contains(&self.planted_cell.position) {
            return bad(format!("planted cell {} is outside the grid", self.planted_cell));
        }
        if !(self.signal_strength > 0.0 && self.noise_std > 0.0) {
            return bad("signal_strength and noise_std must be positive".into());
        }
        if !(self.correct_rate > 0.0 && self.correct_rate < 1.0) {
            return bad("correct_rate must lie in (0, 1)".into());
        }
        if !(self.logit_gap >= 0.0 && self.type_signal >= 0.0) {
            return bad("logit_gap and type_signal must be non-negative".into());
        }
        if self.taxonomy_mix.values().any(|w| !(*w >= 0.0)) {
            return bad("taxonomy weights must be non-negative".into());
        }
        if !self.taxonomy_mix.is_empty() {
            if self.taxonomy_mix.values().sum::<f64>() <= 0.0 {
                return bad("taxonomy weights sum to zero".into());
            }
            let mut probe_rng = ChaCha8Rng::seed_from_u64(0);
            for (&t, &w) in &self.taxonomy_mix {
                if w > 0.0 && template(t, self.k, self.c2_max_correct, &mut probe_rng).is_none() {
                    return bad(format!("type {t} cannot be realized with K={}", self.k));
                }
            }
        }
        Ok(())
    }
}

/// What the generator planted, for checking recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cell: Cell,
    /// Unit vector `w*`.
    pub direction: Vec<f64>,
    pub mean_correct: Vec<f64>,
    pub mean_wrong: Vec<f64>,
    pub bayes_auc: f64,
    pub type_directions: BTreeMap<ErrorType, Vec<f64>>,
    pub records: Vec<GroundTruthRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: String,
    pub correct: Option<bool>,
    /// Intended error types; empty when no resamples were generated.
    pub flags: Vec<ErrorType>,
}

impl GroundTruthRecord {
    pub fn label(&self) -> ErrorTypeLabel {
        ErrorTypeLabel::from_types(&self.flags)
    }
}

/// Sample multiset for one record: counts per answer plus refusals.
#[derive(Debug, Clone)]
struct Template {
    correct: usize,
    /// Counts of distinct wrong answers.
    wrong: Vec<usize>,
    refusals: usize,
    flags: Vec<ErrorType>,
}

fn range(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Option<usize> {
    (lo <= hi).then(|| rng.random_range(lo..=hi))
}

/// Splits `total` into `parts` counts of at least 1 and at most `cap`.
fn spread(rng: &mut ChaCha8Rng, total: usize, parts: usize, cap: usize) -> Option<Vec<usize>> {
    if parts == 0 || total < parts || total > parts * cap {
        return None;
    }
    let mut counts = vec![1; parts];
    let mut left = total - parts;
    while left > 0 {
        let i = rng.random_range(0..parts);
        if counts[i] < cap {
            counts[i] += 1;
            left -= 1;
        }
    }
    Some(counts)
}

/// Builds counts realizing exactly the flags of `kind`; `None` if K is too
/// small for that type.
fn template(kind: ErrorType, k: usize, c2_max_correct: usize, rng: &mut ChaCha8Rng) -> Option<Template> {
    let half = k.div_ceil(2);
    let t = |correct, wrong, refusals| Template {
        correct,
        wrong,
        refusals,
        flags: vec![kind],
    };
    match kind {
        ErrorType::A => {
            if k < 3 {
                return None;
            }
            let r = range(rng, half.max(k.saturating_sub(10)), k)?;
            Some(t(0, vec![1; k - r], r))
        }
        ErrorType::B1 => Some(t(k, vec![], 0)),
        ErrorType::B2 => {
            if k < 3 {
                return None;
            }
            let c = range(rng, half.max(k.saturating_sub(9)), k - 1)?;
            Some(t(c, vec![1; k - c], 0))
        }
        ErrorType::C1 => {
            if k < 3 {
                return None;
            }
            let top = range(rng, half.max(k.saturating_sub(9)), k)?;
            let mut wrong = vec![top];
            wrong.extend(std::iter::repeat_n(1, k - top));
            Some(t(0, wrong, 0))
        }
        ErrorType::C2 => {
            let c_hi = c2_max_correct.min(4).min(half.saturating_sub(1)).min(k - half);
            let c = range(rng, 1, c_hi)?;
            let top = range(rng, half.max((k - c).saturating_sub(8)), k - c)?;
            let mut wrong = vec![top];
            wrong.extend(std::iter::repeat_n(1, k - c - top));
            Some(t(c, wrong, 0))
        }
        ErrorType::D => {
            let mut pairs = Vec::new();
            for c in 5..half {
                for w in 5..half {
                    if c.abs_diff(w) <= 5 && c + w <= k && k - c - w <= 8 {
                        pairs.push((c, w));
                    }
                }
            }
            let &(c, w) = pairs.get(range(rng, 0, pairs.len().checked_sub(1)?)?)?;
            let mut wrong = vec![w];
            wrong.extend(std::iter::repeat_n(1, k - c - w));
            Some(t(c, wrong, 0))
        }
        ErrorType::E1 => {
            let cap = half.checked_sub(1)?;
            let lo = 11.max(k.div_ceil(cap.max(1)));
            let m = range(rng, lo, k.min(20))?;
            Some(t(0, spread(rng, k, m, cap)?, 0))
        }
        ErrorType::E2 => {
            let cap = half.checked_sub(1)?;
            let c = range(rng, 1, 4.min(cap))?;
            let lo = 10.max((k - c).div_ceil(cap.max(1)));
            let m = range(rng, lo, (k - c).min(20))?;
            Some(t(c, spread(rng, k - c, m, cap)?, 0))
        }
    }
}

const SYLLABLES: [&str; 24] = [
    "kar", "ven", "lo", "mir", "tha", "bel", "dor", "sa", "qui", "ren", "fal", "ost", "nim", "ber",
    "cal", "vio", "tur", "mes", "pel", "dra", "hon", "lis", "gar", "zen",
];

/// A fake two-token name, e.g. ("Kar", "ven").
fn name_parts(rng: &mut ChaCha8Rng) -> (String, String) {
    let a = SYLLABLES[rng.random_range(0..SYLLABLES.len())];
    let b = SYLLABLES[rng.random_range(0..SYLLABLES.len())];
    let mut head = a.to_string();
    head[..1].make_ascii_uppercase();
    (head, b.to_string())
}

fn distinct_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::with_capacity(n);
    while out.len() < n {
        let parts = name_parts(rng);
        let joined = format!("{}{}", parts.0, parts.1);
        if !out.iter().any(|(a, b)| format!("{a}{b}") == joined) {
            out.push(parts);
        }
    }
    out
}

/// Builds text and token offsets from token pieces.
fn assemble(pieces: &[&str]) -> (String, Vec<GeneratedToken>) {
    let mut text = String::new();
    let mut tokens = Vec::with_capacity(pieces.len());
    let mut at = 0;
    for p in pieces {
        let len = p.chars().count();
        tokens.push(GeneratedToken::new(*p, at, at + len));
        text.push_str(p);
        at += len;
    }
    (text, tokens)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize, against: &[&[f64]]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        orthogonalize(&mut v, against);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Gram–Schmidt against unit vectors.
fn orthogonalize(v: &mut [f64], against: &[&[f64]]) {
    for u in against {
        let proj: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u.iter()).for_each(|(a, b)| *a -= proj * b);
    }
}

fn noise_block(rng: &mut ChaCha8Rng, layers: usize, dim: usize, sigma: f64) -> ActivationBlock {
    let values = (0..layers * dim).map(|_| (sigma * gaussian(rng)) as f32).collect();
    ActivationBlock::new(layers, dim, values).expect("dimensions are positive")
}

fn add_to_layer(block: &mut ActivationBlock, layer: usize, direction: &[f64], scale: f64) {
    for (v, w) in block.layer_mut(layer).iter_mut().zip(direction) {
        *v = (f64::from(*v) + scale * w) as f32;
    }
}

fn draw_type(rng: &mut ChaCha8Rng, mix: &BTreeMap<ErrorType, f64>) -> ErrorType {
    let total: f64 = mix.values().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = *mix.keys().next().unwrap();
    for (&t, &w) in mix {
        if w <= 0.0 {
            continue;
        }
        last = t;
        if u < w {
            return t;
        }
        u -= w;
    }
    last
}

struct Planted {
    direction: Vec<f64>,
    type_directions: BTreeMap<ErrorType, Vec<f64>>,
}

fn directions(config: &SynthConfig, override_direction: Option<Vec<f64>>) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let own = unit_vector(&mut rng, config.hidden_dim, &[]);
    let direction = override_direction.unwrap_or(own);
    let mut type_directions: BTreeMap<ErrorType, Vec<f64>> = BTreeMap::new();
    if config.type_signal > 0.0 {
        for t in ErrorType::ALL {
            let v = {
                let mut against: Vec<&[f64]> = vec![&direction];
                against.extend(type_directions.values().map(Vec::as_slice));
                unit_vector(&mut rng, config.hidden_dim, &against)
            };
            type_directions.insert(t, v);
        }
    }
    Planted {
        direction,
        type_directions,
    }
}

pub fn generate_planted(config: &SynthConfig) -> Result<(ProbingDataset, GroundTruth)> {
    config.validate()?;
    let planted = directions(config, None);
    Ok(generate_with(config, planted))
}

/// Two datasets whose planted directions are equal (`shared_direction`) or
/// orthogonal. The first equals a solo `generate_planted(a)`; the second
/// reuses its own noise draws and only swaps the direction.
pub fn generate_pair(
    a: &SynthConfig,
    b: &SynthConfig,
    shared_direction: bool,
) -> Result<((ProbingDataset, GroundTruth), (ProbingDataset, GroundTruth))> {
    a.validate()?;
    b.validate()?;
    if (a.num_layers, a.hidden_dim) != (b.num_layers, b.hidden_dim) {
        return Err(Error::DimensionMismatch(format!(
            "pair needs equal shapes, got L={} d={} and L={} d={}",
            a.num_layers, a.hidden_dim, b.num_layers, b.hidden_dim
        )));
    }
    if !shared_direction && a.hidden_dim < 2 {
        return Err(Error::InvalidConfig("orthogonal directions need hidden_dim >= 2".into()));
    }
    let first = generate_planted(a)?;
    let base = &first.1.direction;
    let direction_b = if shared_direction {
        base.clone()
    } else {
        let own = directions(b, None).direction;
        let mut v = own.clone();
        orthogonalize(&mut v, &[base]);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(Error::InvalidConfig("directions are parallel; change seed".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };
    let second = generate_with(b, directions(b, Some(direction_b)));
    Ok((first, second))
}

fn generate_with(config: &SynthConfig, planted: Planted) -> (ProbingDataset, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let (l, d, sigma) = (config.num_layers, config.hidden_dim, config.noise_std);
    let s = config.signal_strength;
    let cell = &config.planted_cell;
    let with_resamples = !config.taxonomy_mix.is_empty();

    let mut records = Vec::with_capacity(config.num_records);
    let mut resamples = IndexMap::new();
    let mut truth = Vec::with_capacity(config.num_records);

    for i in 0..config.num_records {
        let id = format!("{}-{i:05}", config.name);

        // Answer distribution and the greedy draw.
        let (label, greedy_refusal, gold, greedy_name, samples_plan, flags) = if with_resamples {
            let kind = draw_type(&mut rng, &config.taxonomy_mix);
            let tpl = template(kind, config.k, config.c2_max_correct, &mut rng)
                .expect("validated configs realize every type");
            let names = distinct_names(&mut rng, 1 + tpl.wrong.len());
            // (name index or None for refusal, correct)
            let mut plan: Vec<(Option<usize>, bool)> = Vec::with_capacity(config.k);
            plan.extend(std::iter::repeat_n((Some(0), true), tpl.correct));
            for (w, &count) in tpl.wrong.iter().enumerate() {
                plan.extend(std::iter::repeat_n((Some(w + 1), false), count));
            }
            plan.extend(std::iter::repeat_n((None, false), tpl.refusals));
            plan.shuffle(&mut rng);
            let greedy = plan[rng.random_range(0..plan.len())];
            let greedy_name = greedy.0.map(|n| names[n].clone());
            (
                greedy.0.map(|_| greedy.1),
                greedy.0.is_none(),
                names[0].clone(),
                greedy_name,
                Some((plan, names)),
                tpl.flags,
            )
        } else {
            let z = rng.random::<f64>() < config.correct_rate;
            let names = distinct_names(&mut rng, 2);
            let pick = if z { names[0].clone() } else { names[1].clone() };
            (Some(z), false, names[0].clone(), Some(pick), None, vec![])
        };

        // Greedy text, tokens and log-probabilities.
        let (generated_answer, generated_tokens, exact_answer, exact_span, token_logprobs) =
            match &greedy_name {
                Some((head, tail)) => {
                    let head_tok = format!(" {head}");
                    let pieces = [
                        "The", " answer", " is", head_tok.as_str(), tail.as_str(), ",", " I", " am",
                        " fairly", " confident", ".",
                    ];
                    let (text, tokens) = assemble(&pieces);
                    let span = TokenSpan::new(3, 4);
                    let centre = if label == Some(true) { -0.3 } else { -0.3 - config.logit_gap };
                    let logprobs = (0..tokens.len())
                        .map(|t| {
                            if (span.first..=span.last).contains(&t) {
                                (centre + 0.5 * gaussian(&mut rng)).min(0.0)
                            } else {
                                -(0.05 + 0.3 * gaussian(&mut rng).abs())
                            }
                        })
                        .collect();
                    (text, tokens, Some(format!("{head}{tail}")), Some(span), logprobs)
                }
                None => {
                    let (text, tokens) = assemble(&["I", " cannot", " answer", " that", "."]);
                    let logprobs = (0..tokens.len())
                        .map(|_| -(0.05 + 0.3 * gaussian(&mut rng).abs()))
                        .collect();
                    (text, tokens, None, None, logprobs)
                }
            };
        let p_true = {
            let shift = match label {
                Some(true) => 1.0,
                Some(false) => -1.0,
                None => 0.0,
            };
            Some(1.0 / (1.0 + (-(shift + gaussian(&mut rng))).exp()))
        };

        // Hidden states at every named position.
        let mut activations = IndexMap::with_capacity(config.positions.len());
        for pos in &config.positions {
            let mut block = noise_block(&mut rng, l, d, sigma);
            if *pos == cell.position {
                if let Some(z) = label {
                    let scale = if z { 0.5 * s } else { -0.5 * s };
                    add_to_layer(&mut block, cell.layer, &planted.direction, scale);
                }
                for f in &flags {
                    if let Some(u) = planted.type_directions.get(f) {
                        add_to_layer(&mut block, cell.layer, u, config.type_signal);
                    }
                }
            }
            activations.insert(pos.clone(), block);
        }

        if let Some((plan, names)) = samples_plan {
            let samples = plan
                .iter()
                .map(|&(name, correct)| {
                    let mut block = noise_block(&mut rng, l, d, sigma);
                    match name {
                        Some(n) => {
                            let scale = if correct { 0.5 * s } else { -0.5 * s };
                            add_to_layer(&mut block, cell.layer, &planted.direction, scale);
                            let exact = format!("{}{}", names[n].0, names[n].1);
                            ResampleSample {
                                answer: format!("I think it is {exact}."),
                                exact_answer: Some(exact),
                                correct: Some(correct),
                                refusal: false,
                                activation: Some(block),
                            }
                        }
                        None => ResampleSample {
                            answer: "NO ANSWER".into(),
                            exact_answer: None,
                            correct: None,
                            refusal: true,
                            activation: Some(block),
                        },
                    }
                })
                .collect();
            resamples.insert(
                id.clone(),
                ResampleSet {
                    record_id: id.clone(),
                    temperature: config.temperature,
                    samples,
                },
            );
        }

        truth.push(GroundTruthRecord {
            id: id.clone(),
            correct: label,
            flags,
        });
        records.push(ProbingRecord {
            id,
            question: format!("Synthetic question {i}?"),
            gold_aliases: vec![format!("{}{}", gold.0, gold.1)],
            generated_answer,
            generated_tokens,
            token_logprobs,
            exact_answer,
            exact_span,
            correct: label,
            refusal: greedy_refusal,
            p_true,
            activations,
        });
    }

    let half: Vec<f64> = planted.direction.iter().map(|w| 0.5 * s * w).collect();
    let ground_truth = GroundTruth {
        cell: cell.clone(),
        mean_correct: half.clone(),
        mean_wrong: half.iter().map(|v| -v).collect(),
        direction: planted.direction,
        bayes_auc: config.bayes_auc(),
        type_directions: planted.type_directions,
        records: truth,
    };
    let dataset = ProbingDataset::new(
        config.name.clone(),
        records,
        with_resamples.then_some(resamples),
    );
    (dataset, ground_truth)
}

/// Writes the dump plus `ground_truth.json`.
pub fn write_synth(dataset: &ProbingDataset, truth: &GroundTruth, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    write_dataset(dataset, dir)?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let text = serde_json::to_string_pretty(truth).expect("ground truth serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_ground_truth(dir: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = dir.as_ref().join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => Error::io(&path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        file: GROUND_TRUTH_FILE.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use crate::taxonomy::{answer_stats, classify_error_type};

    fn small() -> SynthConfig {
        SynthConfig {
            num_records: 50,
            num_layers: 3,
            hidden_dim: 8,
            planted_cell: Cell::new(1, "exact_last"),
            ..Default::default()
        }
    }

    #[test]
    fn generated_dataset_is_valid() {
        let (ds, truth) = generate_planted(&small()).unwrap();
        assert!(validate_dataset(&ds).is_empty(), "{:?}", validate_dataset(&ds));
        assert_eq!(ds.len(), 50);
        assert_eq!(truth.records.len(), 50);
        assert_eq!(ds.position_names, default_positions());
        let norm: f64 = truth.direction.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn templates_realize_their_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [5, 12, 20, 29, 30, 31, 50] {
            for t in ErrorType::ALL {
                for _ in 0..50 {
                    let Some(tpl) = template(t, k, 4, &mut rng) else { continue };
                    let total = tpl.correct + tpl.wrong.iter().sum::<usize>() + tpl.refusals;
                    assert_eq!(total, k, "{t} at K={k}");
                    let stats = crate::taxonomy::AnswerStats {
                        k,
                        num_distinct: tpl.wrong.len() + usize::from(tpl.correct > 0),
                        correct_count: tpl.correct,
                        top_wrong_count: tpl.wrong.iter().copied().max().unwrap_or(0),
                        refusal_count: tpl.refusals,
                    };
                    assert_eq!(classify_error_type(&stats), ErrorTypeLabel::from_types(&tpl.flags), "{t} at K={k}: {tpl:?}");
                }
            }
        }
        // K=30 realizes every type.
        for t in ErrorType::ALL {
            assert!(template(t, 30, 4, &mut rng).is_some(), "{t}");
        }
    }

    #[test]
    fn resampled_records_match_intended_flags() {
        let config = SynthConfig {
            taxonomy_mix: ErrorType::ALL.into_iter().map(|t| (t, 1.0)).collect(),
            ..small()
        };
        let (ds, truth) = generate_planted(&config).unwrap();
        assert!(validate_dataset(&ds).is_empty());
        for (r, t) in ds.records.iter().zip(&truth.records) {
            let set = ds.resample_set(&r.id).unwrap();
            assert_eq!(set.samples.len(), 30);
            assert_eq!(classify_error_type(&answer_stats(set, &r.gold_aliases)), t.label());
            if t.flags == [ErrorType::B1] {
                assert_eq!(r.correct, Some(true));
            }
            if t.flags == [ErrorType::C1] || t.flags == [ErrorType::E1] {
                assert_eq!(r.correct, Some(false));
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = |c: SynthConfig| assert!(matches!(generate_planted(&c), Err(Error::InvalidConfig(_))));
        bad(SynthConfig { planted_cell: Cell::new(3, "exact_last"), ..small() });
        bad(SynthConfig { planted_cell: Cell::new(0, "nowhere"), ..small() });
        bad(SynthConfig { noise_std: 0.0, ..small() });
        bad(SynthConfig { correct_rate: 1.0, ..small() });
        bad(SynthConfig {
            k: 5,
            taxonomy_mix: BTreeMap::from([(ErrorType::E1, 1.0)]),
            ..small()
        });
    }

    #[test]
    fn pair_shapes_must_match() {
        let a = small();
        let b = SynthConfig { hidden_dim: 9, ..small() };
        assert!(matches!(generate_pair(&a, &b, true), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn pair_directions() {
        let a = small();
        let b = SynthConfig { seed: 9, name: "b".into(), ..small() };
        let ((_, ta), (_, tb)) = generate_pair(&a, &b, true).unwrap();
        assert_eq!(ta.direction, tb.direction);
        let ((_, ta), (_, tb)) = generate_pair(&a, &b, false).unwrap();
        let dot: f64 = ta.direction.iter().zip(&tb.direction).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-12);
    }
}
