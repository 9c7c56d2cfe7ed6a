//! Description accuracy, classification accuracy and cross-validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hqmm::ObservationSequence;
use crate::SequenceModel;

/// Maps `(−∞, 1]` onto `(−1, 1]`: identity on `[0, 1]`, and
/// `(1 − e^{−x/4}) / (1 + e^{−x/4})` below zero.
pub fn squash(x: f64) -> Result<f64> {
    if x.is_nan() || x > 1.0 {
        return Err(Error::Config(format!("squash is defined on (-inf, 1], got {x}")));
    }
    if x >= 0.0 {
        return Ok(x);
    }
    // same function as −tanh(−x/8); tanh rounds to 1 for large arguments, so
    // keep the result strictly above −1
    Ok((-(-0.125 * x).tanh()).max((-1.0f64).next_up()))
}

/// Description accuracy of one scored sequence.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DaScore(f64);

impl DaScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `f(1 + log_s P / ℓ)` for a natural-log likelihood over `ℓ` scored symbols.
pub fn da_score(log_likelihood: f64, s: usize, effective_length: usize) -> Result<DaScore> {
    if s < 2 {
        return Err(Error::Config(format!("alphabet size must be at least 2, got {s}")));
    }
    if effective_length == 0 {
        return Err(Error::Config("effective length must be at least 1".into()));
    }
    if log_likelihood.is_nan() || log_likelihood > 0.0 {
        return Err(Error::Numerical(format!(
            "log-likelihood {log_likelihood} is not a log-probability"
        )));
    }
    let x = 1.0 + log_likelihood / ((s as f64).ln() * effective_length as f64);
    squash(x).map(DaScore)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaSummary {
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across sequences.
    pub std_dev: f64,
}

impl DaSummary {
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyData);
        }
        let m = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / m;
        let var = scores.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / m;
        Ok(Self {
            scores,
            mean,
            std_dev: var.sqrt(),
        })
    }
}

/// DA of every sequence under `model`, scoring symbols after `burn_in`.
pub fn evaluate_da<M: SequenceModel + ?Sized>(
    model: &M,
    data: &[ObservationSequence],
    burn_in: usize,
) -> Result<DaSummary> {
    let s = model.alphabet_size();
    let scores = data
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let ll = model.log_likelihood(seq, burn_in).map_err(|e| e.in_sequence(i))?;
            da_score(ll, s, seq.len() - burn_in).map(DaScore::value)
        })
        .collect::<Result<Vec<_>>>()?;
    DaSummary::from_scores(scores)
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_label(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Label of the model assigning the highest log-likelihood. A model that
/// gives the sequence zero probability scores `−∞`.
pub fn classify<M: SequenceModel>(models: &[M], seq: &ObservationSequence) -> Result<usize> {
    let first = models.first().ok_or(Error::EmptyData)?;
    let s = first.alphabet_size();
    if let Some(m) = models.iter().find(|m| m.alphabet_size() != s) {
        return Err(Error::Dimension(format!(
            "models disagree on alphabet size: {s} vs {}",
            m.alphabet_size()
        )));
    }
    let scores = models
        .iter()
        .map(|m| match m.log_likelihood(seq, 0) {
            Err(Error::ZeroProbability { .. }) => Ok(f64::NEG_INFINITY),
            other => other,
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_label(&scores).expect("non-empty"))
}

pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::EmptyData);
    }
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truths.len() as f64)
}

/// Mean over the classes present in `truths` of the fraction of that class
/// labelled correctly. A constant predictor scores `1/k` on `k` classes
/// whatever the class sizes.
pub fn balanced_accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    accuracy(predictions, truths)?;
    let classes = truths.iter().max().map_or(0, |m| m + 1);
    let mut total = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        total[t] += 1;
        correct[t] += usize::from(p == t);
    }
    let present: Vec<f64> = total
        .iter()
        .zip(&correct)
        .filter(|(&n, _)| n > 0)
        .map(|(&n, &c)| c as f64 / n as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split. Items of each class are shuffled and dealt to
/// folds round-robin, continuing the deal across classes so fold sizes
/// differ by at most one.
pub fn kfold_splits(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if let Some((c, members)) = by_class.iter().enumerate().find(|(_, m)| !m.is_empty() && m.len() < k) {
        return Err(Error::Config(format!(
            "class {c} has {} items, fewer than {k} folds",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); k];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            tests[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; labels.len()];
            for &i in &test {
                in_test[i] = true;
            }
            let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect())
}
