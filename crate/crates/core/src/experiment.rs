//! Fitting either model family from one description, and cross-validated
//! one-model-per-class classification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSequenceSet;
use crate::error::{Error, Result};
use crate::hmm::{baum_welch_fit, BaumWelchConfig};
use crate::hqmm::ObservationSequence;
use crate::metrics::{accuracy, balanced_accuracy, classify, kfold_splits};
use crate::optim::{derive_seed, train, TrainConfig};
use crate::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Hqmm { n: usize, w: usize, config: TrainConfig },
    Hmm { n: usize, config: BaumWelchConfig },
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    /// Mean per-sequence negative log-likelihood on the training data.
    pub train_loss: f64,
    pub validation_da: Option<f64>,
}

impl ModelSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut spec = self.clone();
        match &mut spec {
            ModelSpec::Hqmm { config, .. } => config.seed = seed,
            ModelSpec::Hmm { config, .. } => config.seed = seed,
        }
        spec
    }

    pub fn fit(
        &self,
        data: &[ObservationSequence],
        validation: Option<&[ObservationSequence]>,
        s: usize,
    ) -> Result<Fitted> {
        match self {
            ModelSpec::Hqmm { n, w, config } => {
                let run = train(data, validation, *n, s, *w, config)?.best;
                Ok(Fitted {
                    model: Model::Hqmm(run.model),
                    train_loss: run.train_loss,
                    validation_da: run.validation_da,
                })
            }
            ModelSpec::Hmm { n, config } => {
                let fit = baum_welch_fit(data, *n, s, config, validation)?;
                let ll = *fit.log_likelihoods.last().expect("at least one iteration");
                Ok(Fitted {
                    model: Model::Hmm(fit.hmm),
                    train_loss: -ll / data.len() as f64,
                    validation_da: None,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Per-fold mean of the per-class recalls.
    pub fold_balanced_accuracies: Vec<f64>,
    pub mean_balanced_accuracy: f64,
}

/// Stratified k-fold evaluation: per fold, fit one model per class on the
/// training part and label each test sequence by the most likely model.
pub fn cross_validate(set: &LabeledSequenceSet, spec: &ModelSpec, folds: usize, seed: u64) -> Result<CvReport> {
    let labels = set
        .labels
        .as_deref()
        .ok_or_else(|| Error::Config("cross-validation needs labeled data".into()))?;
    let classes = set.num_classes();
    let splits = kfold_splits(labels, folds, seed)?;
    let scores = splits
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let fold_seed = derive_seed(seed, f as u64 + 1);
            let models = (0..classes)
                .into_par_iter()
                .map(|c| {
                    let data = set.select_class(&fold.train, c);
                    if data.is_empty() {
                        return Err(Error::Config(format!("fold {f} has no training data for class {c}")));
                    }
                    spec.with_seed(derive_seed(fold_seed, c as u64))
                        .fit(&data, None, set.alphabet_size())
                        .map(|fitted| fitted.model)
                })
                .collect::<Result<Vec<_>>>()?;
            let predictions = fold
                .test
                .iter()
                .map(|&i| classify(&models, &set.sequences[i]))
                .collect::<Result<Vec<_>>>()?;
            let truths: Vec<usize> = fold.test.iter().map(|&i| labels[i]).collect();
            Ok((
                accuracy(&predictions, &truths)?,
                balanced_accuracy(&predictions, &truths)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fold_accuracies, fold_balanced_accuracies): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CvReport {
        mean_accuracy: mean(&fold_accuracies),
        mean_balanced_accuracy: mean(&fold_balanced_accuracies),
        fold_accuracies,
        fold_balanced_accuracies,
    })
}
