//! Hidden quantum Markov models learned by gradient descent on the complex
//! Stiefel manifold.
//!
//! The stacked Kraus operators of a trace-preserving channel form a matrix
//! `κ` with orthonormal columns. Training minimizes the negative
//! log-likelihood of observed sequences with Cayley-transform updates that
//! keep `κ^H κ = I` for any step size, so every iterate is a valid model.

// Guards such as `!(p >= floor)` are written that way so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradient;
pub mod hmm;
pub mod hqmm;
pub mod linalg;
pub mod metrics;
pub mod model_file;
pub mod optim;
pub mod quantum;

pub use error::{Error, Result};
pub use gradient::{finite_difference_gradient, loss_gradient, GradientMatrix};
pub use hmm::{baum_welch_fit, BaumWelchConfig, Hmm};
pub use hqmm::{encode_hmm, Hqmm, ObservationSequence};
pub use linalg::CMatrix;
pub use metrics::{da_score, squash, DaScore};
pub use optim::{cayley_retract, cayley_retract_smw, train, TrainConfig};
pub use quantum::{DensityMatrix, KrausOperator, KrausSet, StiefelPoint};

/// Anything that assigns a log-likelihood to a symbol sequence.
pub trait SequenceModel: Sync {
    fn alphabet_size(&self) -> usize;

    /// `ln P(y_{b+1..ℓ} | y_{1..b})` with `b = burn_in`.
    fn log_likelihood(&self, seq: &ObservationSequence, burn_in: usize) -> Result<f64>;
}

impl SequenceModel for Hqmm {
    fn alphabet_size(&self) -> usize {
        self.s()
    }

    fn log_likelihood(&self, seq: &ObservationSequence, burn_in: usize) -> Result<f64> {
        Hqmm::log_likelihood(self, seq, burn_in)
    }
}

impl SequenceModel for Hmm {
    fn alphabet_size(&self) -> usize {
        self.s()
    }

    fn log_likelihood(&self, seq: &ObservationSequence, burn_in: usize) -> Result<f64> {
        self.forward_log_likelihood(seq, burn_in)
    }
}

/// Either model kind, as stored in a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Hqmm(Hqmm),
    Hmm(Hmm),
}

impl SequenceModel for Model {
    fn alphabet_size(&self) -> usize {
        match self {
            Model::Hqmm(m) => m.s(),
            Model::Hmm(m) => m.s(),
        }
    }

    fn log_likelihood(&self, seq: &ObservationSequence, burn_in: usize) -> Result<f64> {
        match self {
            Model::Hqmm(m) => m.log_likelihood(seq, burn_in),
            Model::Hmm(m) => m.forward_log_likelihood(seq, burn_in),
        }
    }
}

impl Model {
    pub fn sample(&self, length: usize, seed: u64) -> Result<ObservationSequence> {
        match self {
            Model::Hqmm(m) => m.sample(length, seed),
            Model::Hmm(m) => m.sample(length, seed),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Hqmm(_) => "hqmm",
            Model::Hmm(_) => "hmm",
        }
    }
}
