//! Negative log-likelihood and its Wirtinger gradient `∂𝓛/∂κ̄`.
//!
//! The gradient is accumulated by a reverse pass through the normalized
//! filtering recursion. With `M_t = Σ_w K_w ρ_{t-1} K_w^H`, `p_t = tr M_t`
//! and `ρ_t = M_t / p_t`, write `R_t` for the adjoint of `ρ_t` (so that
//! `d𝓛 = Re tr(R_t^H dρ_t)`). One step backwards is
//!
//! ```text
//! σ      = (Re tr(R_t^H ρ_t) + c_t) / p_t        c_t = 1 if step t is scored
//! M̄      = R_t / p_t − σ I
//! G_w   += M̄ K_w ρ_{t-1}
//! R_{t-1} = Σ_w K_w^H M̄ K_w
//! ```
//!
//! A finite-difference oracle perturbs real and imaginary parts of every
//! entry separately and assembles `½(∂/∂Re + i ∂/∂Im)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hqmm::{check_burn_in, joint_update, sequence_log_likelihood, Hqmm, ObservationSequence};
use crate::linalg::{self, CMatrix, ZERO};
use crate::quantum::{self, PROB_FLOOR};

/// Gradient with the same `nN × n` block layout as the model's Stiefel point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    matrix: CMatrix,
    block_dim: usize,
}

impl GradientMatrix {
    pub fn new(matrix: CMatrix, block_dim: usize) -> Result<Self> {
        if block_dim == 0 || matrix.ncols() != block_dim || !matrix.nrows().is_multiple_of(block_dim) {
            return Err(Error::Partition {
                rows: matrix.nrows(),
                block_dim,
            });
        }
        Ok(Self { matrix, block_dim })
    }

    pub fn zeros(block_dim: usize, block_count: usize) -> Self {
        Self {
            matrix: CMatrix::zeros(block_dim * block_count, block_dim),
            block_dim,
        }
    }

    pub(crate) fn from_blocks(blocks: &[CMatrix], block_dim: usize) -> Self {
        Self {
            matrix: quantum::stack_blocks(blocks.iter(), block_dim),
            block_dim,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn block_count(&self) -> usize {
        self.matrix.nrows() / self.block_dim
    }

    pub fn block(&self, i: usize) -> CMatrix {
        self.matrix.rows(i * self.block_dim, self.block_dim).into_owned()
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius_norm(&self.matrix)
    }

    pub fn is_finite(&self) -> bool {
        linalg::is_finite(&self.matrix)
    }
}

fn check_batch(model: &Hqmm, batch: &[ObservationSequence], burn_in: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    for seq in batch {
        seq.check_alphabet(model.s())?;
        check_burn_in(seq, burn_in)?;
    }
    Ok(())
}

/// Mean negative log-likelihood of `batch` and its gradient with respect to
/// the conjugated stacked Kraus operators.
pub fn loss_gradient(model: &Hqmm, batch: &[ObservationSequence], burn_in: usize) -> Result<(f64, GradientMatrix)> {
    check_batch(model, batch, burn_in)?;
    let seqs: Vec<&[usize]> = batch.iter().map(|s| s.symbols()).collect();
    raw_loss_gradient(model.operators(), model.w(), model.rho0().matrix(), &seqs, burn_in)
}

/// Mean negative log-likelihood without the gradient.
pub fn batch_loss(model: &Hqmm, batch: &[ObservationSequence], burn_in: usize) -> Result<f64> {
    check_batch(model, batch, burn_in)?;
    let seqs: Vec<&[usize]> = batch.iter().map(|s| s.symbols()).collect();
    raw_batch_loss(model.operators(), model.w(), model.rho0().matrix(), &seqs, burn_in)
}

pub(crate) fn raw_batch_loss(
    ops: &[CMatrix],
    w: usize,
    rho0: &CMatrix,
    seqs: &[&[usize]],
    burn_in: usize,
) -> Result<f64> {
    let lls: Vec<f64> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, seq)| sequence_log_likelihood(ops, w, rho0, seq, burn_in).map_err(|e| e.in_sequence(i)))
        .collect::<Result<_>>()?;
    Ok(-lls.iter().sum::<f64>() / seqs.len() as f64)
}

/// Per-sequence passes run in parallel; results are reduced in batch order so
/// the output does not depend on thread scheduling.
pub(crate) fn raw_loss_gradient(
    ops: &[CMatrix],
    w: usize,
    rho0: &CMatrix,
    seqs: &[&[usize]],
    burn_in: usize,
) -> Result<(f64, GradientMatrix)> {
    let n = rho0.nrows();
    let per_sequence: Vec<(f64, Vec<CMatrix>)> = seqs
        .par_iter()
        .enumerate()
        .map(|(i, seq)| sequence_gradient(ops, w, rho0, seq, burn_in).map_err(|e| e.in_sequence(i)))
        .collect::<Result<_>>()?;
    let scale = 1.0 / seqs.len() as f64;
    let mut loss = 0.0;
    let mut blocks = vec![CMatrix::zeros(n, n); ops.len()];
    for (seq_loss, seq_blocks) in &per_sequence {
        loss += seq_loss;
        for (acc, g) in blocks.iter_mut().zip(seq_blocks) {
            *acc += g;
        }
    }
    for b in &mut blocks {
        b.scale_mut(scale);
    }
    Ok((loss * scale, GradientMatrix::from_blocks(&blocks, n)))
}

/// Negative log-likelihood of one sequence and its (unscaled) gradient blocks.
fn sequence_gradient(
    ops: &[CMatrix],
    w: usize,
    rho0: &CMatrix,
    seq: &[usize],
    burn_in: usize,
) -> Result<(f64, Vec<CMatrix>)> {
    let n = rho0.nrows();
    let len = seq.len();
    let mut states = Vec::with_capacity(len + 1);
    let mut probs = Vec::with_capacity(len);
    states.push(rho0.clone());
    let mut scratch = CMatrix::zeros(n, n);
    let mut loss = 0.0;
    for (t, &y) in seq.iter().enumerate() {
        let mut next = CMatrix::zeros(n, n);
        let p = joint_update(&ops[y * w..(y + 1) * w], &states[t], &mut next, &mut scratch);
        if !(p >= PROB_FLOOR) {
            return Err(Error::ZeroProbability {
                sequence: None,
                step: t + 1,
                symbol: y,
                prob: p,
            });
        }
        next.unscale_mut(p);
        if t >= burn_in {
            loss -= p.ln();
        }
        probs.push(p);
        states.push(next);
    }

    let one = Complex64::new(1.0, 0.0);
    let mut grads = vec![CMatrix::zeros(n, n); ops.len()];
    let mut adjoint = CMatrix::zeros(n, n);
    let mut next_adjoint = CMatrix::zeros(n, n);
    let mut m_bar = CMatrix::zeros(n, n);
    let mut m_bar_k = CMatrix::zeros(n, n);
    for t in (0..len).rev() {
        let y = seq[t];
        let p = probs[t];
        let scored = if t >= burn_in { 1.0 } else { 0.0 };
        let sigma = (linalg::real_inner(&adjoint, &states[t + 1]) + scored) / p;
        m_bar.copy_from(&adjoint);
        m_bar.unscale_mut(p);
        for i in 0..n {
            m_bar[(i, i)] -= sigma;
        }
        next_adjoint.fill(ZERO);
        for (k, g) in ops[y * w..(y + 1) * w].iter().zip(&mut grads[y * w..(y + 1) * w]) {
            m_bar_k.gemm(one, &m_bar, k, ZERO);
            g.gemm(one, &m_bar_k, &states[t], one);
            if t > 0 {
                linalg::add_adjoint_mul(&mut next_adjoint, k, &m_bar_k);
            }
        }
        std::mem::swap(&mut adjoint, &mut next_adjoint);
    }
    Ok((loss, grads))
}

/// Central-difference Wirtinger gradient `½(∂f/∂Re + i ∂f/∂Im)` of a real
/// function of a complex matrix. Perturbed points are used as-is.
pub fn wirtinger_finite_difference<F>(point: &CMatrix, h: f64, f: F) -> Result<CMatrix>
where
    F: Fn(&CMatrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut grad = CMatrix::zeros(point.nrows(), point.ncols());
    let mut probe = point.clone();
    for j in 0..point.ncols() {
        for i in 0..point.nrows() {
            let orig = point[(i, j)];
            let mut partial = |delta: Complex64| -> Result<f64> {
                probe[(i, j)] = orig + delta;
                let plus = f(&probe)?;
                probe[(i, j)] = orig - delta;
                let minus = f(&probe)?;
                probe[(i, j)] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let d_re = partial(Complex64::new(h, 0.0))?;
            let d_im = partial(Complex64::new(0.0, h))?;
            grad[(i, j)] = Complex64::new(0.5 * d_re, 0.5 * d_im);
        }
    }
    Ok(grad)
}

/// Finite-difference oracle for [`loss_gradient`]; the perturbed Kraus
/// operators are evaluated without projecting back to the manifold.
pub fn finite_difference_gradient(
    model: &Hqmm,
    batch: &[ObservationSequence],
    burn_in: usize,
    h: f64,
) -> Result<GradientMatrix> {
    check_batch(model, batch, burn_in)?;
    let n = model.n();
    let seqs: Vec<&[usize]> = batch.iter().map(|s| s.symbols()).collect();
    let kappa = model.to_stiefel().into_matrix();
    let rho0 = model.rho0().matrix();
    let grad = wirtinger_finite_difference(&kappa, h, |k| {
        let ops = quantum::partition_blocks(k, n)?;
        raw_batch_loss(&ops, model.w(), rho0, &seqs, burn_in)
    })?;
    GradientMatrix::new(grad, n)
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`, zero when both vanish.
pub fn relative_error(a: &CMatrix, b: &CMatrix) -> f64 {
    let scale = linalg::frobenius_norm(a).max(linalg::frobenius_norm(b));
    if scale == 0.0 {
        return 0.0;
    }
    linalg::frobenius_norm(&(a - b)) / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: f64,
    pub analytic_norm: f64,
    pub finite_difference_norm: f64,
    pub max_relative_error: f64,
    /// Per Kraus block, `‖ΔG_i‖_F` over the larger full-gradient norm.
    pub block_relative_errors: Vec<f64>,
}

pub fn compare_gradients(analytic: &GradientMatrix, numeric: &GradientMatrix, loss: f64) -> GradcheckReport {
    let a = analytic.matrix();
    let b = numeric.matrix();
    let scale = linalg::frobenius_norm(a).max(linalg::frobenius_norm(b));
    let block_relative_errors = (0..analytic.block_count())
        .map(|i| {
            let d = linalg::frobenius_norm(&(analytic.block(i) - numeric.block(i)));
            if scale == 0.0 {
                0.0
            } else {
                d / scale
            }
        })
        .collect();
    GradcheckReport {
        loss,
        analytic_norm: linalg::frobenius_norm(a),
        finite_difference_norm: linalg::frobenius_norm(b),
        max_relative_error: relative_error(a, b),
        block_relative_errors,
    }
}

/// Analytic gradient against the finite-difference oracle.
pub fn gradcheck(model: &Hqmm, batch: &[ObservationSequence], burn_in: usize, h: f64) -> Result<GradcheckReport> {
    let (loss, analytic) = loss_gradient(model, batch, burn_in)?;
    let numeric = finite_difference_gradient(model, batch, burn_in, h)?;
    Ok(compare_gradients(&analytic, &numeric, loss))
}
