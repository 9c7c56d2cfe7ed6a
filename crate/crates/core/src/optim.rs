//! Cayley-retraction descent on the complex Stiefel manifold.
//!
//! For a feasible `κ₀` and an ambient gradient `G`, the skew-Hermitian
//! `A = Gκ₀^H − κ₀G^H` defines the curve
//! `γ(τ) = (I + τA/2)⁻¹(I − τA/2) κ₀`, which satisfies `γ^H γ = I` for every
//! `τ`. Writing `A = UV^H` with `U = [G | κ₀]` and `V = [κ₀ | −G]` turns the
//! `nN × nN` solve into a `2n × 2n` one.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::window_sequences;
use crate::error::{Error, Result};
use crate::gradient::{raw_batch_loss, raw_loss_gradient, GradientMatrix};
use crate::hqmm::{check_burn_in, Hqmm, ObservationSequence};
use crate::linalg::{self, CMatrix};
use crate::metrics::evaluate_da;
use crate::quantum::{self, StiefelPoint};

/// Seed for the `index`-th independent job derived from a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_shapes(kappa0: &StiefelPoint, g: &GradientMatrix) -> Result<()> {
    if kappa0.matrix().shape() != g.matrix().shape() {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} does not match point shape {:?}",
            g.matrix().shape(),
            kappa0.matrix().shape()
        )));
    }
    Ok(())
}

fn check_step(tau: f64) -> Result<()> {
    if !tau.is_finite() {
        return Err(Error::Config(format!("step size must be finite, got {tau}")));
    }
    Ok(())
}

/// `A = Gκ^H − κG^H`.
pub fn skew_matrix(kappa: &CMatrix, g: &CMatrix) -> CMatrix {
    g * kappa.adjoint() - kappa * g.adjoint()
}

/// Cayley retraction through a dense `nN × nN` solve.
pub fn cayley_retract(kappa0: &StiefelPoint, g: &GradientMatrix, tau: f64) -> Result<StiefelPoint> {
    check_shapes(kappa0, g)?;
    check_step(tau)?;
    let k = kappa0.matrix();
    let a = skew_matrix(k, g.matrix()).scale(0.5 * tau);
    let eye = linalg::identity(k.nrows());
    let rhs = (&eye - &a) * k;
    let lhs = eye + a;
    let out = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular matrix in Cayley retraction".into()))?;
    finish(out, kappa0.block_dim())
}

/// Cayley retraction through the Sherman–Morrison–Woodbury identity:
/// `κ₀ − τU(I + τ/2 V^H U)⁻¹ V^H κ₀`.
pub fn cayley_retract_smw(kappa0: &StiefelPoint, g: &GradientMatrix, tau: f64) -> Result<StiefelPoint> {
    check_shapes(kappa0, g)?;
    check_step(tau)?;
    let k = kappa0.matrix();
    let g = g.matrix();
    let n = k.ncols();
    // V^H U and V^H κ₀ assembled from n × n products
    let kg = k.ad_mul(g);
    let gk = g.ad_mul(k);
    let gg = g.ad_mul(g);
    let kk = k.ad_mul(k);
    let mut vh_u = CMatrix::zeros(2 * n, 2 * n);
    vh_u.view_mut((0, 0), (n, n)).copy_from(&kg);
    vh_u.view_mut((0, n), (n, n)).copy_from(&kk);
    vh_u.view_mut((n, 0), (n, n)).copy_from(&(-&gg));
    vh_u.view_mut((n, n), (n, n)).copy_from(&(-&gk));
    let mut vh_k = CMatrix::zeros(2 * n, n);
    vh_k.view_mut((0, 0), (n, n)).copy_from(&kk);
    vh_k.view_mut((n, 0), (n, n)).copy_from(&(-&gk));

    let half = Complex64::new(0.5 * tau, 0.0);
    let lhs = DMatrix::identity(2 * n, 2 * n) + vh_u * half;
    let z = lhs
        .lu()
        .solve(&vh_k)
        .ok_or_else(|| Error::Numerical("singular matrix in Cayley retraction".into()))?;
    // κ₀ − τ(G z_top + κ₀ z_bottom)
    let minus_tau = Complex64::new(-tau, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let mut out = k.clone();
    out.gemm(minus_tau, g, &z.rows(0, n), one);
    out.gemm(minus_tau, k, &z.rows(n, n), one);
    finish(out, kappa0.block_dim())
}

fn finish(out: CMatrix, block_dim: usize) -> Result<StiefelPoint> {
    if !linalg::is_finite(&out) {
        return Err(Error::Numerical("non-finite entries after Cayley retraction".into()));
    }
    Ok(StiefelPoint::from_matrix_unchecked(out, block_dim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial step size.
    pub tau: f64,
    /// Multiplicative step decay applied after every epoch.
    pub alpha: f64,
    /// Momentum coefficient.
    pub beta: f64,
    pub batches: usize,
    /// When set, overrides `batches` with `ceil(windows / batch_size)`.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub epochs: usize,
    /// Cut sequences into non-overlapping windows of this length.
    pub window: Option<usize>,
    /// Leading symbols of each (windowed) sequence that update the state but
    /// are not scored.
    pub burn_in: usize,
    pub seed: u64,
    /// Independent initializations; the best one is returned.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.75,
            alpha: 0.92,
            beta: 0.9,
            batches: 7,
            batch_size: None,
            epochs: 60,
            window: None,
            burn_in: 0,
            seed: 0,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if self.batches == 0 || self.epochs == 0 || self.restarts == 0 || self.batch_size == Some(0) {
            return fail("batches, batch size, epochs and restarts must be at least 1".into());
        }
        if let Some(w) = self.window {
            if w <= self.burn_in {
                return fail(format!("window {w} must exceed burn-in {}", self.burn_in));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kappa: StiefelPoint,
    /// Last mixed direction before renormalization.
    pub momentum: GradientMatrix,
    pub tau: f64,
    pub beta: f64,
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(kappa: StiefelPoint, tau: f64, beta: f64) -> Self {
        let momentum = GradientMatrix::zeros(kappa.block_dim(), kappa.block_count());
        Self {
            kappa,
            momentum,
            tau,
            beta,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    Descend(GradientMatrix),
    /// Both the gradient and the stored momentum vanish.
    Converged,
}

/// Normalize, mix with momentum, normalize again. The mixed direction is
/// stored as the new momentum. A zero gradient reuses the momentum direction.
pub fn descent_direction(raw: &GradientMatrix, state: &mut OptimizerState) -> Result<Direction> {
    if !raw.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    if raw.matrix().shape() != state.momentum.matrix().shape() {
        return Err(Error::Dimension("gradient does not match optimizer state".into()));
    }
    let raw_norm = raw.frobenius_norm();
    let mom_norm = state.momentum.frobenius_norm();
    if raw_norm == 0.0 {
        if mom_norm == 0.0 {
            return Ok(Direction::Converged);
        }
        let dir = state.momentum.matrix().unscale(mom_norm);
        return Ok(Direction::Descend(GradientMatrix::new(dir, raw.block_dim())?));
    }
    let beta = Complex64::new(state.beta, 0.0);
    let mixed = state.momentum.matrix() * beta + raw.matrix() * Complex64::new((1.0 - state.beta) / raw_norm, 0.0);
    let norm = linalg::frobenius_norm(&mixed);
    if norm == 0.0 {
        // exact cancellation against the momentum; fall back to the fresh gradient
        state.momentum = GradientMatrix::new(raw.matrix().unscale(raw_norm), raw.block_dim())?;
        return Ok(Direction::Descend(state.momentum.clone()));
    }
    let dir = mixed.unscale(norm);
    state.momentum = GradientMatrix::new(mixed, raw.block_dim())?;
    Ok(Direction::Descend(GradientMatrix::new(dir, raw.block_dim())?))
}

/// One row per optimizer update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub tau: f64,
    pub grad_norm_raw: f64,
    pub stiefel_residual: f64,
    pub wall_ms: f64,
}

pub fn write_history<W: std::io::Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Hqmm,
    pub history: Vec<HistoryRow>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub selected_epoch: usize,
    pub validation_da: Option<f64>,
    /// Mean training loss of the returned parameters.
    pub train_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best: RunResult,
    pub restart: usize,
    /// Selection score of every restart: validation DA if available, else
    /// negative training loss.
    pub restart_scores: Vec<f64>,
}

/// Train an `(n, s, w)`-HQMM.
///
/// Each restart draws its own Stiefel initialization; the initial state is
/// drawn once from `seed` and kept fixed. With validation data the epoch with
/// the highest mean validation DA is kept, otherwise the final parameters.
pub fn train(
    data: &[ObservationSequence],
    validation: Option<&[ObservationSequence]>,
    n: usize,
    s: usize,
    w: usize,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    let prepare = |seqs: &[ObservationSequence]| -> Result<Vec<ObservationSequence>> {
        let out = match config.window {
            Some(len) => window_sequences(seqs, len, config.burn_in)?.windows,
            None => seqs.to_vec(),
        };
        if out.is_empty() {
            return Err(Error::EmptyData);
        }
        for seq in &out {
            seq.check_alphabet(s)?;
            check_burn_in(seq, config.burn_in)?;
        }
        Ok(out)
    };
    let windows = prepare(data)?;
    let validation = validation.map(prepare).transpose()?;

    let base = Hqmm::random(n, s, w, config.seed)?;
    let runs: Vec<RunResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let init = if r == 0 {
                base.clone()
            } else {
                let point = quantum::random_stiefel(n, s * w, derive_seed(config.seed, r as u64))?;
                Hqmm::from_stiefel(&point, s, w, base.rho0().clone())?
            };
            train_run(
                init,
                &windows,
                validation.as_deref(),
                config,
                derive_seed(config.seed, r as u64),
            )
        })
        .collect::<Result<_>>()?;

    let restart_scores: Vec<f64> = runs
        .iter()
        .map(|run| run.validation_da.unwrap_or(-run.train_loss))
        .collect();
    let mut restart = 0;
    for (i, &score) in restart_scores.iter().enumerate() {
        if score > restart_scores[restart] {
            restart = i;
        }
    }
    let best = runs.into_iter().nth(restart).expect("at least one restart");
    Ok(TrainResult {
        best,
        restart,
        restart_scores,
    })
}

/// Algorithm loop for a single initialization. `windows` must already be
/// validated against the alphabet and burn-in.
pub fn train_run(
    init: Hqmm,
    windows: &[ObservationSequence],
    validation: Option<&[ObservationSequence]>,
    config: &TrainConfig,
    shuffle_seed: u64,
) -> Result<RunResult> {
    let (n, s, w) = (init.n(), init.s(), init.w());
    let rho0 = init.rho0().clone();
    let mut state = OptimizerState::new(init.to_stiefel(), config.tau, config.beta);
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let batches = match config.batch_size {
        Some(size) => windows.len().div_ceil(size),
        None => config.batches.min(windows.len()),
    };
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs * batches);
    let start = Instant::now();

    let score = |model: &Hqmm| -> Result<Option<f64>> {
        validation
            .map(|v| evaluate_da(model, v, config.burn_in).map(|d| d.mean))
            .transpose()
    };
    let mut best_model = init.clone();
    let mut best_da = score(&init)?;
    let mut selected_epoch = 0;
    let mut converged = false;

    'epochs: for epoch in 1..=config.epochs {
        state.epoch = epoch;
        order.shuffle(&mut rng);
        let per_batch = order.len() / batches;
        for b in 0..batches {
            let lo = b * per_batch;
            let hi = if b + 1 == batches { order.len() } else { lo + per_batch };
            let idx = &order[lo..hi];
            let seqs: Vec<&[usize]> = idx.iter().map(|&i| windows[i].symbols()).collect();
            let ops = quantum::partition_blocks(state.kappa.matrix(), n)?;
            let (loss, grad) =
                raw_loss_gradient(&ops, w, rho0.matrix(), &seqs, config.burn_in).map_err(|e| match e {
                    Error::ZeroProbability {
                        sequence: Some(i),
                        step,
                        symbol,
                        prob,
                    } => Error::ZeroProbability {
                        sequence: Some(idx[i]),
                        step,
                        symbol,
                        prob,
                    },
                    other => other,
                })?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} or gradient at epoch {epoch}, batch {b}"
                )));
            }
            let grad_norm_raw = grad.frobenius_norm();
            match descent_direction(&grad, &mut state)? {
                Direction::Descend(dir) => {
                    state.kappa = cayley_retract_smw(&state.kappa, &dir, state.tau)?;
                }
                Direction::Converged => converged = true,
            }
            history.push(HistoryRow {
                epoch,
                batch: b,
                loss,
                tau: state.tau,
                grad_norm_raw,
                stiefel_residual: state.kappa.residual(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if converged {
                break;
            }
        }
        state.tau *= config.alpha;

        if validation.is_some() {
            let model = Hqmm::from_parts_unchecked(
                n,
                s,
                w,
                quantum::partition_blocks(state.kappa.matrix(), n)?,
                rho0.clone(),
            );
            let da = score(&model)?;
            if da > best_da {
                best_da = da;
                best_model = model;
                selected_epoch = epoch;
            }
        }
        if converged {
            break 'epochs;
        }
    }

    if validation.is_none() {
        best_model = Hqmm::from_parts_unchecked(
            n,
            s,
            w,
            quantum::partition_blocks(state.kappa.matrix(), n)?,
            rho0.clone(),
        );
        selected_epoch = state.epoch;
    }
    let seqs: Vec<&[usize]> = windows.iter().map(|s| s.symbols()).collect();
    let train_loss = raw_batch_loss(best_model.operators(), w, rho0.matrix(), &seqs, config.burn_in)?;
    Ok(RunResult {
        model: best_model,
        history,
        selected_epoch,
        validation_da: best_da,
        train_loss,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::loss_gradient;
    use proptest::prelude::*;

    fn random_instance(rows: usize, n: usize, seed: u64) -> (StiefelPoint, GradientMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kappa = quantum::random_stiefel_with(n, rows / n, &mut rng).unwrap();
        let g = GradientMatrix::new(linalg::complex_gaussian(rows, n, &mut rng), n).unwrap();
        (kappa, g)
    }

    #[test]
    fn zero_step_and_zero_gradient_are_identity() {
        let (kappa, g) = random_instance(12, 3, 1);
        for retract in [cayley_retract, cayley_retract_smw] {
            assert_eq!(retract(&kappa, &g, 0.0).unwrap().matrix(), kappa.matrix());
            let zero = GradientMatrix::zeros(3, 4);
            assert!(linalg::max_abs_diff(retract(&kappa, &zero, 2.5).unwrap().matrix(), kappa.matrix()) < 1e-15);
        }
    }

    #[test]
    fn forms_agree() {
        for seed in 0..20 {
            let (kappa, g) = random_instance(24, 4, seed);
            for tau in [0.01, 0.75, 10.0] {
                let a = cayley_retract(&kappa, &g, tau).unwrap();
                let b = cayley_retract_smw(&kappa, &g, tau).unwrap();
                assert!(linalg::max_abs_diff(a.matrix(), b.matrix()) < 1e-10);
            }
        }
    }

    #[test]
    fn large_steps_stay_feasible() {
        for seed in 0..10 {
            let (kappa, g) = random_instance(24, 4, seed);
            for tau in [10.0, 1e3] {
                assert!(cayley_retract_smw(&kappa, &g, tau).unwrap().residual() < 1e-10);
                assert!(cayley_retract(&kappa, &g, tau).unwrap().residual() < 1e-10);
            }
        }
    }

    #[test]
    fn tangent_is_projected_gradient() {
        let (kappa, g) = random_instance(18, 3, 4);
        let g = GradientMatrix::new(g.matrix().unscale(g.frobenius_norm()), 3).unwrap();
        let k = kappa.matrix();
        // γ'(0) = −Aκ₀ = −(G − κ₀ G^H κ₀)
        let expected = -(g.matrix() - k * g.matrix().adjoint() * k);
        let err = |h: f64| {
            let plus = cayley_retract_smw(&kappa, &g, h).unwrap();
            let minus = cayley_retract_smw(&kappa, &g, -h).unwrap();
            let fd = (plus.matrix() - minus.matrix()).unscale(2.0 * h);
            linalg::max_abs_diff(&fd, &expected)
        };
        let (e1, e2) = (err(1e-2), err(1e-3));
        assert!(e2 < 1e-5, "{e2}");
        assert!((60.0..140.0).contains(&(e1 / e2)), "{e1} {e2}");
    }

    #[test]
    fn tangent_equals_minus_g_when_orthogonal() {
        let (kappa, g) = random_instance(18, 3, 5);
        let k = kappa.matrix();
        let g_perp = g.matrix() - k * k.ad_mul(g.matrix());
        let g_perp = GradientMatrix::new(g_perp.unscale(linalg::frobenius_norm(&g_perp)), 3).unwrap();
        let h = 1e-4;
        let plus = cayley_retract(&kappa, &g_perp, h).unwrap();
        let minus = cayley_retract(&kappa, &g_perp, -h).unwrap();
        let fd = (plus.matrix() - minus.matrix()).unscale(2.0 * h);
        assert!(linalg::max_abs_diff(&fd, &-g_perp.matrix()) < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (kappa, _) = random_instance(12, 3, 1);
        let g = GradientMatrix::zeros(3, 2);
        assert!(cayley_retract(&kappa, &g, 0.1).is_err());
        assert!(cayley_retract_smw(&kappa, &g, 0.1).is_err());
    }

    #[test]
    fn first_direction_is_normalized_gradient() {
        let (kappa, g) = random_instance(12, 3, 2);
        let mut state = OptimizerState::new(kappa, 0.75, 0.9);
        let Direction::Descend(d) = descent_direction(&g, &mut state).unwrap() else {
            panic!("expected a direction")
        };
        let expected = g.matrix().unscale(g.frobenius_norm());
        assert!(linalg::max_abs_diff(d.matrix(), &expected) < 1e-14);
    }

    #[test]
    fn momentum_direction_is_fixed_point() {
        let (kappa, g) = random_instance(12, 3, 3);
        let mut state = OptimizerState::new(kappa, 0.75, 0.9);
        let Direction::Descend(first) = descent_direction(&g, &mut state).unwrap() else {
            panic!()
        };
        let Direction::Descend(second) = descent_direction(&first, &mut state).unwrap() else {
            panic!()
        };
        assert!(linalg::max_abs_diff(first.matrix(), second.matrix()) < 1e-14);
    }

    #[test]
    fn zero_gradient_falls_back_to_momentum() {
        let (kappa, g) = random_instance(12, 3, 6);
        let mut state = OptimizerState::new(kappa, 0.75, 0.9);
        let zero = GradientMatrix::zeros(3, 4);
        assert_eq!(descent_direction(&zero, &mut state).unwrap(), Direction::Converged);
        let Direction::Descend(first) = descent_direction(&g, &mut state).unwrap() else {
            panic!()
        };
        let Direction::Descend(again) = descent_direction(&zero, &mut state).unwrap() else {
            panic!()
        };
        assert!(linalg::max_abs_diff(first.matrix(), again.matrix()) < 1e-14);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                tau: 0.0,
                ..Default::default()
            },
            TrainConfig {
                alpha: 1.5,
                ..Default::default()
            },
            TrainConfig {
                beta: 1.0,
                ..Default::default()
            },
            TrainConfig {
                batches: 0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: Some(0),
                ..Default::default()
            },
            TrainConfig {
                window: Some(10),
                burn_in: 10,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn sample_data(truth: &Hqmm, count: usize, len: usize, seed: u64) -> Vec<ObservationSequence> {
        (0..count)
            .map(|i| truth.sample(len, derive_seed(seed, i as u64)).unwrap())
            .collect()
    }

    #[test]
    fn training_stays_feasible_and_logs_every_update() {
        let truth = Hqmm::random(2, 3, 1, 11).unwrap();
        let data = sample_data(&truth, 6, 40, 1);
        let config = TrainConfig {
            batches: 3,
            epochs: 4,
            burn_in: 5,
            ..Default::default()
        };
        let result = train(&data, None, 2, 3, 2, &config).unwrap();
        let run = &result.best;
        assert_eq!(run.history.len(), 12);
        assert!(run.history.iter().all(|r| r.stiefel_residual < 1e-8));
        assert!(run.model.to_stiefel().residual() < 1e-8);
        let taus: Vec<f64> = run.history.iter().step_by(3).map(|r| r.tau).collect();
        for pair in taus.windows(2) {
            assert!((pair[1] - 0.92 * pair[0]).abs() < 1e-15);
        }
        assert_eq!(run.selected_epoch, 4);
    }

    #[test]
    fn training_is_deterministic() {
        let truth = Hqmm::random(2, 3, 1, 12).unwrap();
        let data = sample_data(&truth, 6, 30, 2);
        let config = TrainConfig {
            batches: 2,
            epochs: 3,
            restarts: 2,
            ..Default::default()
        };
        let a = train(&data, None, 2, 3, 1, &config).unwrap();
        let b = train(&data, None, 2, 3, 1, &config).unwrap();
        assert_eq!(a.best.model, b.best.model);
        assert_eq!(a.restart_scores, b.restart_scores);
    }

    #[test]
    fn training_reduces_loss() {
        let truth = Hqmm::random(2, 4, 1, 13).unwrap();
        let data = sample_data(&truth, 20, 100, 3);
        let config = TrainConfig {
            batches: 4,
            epochs: 10,
            burn_in: 10,
            ..Default::default()
        };
        let run = train(&data, None, 2, 4, 1, &config).unwrap().best;
        let epoch_mean = |e: usize| {
            let rows: Vec<_> = run.history.iter().filter(|r| r.epoch == e).collect();
            rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64
        };
        assert!(epoch_mean(10) < epoch_mean(1));
    }

    #[test]
    fn validation_selects_best_epoch() {
        let truth = Hqmm::random(2, 3, 1, 14).unwrap();
        let data = sample_data(&truth, 8, 60, 4);
        let val = sample_data(&truth, 4, 60, 5);
        let config = TrainConfig {
            batches: 2,
            epochs: 5,
            burn_in: 10,
            ..Default::default()
        };
        let run = train(&data, Some(&val), 2, 3, 1, &config).unwrap().best;
        let da = evaluate_da(&run.model, &val, 10).unwrap().mean;
        assert_eq!(Some(da), run.validation_da);
    }

    #[test]
    fn batches_are_clamped_to_data() {
        let truth = Hqmm::random(2, 3, 1, 15).unwrap();
        let data = sample_data(&truth, 2, 20, 6);
        let config = TrainConfig {
            batches: 10,
            epochs: 1,
            ..Default::default()
        };
        let run = train(&data, None, 2, 3, 1, &config).unwrap().best;
        assert_eq!(run.history.len(), 2);
    }

    #[test]
    fn batch_size_sets_batch_count() {
        let truth = Hqmm::random(2, 3, 1, 15).unwrap();
        let data = sample_data(&truth, 7, 20, 6);
        let config = TrainConfig {
            batch_size: Some(3),
            epochs: 2,
            ..Default::default()
        };
        let run = train(&data, None, 2, 3, 1, &config).unwrap().best;
        assert_eq!(run.history.len(), 6);
    }

    #[test]
    fn windows_are_applied() {
        let truth = Hqmm::random(2, 3, 1, 16).unwrap();
        let data = sample_data(&truth, 2, 100, 7);
        let config = TrainConfig {
            batches: 20,
            epochs: 1,
            window: Some(25),
            burn_in: 5,
            ..Default::default()
        };
        let run = train(&data, None, 2, 3, 1, &config).unwrap().best;
        assert_eq!(run.history.len(), 8);
    }

    #[test]
    fn rejects_symbols_outside_alphabet() {
        let data = vec![ObservationSequence::new(vec![0, 5, 1])];
        assert!(matches!(
            train(&data, None, 2, 3, 1, &TrainConfig::default()),
            Err(Error::SymbolOutOfRange { .. })
        ));
    }

    #[test]
    fn descent_step_lowers_batch_loss() {
        let truth = Hqmm::random(2, 3, 2, 17).unwrap();
        let model = Hqmm::random(2, 3, 2, 18).unwrap();
        let data = sample_data(&truth, 5, 20, 8);
        let (loss, grad) = loss_gradient(&model, &data, 0).unwrap();
        let mut state = OptimizerState::new(model.to_stiefel(), 1e-3, 0.0);
        let Direction::Descend(dir) = descent_direction(&grad, &mut state).unwrap() else {
            panic!()
        };
        let next = cayley_retract_smw(&state.kappa, &dir, 1e-3).unwrap();
        let moved = Hqmm::from_stiefel(&next, 3, 2, model.rho0().clone()).unwrap();
        let new_loss = crate::gradient::batch_loss(&moved, &data, 0).unwrap();
        assert!(new_loss < loss);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn direction_has_unit_norm(seed in any::<u64>(), steps in 1usize..5) {
            let (kappa, _) = random_instance(8, 2, seed);
            let mut state = OptimizerState::new(kappa, 0.75, 0.9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..steps {
                let g = GradientMatrix::new(linalg::complex_gaussian(8, 2, &mut rng), 2).unwrap();
                let Direction::Descend(d) = descent_direction(&g, &mut state).unwrap() else {
                    panic!()
                };
                prop_assert!((d.frobenius_norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn retraction_preserves_orthonormality(seed in any::<u64>(), tau in -20.0f64..20.0) {
            let (kappa, g) = random_instance(12, 3, seed);
            let out = cayley_retract_smw(&kappa, &g, tau).unwrap();
            prop_assert!(out.residual() < 1e-10);
        }
    }
}
