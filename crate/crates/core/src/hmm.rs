//! Classical discrete HMM reference: observable-operator filtering,
//! Baum–Welch training and sampling.
//!
//! Matrices are column-stochastic: `A[(i, j)] = P(z_t = i | z_{t-1} = j)`
//! and `C[(y, j)] = P(y_t = y | z_t = j)`. The prior describes `z_0`; the
//! first symbol is emitted after one transition, so
//! `P(y_1) = 1ᵀ diag(C_{y_1,:}) A x_0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hqmm::{check_burn_in, draw_index, ObservationSequence};
use crate::optim::derive_seed;
use crate::quantum::{BeliefVector, PROB_FLOOR};

/// Column sums must be within this of one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    transition: DMatrix<f64>,
    emission: DMatrix<f64>,
    prior: BeliefVector,
}

fn check_column_stochastic(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Config(format!("{what} has negative or non-finite entries")));
    }
    for (j, col) in m.column_iter().enumerate() {
        let total: f64 = col.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::Config(format!("{what} column {j} sums to {total}")));
        }
    }
    Ok(())
}

/// Column with i.i.d. Gamma(concentration) entries, normalized. Entries are
/// kept strictly positive.
fn dirichlet_column<R: Rng + ?Sized>(len: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut col: Vec<f64> = (0..len).map(|_| gamma.sample(rng).max(1e-12)).collect();
    let total: f64 = col.iter().sum();
    col.iter_mut().for_each(|x| *x /= total);
    col
}

fn random_stochastic<R: Rng + ?Sized>(rows: usize, cols: usize, concentration: f64, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        let col = dirichlet_column(rows, concentration, rng);
        m.column_mut(j).copy_from_slice(&col);
    }
    m
}

impl Hmm {
    pub fn new(transition: DMatrix<f64>, emission: DMatrix<f64>, prior: Vec<f64>) -> Result<Self> {
        let n = transition.nrows();
        if n == 0 || transition.ncols() != n {
            return Err(Error::Dimension(format!(
                "transition matrix must be square and non-empty, found {:?}",
                transition.shape()
            )));
        }
        if emission.ncols() != n || emission.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "emission matrix must be s x {n}, found {:?}",
                emission.shape()
            )));
        }
        if prior.len() != n {
            return Err(Error::Dimension(format!("prior must have {n} entries")));
        }
        check_column_stochastic(&transition, "transition matrix")?;
        check_column_stochastic(&emission, "emission matrix")?;
        Ok(Self {
            transition,
            emission,
            prior: BeliefVector::new(prior)?,
        })
    }

    /// Seeded random HMM whose columns (and prior) are drawn from a symmetric
    /// Dirichlet with the given concentration; smaller values give peakier,
    /// more predictable models.
    pub fn random(n: usize, s: usize, concentration: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(n, s, concentration, &mut rng)
    }

    pub fn random_with<R: Rng + ?Sized>(n: usize, s: usize, concentration: f64, rng: &mut R) -> Result<Self> {
        if n == 0 || s == 0 {
            return Err(Error::Config(format!("HMM needs n, s >= 1 (n = {n}, s = {s})")));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::Config(format!(
                "concentration must be positive, got {concentration}"
            )));
        }
        let transition = random_stochastic(n, n, concentration, rng);
        let emission = random_stochastic(s, n, concentration, rng);
        let prior = dirichlet_column(n, concentration, rng);
        Ok(Self {
            transition,
            emission,
            prior: BeliefVector::new(prior)?,
        })
    }

    /// All-uniform model: every sequence of length `ℓ` has probability `s^-ℓ`.
    pub fn uniform(n: usize, s: usize) -> Self {
        Self {
            transition: DMatrix::from_element(n, n, 1.0 / n as f64),
            emission: DMatrix::from_element(s, n, 1.0 / s as f64),
            prior: BeliefVector::uniform(n),
        }
    }

    pub fn n(&self) -> usize {
        self.transition.nrows()
    }

    pub fn s(&self) -> usize {
        self.emission.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn emission(&self) -> &DMatrix<f64> {
        &self.emission
    }

    pub fn prior(&self) -> &BeliefVector {
        &self.prior
    }

    /// `T_y = diag(C_{y,:}) A` for each symbol; `Σ_y T_y = A`.
    pub fn oom_operators(&self) -> Vec<DMatrix<f64>> {
        (0..self.s())
            .map(|y| {
                let mut t = self.transition.clone();
                for (i, mut row) in t.row_iter_mut().enumerate() {
                    row *= self.emission[(y, i)];
                }
                t
            })
            .collect()
    }

    /// Normalized forward filter; sums `ln 1ᵀ T_y x` over steps after the
    /// burn-in.
    pub fn forward_log_likelihood(&self, seq: &ObservationSequence, burn_in: usize) -> Result<f64> {
        seq.check_alphabet(self.s())?;
        check_burn_in(seq, burn_in)?;
        let n = self.n();
        let mut x = DVector::from_column_slice(self.prior.probs());
        let mut predicted = DVector::zeros(n);
        let mut total = 0.0;
        for (t, &y) in seq.symbols().iter().enumerate() {
            predicted.gemv(1.0, &self.transition, &x, 0.0);
            let mut p = 0.0;
            for i in 0..n {
                let v = predicted[i] * self.emission[(y, i)];
                x[i] = v;
                p += v;
            }
            if !(p >= PROB_FLOOR) {
                return Err(Error::ZeroProbability {
                    sequence: None,
                    step: t + 1,
                    symbol: y,
                    prob: p,
                });
            }
            x.unscale_mut(p);
            if t >= burn_in {
                total += p.ln();
            }
        }
        Ok(total)
    }

    pub fn sample(&self, length: usize, seed: u64) -> Result<ObservationSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(length, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<ObservationSequence> {
        if length == 0 {
            return Err(Error::Config("sample length must be at least 1".into()));
        }
        let mut state = draw_index(self.prior.probs(), rng);
        let mut symbols = Vec::with_capacity(length);
        for _ in 0..length {
            state = draw_index(self.transition.column(state).as_slice(), rng);
            symbols.push(draw_index(self.emission.column(state).as_slice(), rng));
        }
        Ok(ObservationSequence::new(symbols))
    }

    /// Total log-likelihood of a data set (no burn-in).
    pub fn total_log_likelihood(&self, data: &[ObservationSequence]) -> Result<f64> {
        data.iter().map(|seq| self.forward_log_likelihood(seq, 0)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchConfig {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tolerance: f64,
    /// Added to every expected count before renormalizing.
    pub smoothing: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Dirichlet concentration of the random initializations.
    pub init_concentration: f64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            smoothing: 1e-9,
            restarts: 5,
            seed: 0,
            init_concentration: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaumWelchFit {
    pub hmm: Hmm,
    /// Total training log-likelihood of each visited parameter set, in
    /// order; the last entry belongs to `hmm`.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    /// Validation log-likelihood of `hmm` when validation data was given.
    pub validation_log_likelihood: Option<f64>,
}

struct Expectations {
    log_likelihood: f64,
    initial: DVector<f64>,
    transitions: DMatrix<f64>,
    emissions: DMatrix<f64>,
}

impl Expectations {
    fn zeros(n: usize, s: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            initial: DVector::zeros(n),
            transitions: DMatrix::zeros(n, n),
            emissions: DMatrix::zeros(s, n),
        }
    }

    fn add(&mut self, other: &Expectations) {
        self.log_likelihood += other.log_likelihood;
        self.initial += &other.initial;
        self.transitions += &other.transitions;
        self.emissions += &other.emissions;
    }
}

/// Scaled forward-backward pass for one sequence.
fn expectations(hmm: &Hmm, seq: &[usize]) -> Result<Expectations> {
    let n = hmm.n();
    let len = seq.len();
    let a = &hmm.transition;
    let c = &hmm.emission;
    let mut stats = Expectations::zeros(n, hmm.s());

    // alpha[t] = P(z_t | y_1..t), t = 0..=len
    let mut alpha = Vec::with_capacity(len + 1);
    let mut scale = Vec::with_capacity(len);
    alpha.push(DVector::from_column_slice(hmm.prior.probs()));
    for (t, &y) in seq.iter().enumerate() {
        let mut next = a * &alpha[t];
        for i in 0..n {
            next[i] *= c[(y, i)];
        }
        let p = next.sum();
        if !(p >= PROB_FLOOR) {
            return Err(Error::ZeroProbability {
                sequence: None,
                step: t + 1,
                symbol: y,
                prob: p,
            });
        }
        next.unscale_mut(p);
        stats.log_likelihood += p.ln();
        scale.push(p);
        alpha.push(next);
    }

    // beta[t] scaled so that Σ_i alpha[t]_i beta[t]_i = 1
    let mut beta = DVector::from_element(n, 1.0);
    let mut weighted = DVector::zeros(n);
    for t in (1..=len).rev() {
        let y = seq[t - 1];
        let gamma = alpha[t].component_mul(&beta);
        for i in 0..n {
            stats.emissions[(y, i)] += gamma[i];
            weighted[i] = c[(y, i)] * beta[i] / scale[t - 1];
        }
        // xi(i, j) = weighted_i A_ij alpha[t-1]_j
        for j in 0..n {
            let aj = alpha[t - 1][j];
            for i in 0..n {
                stats.transitions[(i, j)] += weighted[i] * a[(i, j)] * aj;
            }
        }
        beta = a.tr_mul(&weighted);
    }
    stats.initial = alpha[0].component_mul(&beta);
    Ok(stats)
}

fn normalize_columns(counts: &DMatrix<f64>, smoothing: f64) -> DMatrix<f64> {
    let mut m = counts.add_scalar(smoothing);
    for mut col in m.column_iter_mut() {
        let total = col.sum();
        col /= total;
    }
    m
}

fn e_step(hmm: &Hmm, data: &[ObservationSequence]) -> Result<Expectations> {
    let per_sequence: Vec<Expectations> = data
        .par_iter()
        .enumerate()
        .map(|(i, seq)| expectations(hmm, seq.symbols()).map_err(|e| e.in_sequence(i)))
        .collect::<Result<_>>()?;
    let mut total = Expectations::zeros(hmm.n(), hmm.s());
    for stats in &per_sequence {
        total.add(stats);
    }
    Ok(total)
}

fn m_step(stats: &Expectations, smoothing: f64) -> Result<Hmm> {
    let transition = normalize_columns(&stats.transitions, smoothing);
    let emission = normalize_columns(&stats.emissions, smoothing);
    let prior_counts = DMatrix::from_column_slice(stats.initial.len(), 1, stats.initial.as_slice());
    let prior = normalize_columns(&prior_counts, smoothing);
    check_column_stochastic(&transition, "re-estimated transition matrix")
        .and_then(|_| check_column_stochastic(&emission, "re-estimated emission matrix"))
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Hmm::new(transition, emission, prior.as_slice().to_vec())
}

fn check_data(data: &[ObservationSequence], s: usize) -> Result<()> {
    if data.is_empty() || data.iter().all(|seq| seq.is_empty()) {
        return Err(Error::EmptyData);
    }
    for seq in data {
        seq.check_alphabet(s)?;
    }
    Ok(())
}

/// Run EM from a given starting point.
pub fn baum_welch_from(init: Hmm, data: &[ObservationSequence], config: &BaumWelchConfig) -> Result<BaumWelchFit> {
    check_data(data, init.s())?;
    let mut hmm = init;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    for iteration in 0..=config.max_iterations {
        let stats = e_step(&hmm, data)?;
        let ll = stats.log_likelihood;
        if !ll.is_finite() {
            return Err(Error::Numerical(format!(
                "log-likelihood became {ll} at EM iteration {iteration}"
            )));
        }
        if let Some(&prev) = history.last() {
            if (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < config.tolerance {
                converged = true;
            }
        }
        history.push(ll);
        if converged || iteration == config.max_iterations {
            break;
        }
        hmm = m_step(&stats, config.smoothing)?;
    }
    Ok(BaumWelchFit {
        hmm,
        log_likelihoods: history,
        converged,
        validation_log_likelihood: None,
    })
}

/// EM with `config.restarts` seeded random initializations; the fit with the
/// best validation (or, without validation data, training) log-likelihood
/// wins.
pub fn baum_welch_fit(
    data: &[ObservationSequence],
    n: usize,
    s: usize,
    config: &BaumWelchConfig,
    validation: Option<&[ObservationSequence]>,
) -> Result<BaumWelchFit> {
    if n == 0 || s == 0 {
        return Err(Error::Config(format!("HMM needs n, s >= 1 (n = {n}, s = {s})")));
    }
    check_data(data, s)?;
    let restarts = config.restarts.max(1);
    let fits: Vec<BaumWelchFit> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, r as u64));
            let init = Hmm::random_with(n, s, config.init_concentration, &mut rng)?;
            let mut fit = baum_welch_from(init, data, config)?;
            if let Some(val) = validation {
                fit.validation_log_likelihood = Some(fit.hmm.total_log_likelihood(val)?);
            }
            Ok(fit)
        })
        .collect::<Result<_>>()?;
    let score = |f: &BaumWelchFit| {
        f.validation_log_likelihood
            .unwrap_or_else(|| *f.log_likelihoods.last().expect("at least one iteration"))
    };
    let best = fits
        .into_iter()
        .reduce(|best, f| if score(&f) > score(&best) { f } else { best })
        .expect("at least one restart");
    Ok(best)
}
