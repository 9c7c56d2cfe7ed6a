//! Hidden quantum Markov models.
//!
//! An `(n, s, w)`-HQMM holds `s·w` Kraus operators `K_{y,w}` of size `n × n`,
//! flattened `y`-major, and a fixed initial state `ρ_0`. Observing `y` maps
//! `ρ ↦ Σ_w K_{y,w} ρ K_{y,w}^H / p(y)`, where `p(y)` is the trace of the
//! numerator.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::Hmm;
use crate::linalg::{self, CMatrix, ZERO};
use crate::quantum::{self, DensityMatrix, KrausSet, StiefelPoint, CONSTRAINT_TOLERANCE, PROB_FLOOR};

/// Ordered list of symbols drawn from `[0, s)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationSequence {
    symbols: Vec<usize>,
}

impl ObservationSequence {
    pub fn new(symbols: Vec<usize>) -> Self {
        Self { symbols }
    }

    pub fn with_alphabet(symbols: Vec<usize>, alphabet: usize) -> Result<Self> {
        let seq = Self::new(symbols);
        seq.check_alphabet(alphabet)?;
        Ok(seq)
    }

    pub fn check_alphabet(&self, alphabet: usize) -> Result<()> {
        match self.symbols.iter().find(|&&y| y >= alphabet) {
            Some(&symbol) => Err(Error::SymbolOutOfRange { symbol, alphabet }),
            None => Ok(()),
        }
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn into_symbols(self) -> Vec<usize> {
        self.symbols
    }
}

impl From<Vec<usize>> for ObservationSequence {
    fn from(symbols: Vec<usize>) -> Self {
        Self::new(symbols)
    }
}

pub(crate) fn check_burn_in(seq: &ObservationSequence, burn_in: usize) -> Result<()> {
    if burn_in >= seq.len() {
        return Err(Error::Config(format!(
            "burn-in {burn_in} leaves no scored symbols in a sequence of length {}",
            seq.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hqmm {
    n: usize,
    s: usize,
    w: usize,
    kraus: Vec<CMatrix>,
    rho0: DensityMatrix,
}

impl Hqmm {
    /// `kraus` is the flattened `(y, w)` grid, `y`-major.
    pub fn new(n: usize, s: usize, w: usize, kraus: Vec<CMatrix>, rho0: DensityMatrix) -> Result<Self> {
        if n == 0 || s == 0 || w == 0 {
            return Err(Error::Config(format!(
                "HQMM dimensions must be positive (n = {n}, s = {s}, w = {w})"
            )));
        }
        if kraus.len() != s * w {
            return Err(Error::Dimension(format!(
                "expected s*w = {} Kraus operators, found {}",
                s * w,
                kraus.len()
            )));
        }
        if rho0.dim() != n {
            return Err(Error::Dimension(format!(
                "initial state is {0}x{0}, model has n = {n}",
                rho0.dim()
            )));
        }
        let set = KrausSet::new(kraus)?;
        if set.dim() != n {
            return Err(Error::Dimension(format!(
                "Kraus operators are {0}x{0}, model has n = {n}",
                set.dim()
            )));
        }
        Ok(Self {
            n,
            s,
            w,
            kraus: set.into_matrices(),
            rho0,
        })
    }

    pub fn from_stiefel(point: &StiefelPoint, s: usize, w: usize, rho0: DensityMatrix) -> Result<Self> {
        if point.block_count() != s * w {
            return Err(Error::Dimension(format!(
                "Stiefel point has {} blocks, (s, w) = ({s}, {w}) needs {}",
                point.block_count(),
                s * w
            )));
        }
        let residual = point.residual();
        if residual > CONSTRAINT_TOLERANCE {
            return Err(Error::NotOnStiefel { residual });
        }
        Self::new(point.block_dim(), s, w, point.blocks(), rho0)
    }

    /// Assemble without re-checking trace preservation; the optimizer calls
    /// this on every iterate.
    pub(crate) fn from_parts_unchecked(n: usize, s: usize, w: usize, kraus: Vec<CMatrix>, rho0: DensityMatrix) -> Self {
        debug_assert_eq!(kraus.len(), s * w);
        Self { n, s, w, kraus, rho0 }
    }

    /// Seeded random model: Kraus grid from a random Stiefel point and a
    /// random full-rank initial state.
    pub fn random(n: usize, s: usize, w: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(n, s, w, &mut rng)
    }

    pub fn random_with<R: Rng + ?Sized>(n: usize, s: usize, w: usize, rng: &mut R) -> Result<Self> {
        if s == 0 || w == 0 {
            return Err(Error::Config(format!("s and w must be positive (s = {s}, w = {w})")));
        }
        let point = quantum::random_stiefel_with(n, s * w, rng)?;
        let rho0 = DensityMatrix::random(n, rng);
        Ok(Self::from_parts_unchecked(n, s, w, point.blocks(), rho0))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// `n²·s·w` complex parameters.
    pub fn parameter_count(&self) -> usize {
        self.n * self.n * self.s * self.w
    }

    pub fn kraus(&self, y: usize, w: usize) -> &CMatrix {
        &self.kraus[y * self.w + w]
    }

    /// The `w` operators of symbol `y`.
    pub fn kraus_for(&self, y: usize) -> &[CMatrix] {
        &self.kraus[y * self.w..(y + 1) * self.w]
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn rho0(&self) -> &DensityMatrix {
        &self.rho0
    }

    pub fn kraus_set(&self) -> KrausSet {
        KrausSet::from_operators_unchecked(self.kraus.clone())
    }

    pub fn to_stiefel(&self) -> StiefelPoint {
        StiefelPoint::from_matrix_unchecked(quantum::stack_blocks(self.kraus.iter(), self.n), self.n)
    }

    pub fn with_rho0(&self, rho0: DensityMatrix) -> Result<Self> {
        if rho0.dim() != self.n {
            return Err(Error::Dimension(format!("initial state must be {0}x{0}", self.n)));
        }
        Ok(Self { rho0, ..self.clone() })
    }

    fn check_symbol(&self, y: usize) -> Result<()> {
        if y >= self.s {
            return Err(Error::SymbolOutOfRange {
                symbol: y,
                alphabet: self.s,
            });
        }
        Ok(())
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.dim() != self.n {
            return Err(Error::Dimension(format!(
                "state is {0}x{0}, model has n = {1}",
                rho.dim(),
                self.n
            )));
        }
        Ok(())
    }

    /// Condition `rho` on symbol `y`; returns the posterior and `ln p(y)`.
    pub fn filter_step(&self, rho: &DensityMatrix, y: usize) -> Result<(DensityMatrix, f64)> {
        self.check_symbol(y)?;
        self.check_state(rho)?;
        let mut next = CMatrix::zeros(self.n, self.n);
        let mut scratch = CMatrix::zeros(self.n, self.n);
        let p = joint_update(self.kraus_for(y), rho.matrix(), &mut next, &mut scratch);
        if !(p >= PROB_FLOOR) {
            return Err(Error::ZeroProbability {
                sequence: None,
                step: 1,
                symbol: y,
                prob: p,
            });
        }
        next.unscale_mut(p);
        Ok((DensityMatrix::from_matrix_unchecked(next), p.ln()))
    }

    /// `p(y | ρ)` for every symbol.
    pub fn symbol_probabilities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        self.check_state(rho)?;
        Ok(symbol_probabilities(&self.kraus, self.w, rho.matrix()))
    }

    /// `ln P(y_{b+1..ℓ} | y_{1..b})`: the first `burn_in` symbols condition the
    /// state without contributing to the total.
    pub fn log_likelihood(&self, seq: &ObservationSequence, burn_in: usize) -> Result<f64> {
        seq.check_alphabet(self.s)?;
        check_burn_in(seq, burn_in)?;
        sequence_log_likelihood(&self.kraus, self.w, self.rho0.matrix(), seq.symbols(), burn_in)
    }

    /// Filtered state after consuming all of `seq`.
    pub fn filter(&self, seq: &ObservationSequence) -> Result<DensityMatrix> {
        seq.check_alphabet(self.s)?;
        let mut rho = self.rho0.matrix().clone();
        let mut next = CMatrix::zeros(self.n, self.n);
        let mut scratch = CMatrix::zeros(self.n, self.n);
        for (t, &y) in seq.symbols().iter().enumerate() {
            let p = joint_update(self.kraus_for(y), &rho, &mut next, &mut scratch);
            if !(p >= PROB_FLOOR) {
                return Err(Error::ZeroProbability {
                    sequence: None,
                    step: t + 1,
                    symbol: y,
                    prob: p,
                });
            }
            next.unscale_mut(p);
            std::mem::swap(&mut rho, &mut next);
        }
        Ok(DensityMatrix::from_matrix_unchecked(rho))
    }

    /// Draw a sequence by alternating outcome sampling and conditioning.
    pub fn sample(&self, length: usize, seed: u64) -> Result<ObservationSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(length, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<ObservationSequence> {
        if length == 0 {
            return Err(Error::Config("sample length must be at least 1".into()));
        }
        let mut rho = self.rho0.matrix().clone();
        let mut next = CMatrix::zeros(self.n, self.n);
        let mut scratch = CMatrix::zeros(self.n, self.n);
        let mut symbols = Vec::with_capacity(length);
        for _ in 0..length {
            let probs = symbol_probabilities(&self.kraus, self.w, &rho);
            let y = draw_index(&probs, rng);
            let p = joint_update(self.kraus_for(y), &rho, &mut next, &mut scratch);
            next.unscale_mut(p);
            std::mem::swap(&mut rho, &mut next);
            symbols.push(y);
        }
        Ok(ObservationSequence::new(symbols))
    }
}

/// Inverse-CDF draw from a (possibly slightly unnormalized) probability
/// vector.
pub(crate) fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        u -= p.max(0.0);
        if u < 0.0 {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Writes `Σ_w K_w ρ K_w^H` into `out` and returns its trace.
pub(crate) fn joint_update(ops: &[CMatrix], rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix) -> f64 {
    out.fill(ZERO);
    for k in ops {
        scratch.gemm(Complex64::new(1.0, 0.0), k, rho, ZERO);
        linalg::add_mul_adjoint(out, scratch, k);
    }
    linalg::trace(out).re
}

pub(crate) fn symbol_probabilities(ops: &[CMatrix], w: usize, rho: &CMatrix) -> Vec<f64> {
    let n = rho.nrows();
    let mut out = CMatrix::zeros(n, n);
    let mut scratch = CMatrix::zeros(n, n);
    ops.chunks(w)
        .map(|group| joint_update(group, rho, &mut out, &mut scratch))
        .collect()
}

/// Stepwise-normalized log-likelihood on a raw (not necessarily
/// trace-preserving) operator grid.
pub(crate) fn sequence_log_likelihood(
    ops: &[CMatrix],
    w: usize,
    rho0: &CMatrix,
    symbols: &[usize],
    burn_in: usize,
) -> Result<f64> {
    let n = rho0.nrows();
    let mut rho = rho0.clone();
    let mut next = CMatrix::zeros(n, n);
    let mut scratch = CMatrix::zeros(n, n);
    let mut total = 0.0;
    for (t, &y) in symbols.iter().enumerate() {
        let p = joint_update(&ops[y * w..(y + 1) * w], &rho, &mut next, &mut scratch);
        if !(p >= PROB_FLOOR) {
            return Err(Error::ZeroProbability {
                sequence: None,
                step: t + 1,
                symbol: y,
                prob: p,
            });
        }
        if t >= burn_in {
            total += p.ln();
        }
        next.unscale_mut(p);
        std::mem::swap(&mut rho, &mut next);
    }
    Ok(total)
}

/// Embed an HMM as an `(n, s, n)`-HQMM whose filtered state has the
/// classical belief on its diagonal at every step.
///
/// With `T_y = diag(C_{y,:}) A`, operator `K_{y,j}` has the single nonzero
/// column `j` equal to `sqrt(T_y[:, j])`. Then `Σ_{y,j} K^H K = diag(column
/// sums of Σ_y T_y) = I`, and because each operator reads only `ρ_jj`, the
/// diagonal evolves exactly as `T_y x / 1ᵀ T_y x`.
pub fn encode_hmm(hmm: &Hmm) -> Hqmm {
    let n = hmm.n();
    let s = hmm.s();
    let mut kraus = Vec::with_capacity(s * n);
    for t in hmm.oom_operators() {
        for j in 0..n {
            let mut k = CMatrix::zeros(n, n);
            for i in 0..n {
                k[(i, j)] = Complex64::new(t[(i, j)].sqrt(), 0.0);
            }
            kraus.push(k);
        }
    }
    let rho0 = DensityMatrix::from_belief(hmm.prior());
    Hqmm::from_parts_unchecked(n, s, n, kraus, rho0)
}
