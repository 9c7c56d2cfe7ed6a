//! Quantum belief states and channels.
//!
//! A belief over `n` latent states is a density matrix: Hermitian, positive
//! semi-definite, unit trace. Channels are given in operator-sum form by a
//! set of Kraus operators `{K_i}` with `Σ K_i^H K_i = I`; stacking them
//! vertically gives an `nN × n` matrix with orthonormal columns, i.e. a point
//! on the complex Stiefel manifold, and every such point partitions back
//! into a valid Kraus set.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, ONE, ZERO};

/// Probabilities below this are treated as exact zeros.
pub const PROB_FLOOR: f64 = 1e-300;

/// Minimum Choi eigenvalue accepted as completely positive.
pub const CP_TOLERANCE: f64 = -1e-10;

/// Acceptance thresholds for density matrices and channel constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub hermitian: f64,
    pub trace: f64,
    pub psd: f64,
}

impl Tolerances {
    /// Used when accepting matrices from outside the library.
    pub const EXTERNAL: Tolerances = Tolerances {
        hermitian: 1e-8,
        trace: 1e-8,
        psd: 1e-8,
    };
    /// Targets for objects the library constructs itself.
    pub const INTERNAL: Tolerances = Tolerances {
        hermitian: 1e-12,
        trace: 1e-12,
        psd: 1e-12,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::EXTERNAL
    }
}

/// Tolerance on `‖Σ K^H K - I‖_F` and `‖κ^H κ - I‖_F` for external inputs.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum DensityViolation {
    NotHermitian { residual: f64 },
    TraceNotOne { trace: f64 },
    NotPositive { min_eigenvalue: f64 },
}

impl fmt::Display for DensityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityViolation::NotHermitian { residual } => {
                write!(f, "not Hermitian (|m - m^H|_F = {residual:.3e})")
            }
            DensityViolation::TraceNotOne { trace } => write!(f, "trace {trace} != 1"),
            DensityViolation::NotPositive { min_eigenvalue } => {
                write!(f, "not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")
            }
        }
    }
}

/// Outcome of [`validate_density`]; lists every violated invariant with its
/// measured residual.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub dim: usize,
    pub violations: Vec<DensityViolation>,
}

impl DensityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for DensityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid {0}x{0} density matrix", self.dim);
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_density(m: &CMatrix, tol: &Tolerances) -> Result<DensityReport> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let mut violations = Vec::new();
    if !linalg::is_finite(m) {
        violations.push(DensityViolation::NotHermitian {
            residual: f64::INFINITY,
        });
        return Ok(DensityReport {
            dim: m.nrows(),
            violations,
        });
    }
    let residual = linalg::hermiticity_residual(m);
    if residual > tol.hermitian {
        violations.push(DensityViolation::NotHermitian { residual });
    }
    let trace = linalg::trace(m).re;
    if (trace - 1.0).abs() > tol.trace {
        violations.push(DensityViolation::TraceNotOne { trace });
    }
    let min_eigenvalue = linalg::min_hermitian_eigenvalue(m);
    if min_eigenvalue < -tol.psd {
        violations.push(DensityViolation::NotPositive { min_eigenvalue });
    }
    Ok(DensityReport {
        dim: m.nrows(),
        violations,
    })
}

/// Hermitian, positive semi-definite, unit-trace matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        Self::with_tolerances(matrix, &Tolerances::EXTERNAL)
    }

    pub fn with_tolerances(matrix: CMatrix, tol: &Tolerances) -> Result<Self> {
        let report = validate_density(&matrix, tol)?;
        if !report.is_valid() {
            return Err(Error::InvalidDensity(report));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            matrix: linalg::identity(n).scale(1.0 / n as f64),
        }
    }

    pub fn from_diagonal(probs: &[f64]) -> Result<Self> {
        let belief = BeliefVector::new(probs.to_vec())?;
        Ok(Self::from_belief(&belief))
    }

    pub fn from_belief(belief: &BeliefVector) -> Self {
        let n = belief.len();
        let mut matrix = CMatrix::zeros(n, n);
        for (i, p) in belief.probs().iter().enumerate() {
            matrix[(i, i)] = Complex64::new(*p, 0.0);
        }
        Self { matrix }
    }

    /// Random full-rank state `G G^H / tr(G G^H)` with `G` complex Gaussian.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let g = linalg::complex_gaussian(n, n, rng);
        let mut matrix = &g * g.adjoint();
        let tr = linalg::trace(&matrix).re;
        matrix.scale_mut(1.0 / tr);
        Self {
            matrix: linalg::hermitian_part(&matrix),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// State probabilities on the diagonal.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }
}

/// Length-`n` probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector {
    probs: Vec<f64>,
}

impl BeliefVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Dimension("belief vector must be non-empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!(
                "belief entries must be finite and non-negative: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Tolerances::EXTERNAL.trace {
            return Err(Error::Config(format!("belief sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// One square operator of an operator-sum representation.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausOperator(CMatrix);

impl KrausOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if !linalg::is_finite(&matrix) {
            return Err(Error::Numerical("Kraus operator has non-finite entries".into()));
        }
        Ok(Self(matrix))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

/// `‖Σ K^H K - I‖_F`.
pub fn trace_preservation_residual(ops: &[CMatrix]) -> f64 {
    let Some(first) = ops.first() else {
        return f64::INFINITY;
    };
    let n = first.nrows();
    let mut acc = CMatrix::zeros(n, n);
    for k in ops {
        linalg::add_adjoint_mul(&mut acc, k, k);
    }
    linalg::frobenius_norm(&(acc - linalg::identity(n)))
}

/// Ordered, trace-preserving set of `N` Kraus operators of size `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    ops: Vec<KrausOperator>,
}

impl KrausSet {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        Self::with_tolerance(ops, CONSTRAINT_TOLERANCE)
    }

    pub fn with_tolerance(ops: Vec<CMatrix>, tolerance: f64) -> Result<Self> {
        let ops = Self::checked_operators(ops)?;
        let residual = trace_preservation_residual(&ops);
        if residual > tolerance {
            return Err(Error::NotTracePreserving { residual });
        }
        Ok(Self::from_operators_unchecked(ops))
    }

    fn checked_operators(ops: Vec<CMatrix>) -> Result<Vec<CMatrix>> {
        let Some(first) = ops.first() else {
            return Err(Error::Dimension("Kraus set must be non-empty".into()));
        };
        let n = first.nrows();
        for k in &ops {
            if k.nrows() != n || k.ncols() != n {
                return Err(Error::Dimension(format!(
                    "Kraus operators must all be {n}x{n}, found {}x{}",
                    k.nrows(),
                    k.ncols()
                )));
            }
            if !linalg::is_finite(k) {
                return Err(Error::Numerical("Kraus operator has non-finite entries".into()));
            }
        }
        Ok(ops)
    }

    pub(crate) fn from_operators_unchecked(ops: Vec<CMatrix>) -> Self {
        Self {
            ops: ops.into_iter().map(KrausOperator).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn operators(&self) -> &[KrausOperator] {
        &self.ops
    }

    pub fn matrices(&self) -> impl ExactSizeIterator<Item = &CMatrix> {
        self.ops.iter().map(|k| &k.0)
    }

    pub fn into_matrices(self) -> Vec<CMatrix> {
        self.ops.into_iter().map(|k| k.0).collect()
    }

    pub fn tp_residual(&self) -> f64 {
        let ops: Vec<CMatrix> = self.matrices().cloned().collect();
        trace_preservation_residual(&ops)
    }

    /// `Σ K ρ K^H` on an arbitrary square matrix.
    pub fn map(&self, rho: &CMatrix) -> CMatrix {
        operator_sum(self.matrices(), rho)
    }

    pub fn choi_check(&self) -> ChoiCheck {
        choi_psd_check(self.dim(), |m| self.map(m))
    }
}

pub(crate) fn operator_sum<'a>(ops: impl IntoIterator<Item = &'a CMatrix>, rho: &CMatrix) -> CMatrix {
    let n = rho.nrows();
    let mut out = CMatrix::zeros(n, n);
    for k in ops {
        let k_rho = k * rho;
        linalg::add_mul_adjoint(&mut out, &k_rho, k);
    }
    out
}

/// Quantum sum rule: `Σ_w K_w ρ K_w^H`.
pub fn apply_channel(ks: &KrausSet, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if ks.dim() != rho.dim() {
        return Err(Error::Dimension(format!(
            "channel acts on dimension {}, state has dimension {}",
            ks.dim(),
            rho.dim()
        )));
    }
    let out = ks.map(rho.matrix());
    let trace = linalg::trace(&out).re;
    if (trace - 1.0).abs() > CONSTRAINT_TOLERANCE {
        return Err(Error::NotTracePreserving {
            residual: (trace - 1.0).abs(),
        });
    }
    Ok(DensityMatrix::from_matrix_unchecked(linalg::hermitian_part(&out)))
}

/// Quantum Bayes rule for the operators `{K_{y,w}}_w` of one outcome `y`.
///
/// Returns the posterior state and the probability of the outcome.
pub fn bayes_condition(k_y: &[KrausOperator], rho: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
    for k in k_y {
        if k.dim() != rho.dim() {
            return Err(Error::Dimension(format!(
                "operator is {0}x{0}, state is {1}x{1}",
                k.dim(),
                rho.dim()
            )));
        }
    }
    let numerator = operator_sum(k_y.iter().map(|k| &k.0), rho.matrix());
    let prob = linalg::trace(&numerator).re;
    if !(prob >= PROB_FLOOR) {
        return Err(Error::ImpossibleObservation { prob });
    }
    let posterior = linalg::hermitian_part(&numerator.unscale(prob));
    Ok((DensityMatrix::from_matrix_unchecked(posterior), prob))
}

/// Stacked Kraus set: `nN × n` with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    matrix: CMatrix,
    block_dim: usize,
}

impl StiefelPoint {
    pub fn new(matrix: CMatrix, block_dim: usize) -> Result<Self> {
        check_partition(matrix.nrows(), block_dim)?;
        if matrix.ncols() != block_dim {
            return Err(Error::Dimension(format!(
                "Stiefel point must have {block_dim} columns, found {}",
                matrix.ncols()
            )));
        }
        let residual = linalg::orthonormality_residual(&matrix);
        if !(residual <= CONSTRAINT_TOLERANCE) {
            return Err(Error::NotOnStiefel { residual });
        }
        Ok(Self { matrix, block_dim })
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix, block_dim: usize) -> Self {
        debug_assert_eq!(matrix.nrows() % block_dim, 0);
        Self { matrix, block_dim }
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

    /// `‖κ^H κ - I‖_F`.
    pub fn residual(&self) -> f64 {
        linalg::orthonormality_residual(&self.matrix)
    }

    pub fn block(&self, i: usize) -> CMatrix {
        let n = self.block_dim;
        self.matrix.rows(i * n, n).into_owned()
    }

    pub fn blocks(&self) -> Vec<CMatrix> {
        (0..self.block_count()).map(|i| self.block(i)).collect()
    }
}

fn check_partition(rows: usize, block_dim: usize) -> Result<()> {
    if block_dim == 0 || rows == 0 || !rows.is_multiple_of(block_dim) {
        return Err(Error::Partition { rows, block_dim });
    }
    Ok(())
}

/// Stack row blocks `[K_1; K_2; …; K_N]` into one tall matrix.
pub(crate) fn stack_blocks<'a>(blocks: impl ExactSizeIterator<Item = &'a CMatrix>, n: usize) -> CMatrix {
    let count = blocks.len();
    let mut out = CMatrix::zeros(n * count, n);
    for (i, k) in blocks.enumerate() {
        out.rows_mut(i * n, n).copy_from(k);
    }
    out
}

pub fn stack_kraus(ks: &KrausSet) -> StiefelPoint {
    let n = ks.dim();
    StiefelPoint::from_matrix_unchecked(stack_blocks(ks.matrices(), n), n)
}

pub fn unstack_kraus(sp: &StiefelPoint) -> KrausSet {
    KrausSet::from_operators_unchecked(sp.blocks())
}

/// Partition an arbitrary `nN × n` matrix into `N` square blocks.
pub fn partition_blocks(matrix: &CMatrix, block_dim: usize) -> Result<Vec<CMatrix>> {
    check_partition(matrix.nrows(), block_dim)?;
    Ok((0..matrix.nrows() / block_dim)
        .map(|i| matrix.rows(i * block_dim, block_dim).into_owned())
        .collect())
}

/// Orthonormalize a complex Gaussian `rows × cols` matrix by QR, with the
/// diagonal of `R` fixed real-positive so the factor is unique.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let g = linalg::complex_gaussian(rows, cols, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..rows {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Seeded random point with `block_count` blocks of size `n × n`.
pub fn random_stiefel(n: usize, block_count: usize, seed: u64) -> Result<StiefelPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_stiefel_with(n, block_count, &mut rng)
}

pub fn random_stiefel_with<R: Rng + ?Sized>(n: usize, block_count: usize, rng: &mut R) -> Result<StiefelPoint> {
    if n == 0 || block_count == 0 {
        return Err(Error::Config(format!(
            "Stiefel point needs n >= 1 and N >= 1 (got n = {n}, N = {block_count})"
        )));
    }
    Ok(StiefelPoint::from_matrix_unchecked(
        random_orthonormal(n * block_count, n, rng),
        n,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiCheck {
    pub is_cp: bool,
    pub min_eigenvalue: f64,
    pub eigenvalues: Vec<f64>,
}

/// Choi matrix `Σ_ij E_ij ⊗ Φ(E_ij)` of a linear map on `n × n` matrices.
pub fn choi_matrix(n: usize, map: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let mut choi = CMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let mut e = DMatrix::from_element(n, n, ZERO);
            e[(i, j)] = ONE;
            let image = map(&e);
            choi.view_mut((i * n, j * n), (n, n)).copy_from(&image);
        }
    }
    choi
}

/// Complete-positivity test through the spectrum of the Choi matrix.
pub fn choi_psd_check(n: usize, map: impl Fn(&CMatrix) -> CMatrix) -> ChoiCheck {
    let eigenvalues = linalg::hermitian_eigenvalues(&choi_matrix(n, map));
    let min_eigenvalue = eigenvalues.first().copied().unwrap_or(0.0);
    ChoiCheck {
        is_cp: min_eigenvalue >= CP_TOLERANCE,
        min_eigenvalue,
        eigenvalues,
    }
}
