//! Small complex dense-matrix helpers shared by the quantum, model and
//! optimizer modules.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `Re tr(a^H b)`, the real Frobenius inner product.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn trace(m: &CMatrix) -> Complex64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// `‖m - m^H‖_F`.
pub fn hermiticity_residual(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (m[(i, j)] - m[(j, i)].conj()).norm_sqr();
        }
    }
    acc.sqrt()
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigenvalues of the Hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut values: Vec<f64> = hermitian_part(m).symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

pub fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// `‖x^H x - I‖_F`.
pub fn orthonormality_residual(x: &CMatrix) -> f64 {
    let gram = x.adjoint() * x;
    frobenius_norm(&(gram - identity(x.ncols())))
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Matrix with i.i.d. standard complex Gaussian entries (unit variance per
/// real component).
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Accumulates `out += a * b^H` without forming the adjoint.
pub fn add_mul_adjoint(out: &mut CMatrix, a: &CMatrix, b: &CMatrix) {
    let (rows, inner) = a.shape();
    let cols = b.nrows();
    for j in 0..cols {
        for k in 0..inner {
            let bjk = b[(j, k)].conj();
            if bjk == ZERO {
                continue;
            }
            for i in 0..rows {
                out[(i, j)] += a[(i, k)] * bjk;
            }
        }
    }
}

/// Accumulates `out += a^H * b` without forming the adjoint.
pub fn add_adjoint_mul(out: &mut CMatrix, a: &CMatrix, b: &CMatrix) {
    let (inner, rows) = a.shape();
    let cols = b.ncols();
    for j in 0..cols {
        for i in 0..rows {
            let mut acc = ZERO;
            for k in 0..inner {
                acc += a[(k, i)].conj() * b[(k, j)];
            }
            out[(i, j)] += acc;
        }
    }
}
