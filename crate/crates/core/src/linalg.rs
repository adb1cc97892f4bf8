//! Small dense complex matrix helpers used by the estimators.
//!
//! Matrices here are I x I with I the number of microphones, usually 2, so
//! the Hermitian inverse has a closed-form 2 x 2 path.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const C0: Complex64 = Complex64::new(0.0, 0.0);
pub const C1: Complex64 = Complex64::new(1.0, 0.0);

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// `m + eps * tr(m) / I * Id`, the loading applied before every inversion
/// of a mixture covariance.
pub fn ridge(m: &CMatrix, eps: f64) -> CMatrix {
    let n = m.nrows();
    let load = eps * trace_re(m) / n as f64;
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] += load;
    }
    out
}

/// `(m + m^H) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

/// Inverse and log-determinant of a Hermitian positive definite matrix, or
/// `None` when the matrix is not numerically positive definite.
pub fn hermitian_inverse(m: &CMatrix) -> Option<(CMatrix, f64)> {
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)];
        let det = a * d - b.norm_sqr();
        if !(a > 0.0 && det > 0.0 && det.is_finite()) {
            return None;
        }
        let s = 1.0 / det;
        let inv = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(d * s, 0.0),
                -b * s,
                -b.conj() * s,
                Complex64::new(a * s, 0.0),
            ],
        );
        return Some((inv, det.ln()));
    }
    let chol = hermitize(m).cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
    if !logdet.is_finite() {
        return None;
    }
    Some((chol.inverse(), logdet))
}

/// Inverse and log-determinant of a mixture covariance. The matrix is
/// inverted as is while `det / (tr / I)^I > eps`; below that it is first
/// loaded with [`ridge`]. Keeping well-conditioned matrices unloaded makes
/// Wiener gains sum exactly to the identity.
pub fn mixture_inverse(m: &CMatrix, eps: f64) -> Option<(CMatrix, f64)> {
    let n = m.nrows() as f64;
    let mean_eig = trace_re(m) / n;
    if mean_eig > 0.0 {
        if let Some((inv, logdet)) = hermitian_inverse(m) {
            if logdet - n * mean_eig.ln() > eps.ln() {
                return Some((inv, logdet));
            }
        }
    }
    hermitian_inverse(&ridge(m, eps))
}

/// Real eigenvalues in ascending order with matching unit eigenvectors as
/// columns.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Rebuilds `V diag(max(lambda, 0)) V^H` after symmetrisation. Returns the
/// input unchanged (but symmetrised) when it is already semidefinite.
pub fn clip_psd(m: &CMatrix) -> CMatrix {
    let h = hermitize(m);
    let (values, vectors) = hermitian_eigen(&h);
    if values[0] >= 0.0 {
        return h;
    }
    from_eigen(&values.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(), &vectors)
}

/// Raises every eigenvalue to at least `floor`.
pub fn floor_eigenvalues(m: &CMatrix, floor: f64) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    if values[0] >= floor {
        return hermitize(m);
    }
    from_eigen(&values.iter().map(|v| v.max(floor)).collect::<Vec<_>>(), &vectors)
}

fn from_eigen(values: &[f64], vectors: &CMatrix) -> CMatrix {
    let n = values.len();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let v = vectors.column(k);
        out += (v * v.adjoint()).scale(lambda);
    }
    hermitize(&out)
}

/// Moore-Penrose pseudo-inverse of a Hermitian PSD matrix and its numerical
/// rank; eigenvalues below `rel_tol * lambda_max` are treated as zero.
pub fn psd_pseudo_inverse(m: &CMatrix, rel_tol: f64) -> (CMatrix, usize) {
    let (values, vectors) = hermitian_eigen(m);
    let top = values.last().copied().unwrap_or(0.0);
    let n = values.len();
    let mut out = CMatrix::zeros(n, n);
    let mut rank = 0;
    if top <= 0.0 {
        return (out, 0);
    }
    for (k, &lambda) in values.iter().enumerate() {
        if lambda > rel_tol * top {
            let v = vectors.column(k);
            out += (v * v.adjoint()).scale(1.0 / lambda);
            rank += 1;
        }
    }
    (out, rank)
}

/// `trace(a * b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut s = C0;
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// `x^H m x`.
pub fn quad_form(m: &CMatrix, x: &[Complex64]) -> Complex64 {
    let n = x.len();
    let mut s = C0;
    for i in 0..n {
        let mut row = C0;
        for k in 0..n {
            row += m[(i, k)] * x[k];
        }
        s += x[i].conj() * row;
    }
    s
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn from_slice(x: &[Complex64]) -> CVector {
    CVector::from_column_slice(x)
}
