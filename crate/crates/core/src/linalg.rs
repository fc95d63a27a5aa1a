//! Small dense linear-algebra helpers: Kronecker-vectorized Sylvester and
//! Lyapunov solves, the matrix exponential, norms and rank tests.
//!
//! Everything here works on `DMatrix<f64>` of modest size (tens of rows at
//! most); the vectorized solves are O(n^6) and are not meant for large
//! systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{dim, Error, Result};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Solves `X·A − B·X = C` for `X` through the vectorized system
/// `(Aᵀ ⊗ I − I ⊗ B) vec(X) = vec(C)`.
pub fn solve_sylvester_general(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (m, n) = c.shape();
    if !a.is_square() || !b.is_square() || a.nrows() != n || b.nrows() != m {
        return Err(dim(format!(
            "sylvester: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(m, n));
    }
    let lhs = kron(&a.transpose(), &DMatrix::identity(m, m)) - kron(&DMatrix::identity(n, n), b);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| Error::Synthesis {
        matrix: "Sylvester operator".into(),
        reason: "singular (spectra not disjoint)".into(),
    })?;
    Ok(DMatrix::from_column_slice(m, n, sol.as_slice()))
}

/// Solves the continuous Lyapunov equation `P·A + Aᵀ·P = Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_sylvester_general(a, &(-a.transpose()), q)?;
    // symmetrize round-off
    Ok((&p + p.transpose()) * 0.5)
}

/// Induced 1-norm (max absolute column sum).
pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// Spectral norm (largest singular value). Zero for empty matrices.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest singular value of a square matrix.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical rank using a relative singular-value threshold.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * smax.max(1.0)).count()
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.is_empty() {
        return Vec::new();
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect()
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    eigenvalues(a).iter().all(|z| z.re < 0.0)
}

/// `[B, AB, …, A^{n-1}B]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// `[C; CA; …; CA^{n-1}]`
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eig(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::NEG_INFINITY;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-6 diagonal Padé
/// approximant. The argument is scaled until its 1-norm is at most 1/2.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert!(a.is_square(), "expm of non-square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let nrm = norm1(a);
    let squarings = if nrm > 0.5 {
        (nrm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = a / 2f64.powi(squarings);

    const Q: usize = 6;
    let id = DMatrix::<f64>::identity(n, n);
    let mut c = 0.5;
    let mut num = &id + &x * c;
    let mut den = &id - &x * c;
    let mut xk = x.clone();
    let mut positive = true;
    for k in 2..=Q {
        c *= (Q - k + 1) as f64 / (k * (2 * Q - k + 1)) as f64;
        xk = &x * &xk;
        let term = &xk * c;
        num += &term;
        if positive {
            den += &term;
        } else {
            den -= &term;
        }
        positive = !positive;
    }
    let mut e = den.lu().solve(&num).expect("Padé denominator is nonsingular for ‖X‖ ≤ 1/2");
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}

/// Monic real polynomial with the given roots; coefficients ascending,
/// last entry 1. Complex roots must come in conjugate pairs.
pub fn poly_from_roots(roots: &[Complex64]) -> Result<Vec<f64>> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::InvalidInput(
            "complex poles must appear in conjugate pairs".into(),
        ));
    }
    Ok(coeffs.iter().map(|c| c.re).collect())
}

/// Companion matrix with ones on the superdiagonal and last row equal to
/// `last_row`.
pub fn companion(last_row: &[f64]) -> DMatrix<f64> {
    let r = last_row.len();
    let mut m = DMatrix::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for (j, &a) in last_row.iter().enumerate() {
        m[(r - 1, j)] = a;
    }
    m
}

/// Row-major nested vectors, the layout used by every JSON document.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// Inverse of [`to_rows`]; `cols` is needed when there are no rows.
pub fn from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Schema(format!(
            "{what}: every row must have {cols} entries"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
