//! Factorizations and the pseudoinverses built on them.
//!
//! The training path only ever needs `(A Aᵀ + λI)⁻¹` style solves, which go
//! through a Cholesky factorization. The SVD is kept for the unregularised
//! Moore-Penrose inverse.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Pivots smaller than this fraction of the largest diagonal entry are
/// treated as a failed factorization.
const PIVOT_TOLERANCE: f64 = 1e-11;

/// Relative jitter added to the diagonal on the single retry.
const JITTER: f64 = 1e-12;

fn require_square(g: &Matrix, op: &'static str) -> Result<()> {
    if g.rows() != g.cols() {
        return Err(Error::shapes(op, g.shape(), g.shape()));
    }
    Ok(())
}

fn require_symmetric(g: &Matrix, op: &'static str) -> Result<()> {
    let scale = g.max_abs().max(1.0);
    let n = g.rows();
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(alloc::format!("{op}: matrix is not symmetric")));
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor, or `None` if a pivot is too small.
fn cholesky_raw(g: &Matrix) -> Option<Matrix> {
    let n = g.rows();
    if !g.is_finite() {
        return None;
    }
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(g[(i, i)]));
    let tol = PIVOT_TOLERANCE * max_diag;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = g[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                if s <= tol || s <= 0.0 {
                    return None;
                }
                l[(i, i)] = libm::sqrt(s);
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Cholesky factor `L` with `g = L Lᵀ`. On failure the diagonal is jittered
/// by `1e-12 · trace / n` and the factorization retried once.
pub fn cholesky(g: &Matrix) -> Result<Matrix> {
    require_square(g, "cholesky")?;
    require_symmetric(g, "cholesky")?;
    if let Some(l) = cholesky_raw(g) {
        return Ok(l);
    }
    let n = g.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let mut jittered = g.clone();
    jittered.add_diagonal(JITTER * g.trace().abs() / n as f64);
    cholesky_raw(&jittered).ok_or(Error::Singular("cholesky"))
}

/// Solves `L Lᵀ X = rhs` given the factor from [`cholesky`].
pub fn cholesky_solve(l: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if rhs.rows() != n {
        return Err(Error::shapes("cholesky_solve", l.shape(), rhs.shape()));
    }
    let m = rhs.cols();
    let mut x = rhs.clone();
    // Forward substitution, L Y = rhs. Row operations keep access contiguous.
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik != 0.0 {
                let (head, tail) = x.data_mut().split_at_mut(i * m);
                let src = &head[k * m..(k + 1) * m];
                for (d, s) in tail[..m].iter_mut().zip(src) {
                    *d -= lik * s;
                }
            }
        }
        let inv = 1.0 / l[(i, i)];
        for v in x.row_mut(i) {
            *v *= inv;
        }
    }
    // Back substitution, Lᵀ X = Y.
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[(k, i)];
            if lki != 0.0 {
                let (head, tail) = x.data_mut().split_at_mut(k * m);
                let src = &tail[..m];
                for (d, s) in head[i * m..(i + 1) * m].iter_mut().zip(src) {
                    *d -= lki * s;
                }
            }
        }
        let inv = 1.0 / l[(i, i)];
        for v in x.row_mut(i) {
            *v *= inv;
        }
    }
    Ok(x)
}

/// Solves `g X = rhs` for symmetric positive definite `g`.
pub fn spd_solve(g: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if g.rows() != rhs.rows() {
        return Err(Error::shapes("spd_solve", g.shape(), rhs.shape()));
    }
    let l = cholesky(g)?;
    cholesky_solve(&l, rhs)
}

/// Inverse of a symmetric positive definite matrix, symmetrised.
pub fn spd_inverse(g: &Matrix) -> Result<Matrix> {
    let inv = spd_solve(g, &Matrix::identity(g.rows()))?;
    Ok(symmetrize(&inv))
}

pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    let n = m.rows();
    Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `A A ᵀ + λ I`.
pub fn regularized_gram(a: &Matrix, lambda: f64) -> Matrix {
    let mut g = a.gram();
    g.add_diagonal(lambda);
    g
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(alloc::format!(
            "regularisation must be a finite non-negative number, got {lambda}"
        )));
    }
    Ok(())
}

/// Which of the two algebraically equivalent formulas to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinvBranch {
    /// `Aᵀ (A Aᵀ + λI)⁻¹`, inverse of side `rows`.
    Wide,
    /// `(AᵀA + λI)⁻¹ Aᵀ`, inverse of side `cols`.
    Tall,
}

impl PinvBranch {
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        if rows < cols {
            PinvBranch::Wide
        } else {
            PinvBranch::Tall
        }
    }
}

/// Regularised pseudoinverse `A† = Aᵀ(AAᵀ + λI)⁻¹`, evaluated with the
/// branch whose inverse is smaller.
pub fn reg_pseudoinverse(a: &Matrix, lambda: f64) -> Result<Matrix> {
    reg_pseudoinverse_with(a, lambda, PinvBranch::for_shape(a.rows(), a.cols()))
}

/// [`reg_pseudoinverse`] with an explicit branch choice.
pub fn reg_pseudoinverse_with(a: &Matrix, lambda: f64, branch: PinvBranch) -> Result<Matrix> {
    check_lambda(lambda)?;
    match branch {
        PinvBranch::Wide => {
            let g = regularized_gram(a, lambda);
            // G symmetric, so Aᵀ G⁻¹ = (G⁻¹ A)ᵀ.
            Ok(spd_solve(&g, a).map_err(|_| Error::Singular("reg_pseudoinverse"))?.transpose())
        }
        PinvBranch::Tall => {
            let at = a.transpose();
            let g = regularized_gram(&at, lambda);
            spd_solve(&g, &at).map_err(|_| Error::Singular("reg_pseudoinverse"))
        }
    }
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// One-sided Jacobi SVD. Accurate for the small matrices this crate feeds it.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    // Column-major working copies.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= f64::EPSILON * libm::sqrt(alpha * beta) || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s = vec![0.0; n];
    let mut u = Matrix::zeros(m, n);
    for j in 0..n {
        let norm = libm::sqrt(dot(&cols[j], &cols[j]));
        s[j] = norm;
        if norm > 0.0 {
            for i in 0..m {
                u[(i, j)] = cols[j][i] / norm;
            }
        }
    }
    let vm = Matrix::from_fn(n, n, |i, j| v[j][i]);
    Svd { u, s, v: vm }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Moore-Penrose pseudoinverse. Singular values below
/// `max(rows, cols) · ε · σ_max` are treated as zero.
pub fn moore_penrose_pinv(a: &Matrix) -> Matrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Matrix::zeros(n, m);
    }
    let Svd { u, s, v } = svd(a);
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = (m.max(n) as f64) * f64::EPSILON * smax;
    let k = s.len();
    // pinv = V diag(1/s) Uᵀ
    let mut vs = v.clone();
    for j in 0..k {
        let inv = if s[j] > cutoff { 1.0 / s[j] } else { 0.0 };
        for i in 0..vs.rows() {
            vs[(i, j)] *= inv;
        }
    }
    vs.matmul_nt(&u).expect("svd factors are conformable")
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(g: &Matrix) -> Result<Vec<f64>> {
    require_square(g, "symmetric_eigenvalues")?;
    require_symmetric(g, "symmetric_eigenvalues")?;
    let n = g.rows();
    let mut a = symmetrize(g);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off <= 1e-30 * a.frobenius_norm().powi(2).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    Ok(ev)
}

/// Numerical rank from the singular values with the pinv cutoff.
pub fn rank(a: &Matrix) -> usize {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return 0;
    }
    let s = svd(a).s;
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = (m.max(n) as f64) * f64::EPSILON * smax * 16.0;
    s.iter().filter(|&&x| x > cutoff).count()
}
