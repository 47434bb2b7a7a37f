//! Dense kernels shared by the MSC solver and the per-unit baselines.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration with a fixed cyclic
//! sweep order, so results are reproducible bit for bit on a given target.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};

/// Relative cutoff below which singular values count as zero when forming
/// `U_E V_E'`.
pub const RANK_TOL: f64 = 1e-12;

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `A = U diag(d) V'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `rows x k` with orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending, length `k = min(rows, cols)`.
    pub d: Vec<f64>,
    /// `cols x k` with orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    /// Number of singular values above `RANK_TOL * d_max`.
    pub fn rank(&self) -> usize {
        let dmax = self.d.first().copied().unwrap_or(0.0);
        if dmax == 0.0 {
            return 0;
        }
        self.d.iter().take_while(|s| **s > RANK_TOL * dmax).count()
    }

    /// `U diag(d) V'`.
    pub fn reconstruct(&self) -> Matrix {
        let (rows, cols) = (self.u.rows(), self.v.rows());
        let vt = self.v.transpose();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let urow = self.u.row(i);
            let orow = out.row_mut(i);
            for (l, s) in self.d.iter().enumerate() {
                axpy(orow, urow[l] * s, vt.row(l));
            }
        }
        out
    }

    /// `U_E V_E'` restricted to singular directions with `d > RANK_TOL * d_max`.
    /// This is the zero-`Z` member of the nuclear norm's subdifferential.
    pub fn polar_factor(&self) -> Matrix {
        let (rows, cols) = (self.u.rows(), self.v.rows());
        let keep = self.rank();
        let vt = self.v.transpose();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let urow = self.u.row(i);
            let orow = out.row_mut(i);
            for l in 0..keep {
                axpy(orow, urow[l], vt.row(l));
            }
        }
        out
    }
}

/// Thin SVD of `mat`.
pub fn svd(mat: &Matrix) -> Result<SvdFactors> {
    svd_with_guess(mat, None).map(|(f, _)| f)
}

/// Singular values only, descending.
pub fn singular_values(mat: &Matrix) -> Result<Vec<f64>> {
    if !mat.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let (mut work, k, len) = work_vectors(mat);
    let mut scratch = Vec::new();
    jacobi_sweeps(&mut work, k, len, None, &mut scratch)?;
    let mut d: Vec<f64> = (0..k).map(|j| libm::sqrt(norm_sq(&work[j * len..(j + 1) * len]))).collect();
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// Sum of singular values.
pub fn nuclear_norm(mat: &Matrix) -> Result<f64> {
    Ok(singular_values(mat)?.iter().sum())
}

/// SVD with an optional orthogonal `k x k` starting rotation for the short
/// side (`V` when `rows >= cols`, otherwise `U`). Returns the factors and the
/// short-side rotation, which can seed the next call on a nearby matrix.
pub(crate) fn svd_with_guess(mat: &Matrix, guess: Option<&Matrix>) -> Result<(SvdFactors, Matrix)> {
    if !mat.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let (rows, cols) = mat.shape();
    let tall = rows >= cols;
    let (mut work, k, len) = work_vectors(mat);

    // rot holds the accumulated rotation transposed: row j is column j.
    let mut rot = match guess {
        Some(g) if g.shape() == (k, k) => {
            let rot = g.transpose();
            let mut rotated = vec![0.0; k * len];
            for j in 0..k {
                let dst = &mut rotated[j * len..(j + 1) * len];
                for (i, w) in rot.row(j).iter().enumerate() {
                    if *w != 0.0 {
                        axpy(dst, *w, &work[i * len..(i + 1) * len]);
                    }
                }
            }
            work = rotated;
            rot
        }
        _ => Matrix::identity(k),
    };
    let mut scratch = Vec::new();
    jacobi_sweeps(&mut work, k, len, Some(&mut rot), &mut scratch)?;

    let mut d: Vec<f64> = (0..k).map(|j| libm::sqrt(norm_sq(&work[j * len..(j + 1) * len]))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| d[*b].total_cmp(&d[*a]));

    // Long-side vectors: normalize, completing null directions afterwards.
    let mut long = Matrix::zeros(k, len);
    let mut missing = Vec::new();
    for (pos, &j) in order.iter().enumerate() {
        let src = &work[j * len..(j + 1) * len];
        if d[j] > 1e-290 {
            let inv = 1.0 / d[j];
            for (dst, s) in long.row_mut(pos).iter_mut().zip(src) {
                *dst = s * inv;
            }
        } else {
            missing.push(pos);
        }
    }
    if !missing.is_empty() {
        complete_orthonormal(&mut long, &missing);
    }
    let short = Matrix::from_fn(k, k, |pos, i| rot[(order[pos], i)]);
    let sorted: Vec<f64> = order.iter().map(|j| d[*j]).collect();
    d = sorted;

    // `long` rows are the long-side singular vectors, `short` rows the short side.
    let long_cols = long.transpose();
    let short_cols = short.transpose();
    let factors = if tall {
        SvdFactors { u: long_cols, d, v: short_cols.clone() }
    } else {
        SvdFactors { u: short_cols.clone(), d, v: long_cols }
    };
    Ok((factors, short_cols))
}

/// Vectors that one-sided Jacobi orthogonalizes: the columns of `mat` when it
/// is tall, otherwise its rows. Returned contiguous, `k` vectors of `len`.
fn work_vectors(mat: &Matrix) -> (Vec<f64>, usize, usize) {
    let (rows, cols) = mat.shape();
    if rows >= cols {
        (mat.transpose().into_vec(), cols, rows)
    } else {
        (mat.as_slice().to_vec(), rows, cols)
    }
}

#[inline]
fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn jacobi_sweeps(
    work: &mut [f64],
    k: usize,
    len: usize,
    mut rot: Option<&mut Matrix>,
    norms: &mut Vec<f64>,
) -> Result<()> {
    norms.clear();
    norms.extend((0..k).map(|j| norm_sq(&work[j * len..(j + 1) * len])));
    for sweep in 0..MAX_SWEEPS {
        if sweep > 0 {
            // refresh the analytically updated norms
            for j in 0..k {
                norms[j] = norm_sq(&work[j * len..(j + 1) * len]);
            }
        }
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (head, tail) = work.split_at_mut(q * len);
                let ap = &mut head[p * len..(p + 1) * len];
                let aq = &mut tail[..len];
                let gamma = dot(ap, aq);
                if gamma.abs() <= JACOBI_EPS * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(ap, aq, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
                if let Some(r) = rot.as_deref_mut() {
                    let data = r.as_mut_slice();
                    let (head, tail) = data.split_at_mut(q * k);
                    rotate(&mut head[p * k..(p + 1) * k], &mut tail[..k], c, s);
                }
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::NoConvergence { what: "one-sided Jacobi SVD", iterations: MAX_SWEEPS })
}

#[inline]
fn rotate(ap: &mut [f64], aq: &mut [f64], c: f64, s: f64) {
    for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills rows listed in `missing` with unit vectors orthogonal to all other
/// rows (modified Gram-Schmidt against the standard basis).
fn complete_orthonormal(rows: &mut Matrix, missing: &[usize]) {
    let (k, len) = rows.shape();
    let mut filled: Vec<bool> = (0..k).map(|i| !missing.contains(&i)).collect();
    for &slot in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..len {
            let mut cand = vec![0.0; len];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (r, ok) in filled.iter().enumerate() {
                    if *ok {
                        let proj = dot(&cand, rows.row(r));
                        axpy(&mut cand, -proj, rows.row(r));
                    }
                }
            }
            let nrm = libm::sqrt(norm_sq(&cand));
            if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
                best = Some((nrm, cand));
            }
            if nrm > 0.7 {
                break;
            }
        }
        if let Some((nrm, cand)) = best {
            for (dst, c) in rows.row_mut(slot).iter_mut().zip(&cand) {
                *dst = c / nrm;
            }
        }
        filled[slot] = true;
    }
}

/// Entrywise `sign(x) * max(|x| - tau, 0)`, the proximal map of `tau * sum |x_ij|`.
///
/// Panics if `tau` is negative or NaN.
pub fn soft_threshold(mat: &Matrix, tau: f64) -> Matrix {
    assert!(tau >= 0.0, "soft_threshold requires tau >= 0");
    mat.map(|x| shrink(x, tau))
}

#[inline]
pub(crate) fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Cholesky factor `L` of a symmetric positive definite matrix, `A = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::shape("cholesky", (n, n), a.shape()));
        }
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
        let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j)[..j].to_vec();
            let diag = a[(j, j)] - dot(&lj, &lj);
            if !(diag > tol) {
                return Err(Error::RankDeficient(alloc::format!(
                    "pivot {j} of {n} is {diag:.3e}; add a ridge term or use the MSC estimator"
                )));
            }
            let djj = libm::sqrt(diag);
            l[(j, j)] = djj;
            for i in j + 1..n {
                let v = (a[(i, j)] - dot(&l.row(i)[..j], &lj)) / djj;
                l[(i, j)] = v;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `A X = B` for every column of `B` at once.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::shape("cholesky solve", (n, b.cols()), b.shape()));
        }
        let mut z = b.clone();
        // forward: L z = b
        for i in 0..n {
            let (done, rest) = z.as_mut_slice().split_at_mut(i * b.cols());
            let zi = &mut rest[..b.cols()];
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik != 0.0 {
                    axpy(zi, -lik, &done[k * b.cols()..(k + 1) * b.cols()]);
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            zi.iter_mut().for_each(|v| *v *= inv);
        }
        // backward: L' x = z
        for i in (0..n).rev() {
            let (head, tail) = z.as_mut_slice().split_at_mut((i + 1) * b.cols());
            let zi = &mut head[i * b.cols()..];
            for k in i + 1..n {
                let lki = self.l[(k, i)];
                if lki != 0.0 {
                    axpy(zi, -lki, &tail[(k - i - 1) * b.cols()..(k - i) * b.cols()]);
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            zi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(z)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve(&Matrix::column(b))?.into_vec())
    }
}

/// `X'X + ridge * I`.
pub fn gram_ridge(x: &Matrix, ridge: f64) -> Matrix {
    let mut g = x.t_matmul(x).expect("x' x is always conformable");
    for i in 0..g.rows() {
        g[(i, i)] += ridge;
    }
    g
}

/// Multivariate least squares `(X'X + ridge I)^{-1} X'Y` with one Cholesky
/// factorization shared by all columns of `Y`.
pub fn ols_multi(x: &Matrix, y: &Matrix, ridge: f64) -> Result<Matrix> {
    if !(ridge >= 0.0) {
        return Err(Error::arg("ridge must be nonnegative"));
    }
    if x.rows() != y.rows() {
        return Err(Error::shape("ols_multi", (x.rows(), y.cols()), y.shape()));
    }
    let chol = Cholesky::factor(&gram_ridge(x, ridge))?;
    chol.solve(&x.t_matmul(y)?)
}

/// Euclidean projection onto the probability simplex `{w >= 0, sum w = 1}`
/// by sorting and shifting.
pub fn project_simplex(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::arg("cannot project an empty vector onto the simplex"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simplex projection input"));
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    let mut out: Vec<f64> = w.iter().map(|v| (v - shift).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    } else {
        // Only reachable through catastrophic rounding; fall back to the argmax vertex.
        let best = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
        out.iter_mut().for_each(|v| *v = 0.0);
        out[best] = 1.0;
    }
    Ok(out)
}
