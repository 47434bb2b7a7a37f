//! Per-treated-unit comparison estimators.
//!
//! Each treated column is fit on its own against the shared donor matrix:
//! SCUL is an unconstrained lasso, ROLS a ridge fit restricted to weights
//! summing to one, and PSC a simplex-constrained fit whose penalty pulls
//! weight toward donors whose pre-treatment path is close to the unit's own.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matops::{gram_ridge, project_simplex, shrink, Cholesky};
use crate::matrix::{axpy, dot, Matrix};
use crate::panel::DesignSplit;
use crate::solver::{FitReport, StopReason};

/// Weight estimators known to the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Msc,
    Psc,
    Scul,
    Rols,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Msc, Method::Psc, Method::Scul, Method::Rols];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Msc => "msc",
            Method::Psc => "psc",
            Method::Scul => "scul",
            Method::Rols => "rols",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msc" => Ok(Method::Msc),
            "psc" => Ok(Method::Psc),
            "scul" => Ok(Method::Scul),
            "rols" => Ok(Method::Rols),
            other => Err(Error::Argument(alloc::format!("unknown method {other:?}"))),
        }
    }
}

/// Iteration limits for the per-unit iterative solvers.
///
/// For SCUL `max_iter` counts coordinate passes (full and active-set) and
/// `tol` bounds `max_k ||x_k||^2 dw_k^2 / ||y||^2`, the same relative rule
/// glmnet uses. Lasso problems on strongly collinear donors need a much
/// smaller `tol` before KKT residuals drop to 1e-6.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterLimits {
    pub max_iter: usize,
    pub tol: f64,
}

impl IterLimits {
    pub const SCUL: IterLimits = IterLimits { max_iter: 100_000, tol: 1e-7 };
    pub const PSC: IterLimits = IterLimits { max_iter: 2_000, tol: 1e-10 };
    pub const SCUL_TIGHT: IterLimits = IterLimits { max_iter: 1_000_000, tol: 1e-24 };
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BaselineConfig {
    pub method: Method,
    /// Penalty for PSC and SCUL.
    pub lambda: f64,
    /// Ridge term for ROLS.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// ROLS only: factor `X'X + ridge I` once for all units instead of once
    /// per unit.
    pub rols_shared_factorization: bool,
}

impl BaselineConfig {
    pub fn new(method: Method, lambda: f64) -> Self {
        let limits = match method {
            Method::Psc => IterLimits::PSC,
            _ => IterLimits::SCUL,
        };
        BaselineConfig {
            method,
            lambda,
            ridge: 1.0,
            max_iter: limits.max_iter,
            tol: limits.tol,
            rols_shared_factorization: false,
        }
    }

    pub fn limits(&self) -> IterLimits {
        IterLimits { max_iter: self.max_iter, tol: self.tol }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg("lambda must be a finite nonnegative number"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::arg("ridge must be a finite nonnegative number"));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::arg("max_iter must be positive and tol > 0"));
        }
        Ok(())
    }
}

/// Weights of a per-unit fit plus the units whose solver hit its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct PerUnitFit {
    pub theta: Matrix,
    /// Treated column indices that stopped at `max_iter`.
    pub unconverged: Vec<usize>,
    /// Largest iteration count over units.
    pub max_iterations: usize,
}

impl PerUnitFit {
    fn closed_form(theta: Matrix) -> Self {
        PerUnitFit { theta, unconverged: Vec::new(), max_iterations: 1 }
    }
}

/// SCUL with default iteration limits.
pub fn fit_scul(split: &DesignSplit, lambda: f64) -> Result<PerUnitFit> {
    fit_scul_with(split, lambda, IterLimits::SCUL)
}

/// Per-unit lasso `min_w (1/(2 T0)) ||y_j - X w||^2 + lambda ||w||_1`, by
/// cyclic coordinate descent with covariance updates. After each full pass
/// the nonzero coordinates are iterated alone until they settle. Donor
/// inner products are computed the first time a donor becomes nonzero and
/// are shared across treated units.
pub fn fit_scul_with(split: &DesignSplit, lambda: f64, limits: IterLimits) -> Result<PerUnitFit> {
    if !(lambda >= 0.0) {
        return Err(Error::arg("lambda must be nonnegative"));
    }
    let x = &split.x_pre;
    let (t0, n, m) = (split.t0(), split.n(), split.m());
    let inv_t0 = 1.0 / t0 as f64;
    let xt = x.transpose();
    let mut theta = Matrix::zeros(n, m);
    let mut unconverged = Vec::new();
    let mut max_iterations = 0;
    let col_sq: Vec<f64> = (0..n).map(|k| dot(xt.row(k), xt.row(k)) * inv_t0).collect();
    let mut gram: Vec<Option<Vec<f64>>> = vec![None; n];

    for j in 0..m {
        let y = split.y_pre.col(j);
        // changes are measured in fitted-value scale relative to ||y||^2 / T0
        let scale = (dot(&y, &y) * inv_t0).max(f64::MIN_POSITIVE);
        let mut grad: Vec<f64> = (0..n).map(|k| dot(xt.row(k), &y) * inv_t0).collect();
        let mut w = vec![0.0; n];
        let mut active: Vec<usize> = Vec::new();
        let mut converged = false;
        let mut sweeps = 0;
        'outer: while sweeps < limits.max_iter {
            sweeps += 1;
            let all: Vec<usize> = (0..n).collect();
            let change = cd_sweep(&all, &mut w, &mut grad, &col_sq, &mut gram, x, inv_t0, lambda);
            if change < limits.tol * scale {
                converged = true;
                break;
            }
            active.clear();
            active.extend((0..n).filter(|&k| w[k] != 0.0));
            loop {
                if sweeps >= limits.max_iter {
                    break 'outer;
                }
                sweeps += 1;
                let change =
                    cd_sweep(&active, &mut w, &mut grad, &col_sq, &mut gram, x, inv_t0, lambda);
                if change < limits.tol * scale {
                    break;
                }
            }
        }
        if !converged {
            unconverged.push(j);
        }
        max_iterations = max_iterations.max(sweeps);
        theta.set_col(j, &w);
    }
    Ok(PerUnitFit { theta, unconverged, max_iterations })
}

/// One cyclic pass over `coords`; returns the largest `col_sq * delta^2`.
#[allow(clippy::too_many_arguments)]
fn cd_sweep(
    coords: &[usize],
    w: &mut [f64],
    grad: &mut [f64],
    col_sq: &[f64],
    gram: &mut [Option<Vec<f64>>],
    x: &Matrix,
    inv_t0: f64,
    lambda: f64,
) -> f64 {
    let n = w.len();
    let mut max_change = 0.0f64;
    for &k in coords {
        if col_sq[k] == 0.0 {
            continue;
        }
        let old = w[k];
        let new = shrink(grad[k] + col_sq[k] * old, lambda) / col_sq[k];
        if new == old {
            continue;
        }
        let delta = new - old;
        let column = gram[k].get_or_insert_with(|| {
            let mut c = vec![0.0; n];
            for t in 0..x.rows() {
                axpy(&mut c, x[(t, k)] * inv_t0, x.row(t));
            }
            c
        });
        axpy(grad, -delta, column);
        w[k] = new;
        max_change = max_change.max(col_sq[k] * delta * delta);
    }
    max_change
}

/// Sum-to-one ridge weights `w = A^{-1}(X'y - mu 1)` with
/// `A = X'X + ridge I` and `mu = (1'A^{-1}X'y - 1) / (1'A^{-1}1)`, sharing
/// one factorization of `A` across all treated units.
pub fn fit_rols(split: &DesignSplit, ridge: f64) -> Result<PerUnitFit> {
    check_ridge(ridge)?;
    let chol = Cholesky::factor(&gram_ridge(&split.x_pre, ridge))?;
    let a_inv_xty = chol.solve(&split.x_pre.t_matmul(&split.y_pre)?)?;
    let a_inv_one = chol.solve_vec(&vec![1.0; split.n()])?;
    let denom: f64 = a_inv_one.iter().sum();
    let mut theta = a_inv_xty;
    let sums = theta.col_sums();
    for i in 0..theta.rows() {
        let shift = a_inv_one[i];
        for (v, s) in theta.row_mut(i).iter_mut().zip(&sums) {
            *v -= shift * (s - 1.0) / denom;
        }
    }
    Ok(PerUnitFit::closed_form(theta))
}

/// Same estimator as [`fit_rols`], but refactoring `A` for every treated
/// unit as a stand-alone per-unit fit would.
pub fn fit_rols_per_unit(split: &DesignSplit, ridge: f64) -> Result<PerUnitFit> {
    check_ridge(ridge)?;
    let (n, m) = (split.n(), split.m());
    let mut theta = Matrix::zeros(n, m);
    let ones = vec![1.0; n];
    for j in 0..m {
        let chol = Cholesky::factor(&gram_ridge(&split.x_pre, ridge))?;
        let y = Matrix::column(&split.y_pre.col(j));
        let z = chol.solve(&split.x_pre.t_matmul(&y)?)?.into_vec();
        let a1 = chol.solve_vec(&ones)?;
        let mu = (z.iter().sum::<f64>() - 1.0) / a1.iter().sum::<f64>();
        let w: Vec<f64> = z.iter().zip(&a1).map(|(zi, ai)| zi - mu * ai).collect();
        theta.set_col(j, &w);
    }
    Ok(PerUnitFit::closed_form(theta))
}

fn check_ridge(ridge: f64) -> Result<()> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::arg("ridge must be a finite nonnegative number"));
    }
    Ok(())
}

/// PSC with default iteration limits.
pub fn fit_psc(split: &DesignSplit, lambda: f64) -> Result<PerUnitFit> {
    fit_psc_with(split, lambda, IterLimits::PSC)
}

/// Penalized synthetic control for every treated unit:
/// `min ||y_j - X w||^2 + lambda sum_k w_k ||y_j - x_k||^2` over the
/// probability simplex, by projected gradient with backtracking.
pub fn fit_psc_with(split: &DesignSplit, lambda: f64, limits: IterLimits) -> Result<PerUnitFit> {
    if !(lambda >= 0.0) {
        return Err(Error::arg("lambda must be nonnegative"));
    }
    let x = &split.x_pre;
    let (n, m) = (split.n(), split.m());
    let xt = x.transpose();
    let mut theta = Matrix::zeros(n, m);
    let mut unconverged = Vec::new();
    let mut max_iterations = 0;
    for j in 0..m {
        let y = split.y_pre.col(j);
        let dist: Vec<f64> = (0..n)
            .map(|k| xt.row(k).iter().zip(&y).map(|(a, b)| (b - a) * (b - a)).sum())
            .collect();
        let (w, iters, ok) = psc_single(x, &xt, &y, &dist, lambda, limits)?;
        if !ok {
            unconverged.push(j);
        }
        max_iterations = max_iterations.max(iters);
        theta.set_col(j, &w);
    }
    Ok(PerUnitFit { theta, unconverged, max_iterations })
}

fn psc_single(
    x: &Matrix,
    xt: &Matrix,
    y: &[f64],
    dist: &[f64],
    lambda: f64,
    limits: IterLimits,
) -> Result<(Vec<f64>, usize, bool)> {
    let n = x.cols();
    let t0 = x.rows();
    let eval = |w: &[f64], resid: &mut Vec<f64>| -> f64 {
        resid.clear();
        resid.extend((0..t0).map(|t| dot(x.row(t), w) - y[t]));
        let fit: f64 = resid.iter().map(|r| r * r).sum();
        fit + lambda * dot(w, dist)
    };
    let mut w = vec![1.0 / n as f64; n];
    let mut resid = Vec::with_capacity(t0);
    let mut f = eval(&w, &mut resid);
    let mut grad = vec![0.0; n];
    let mut trial_resid = Vec::with_capacity(t0);
    let mut step = 1.0;
    for iter in 1..=limits.max_iter {
        for (k, g) in grad.iter_mut().enumerate() {
            *g = 2.0 * dot(xt.row(k), &resid) + lambda * dist[k];
        }
        loop {
            let moved: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
            let cand = project_simplex(&moved)?;
            if cand == w {
                return Ok((w, iter, true));
            }
            let f_new = eval(&cand, &mut trial_resid);
            if !f_new.is_finite() {
                return Err(Error::NonFinite("PSC objective"));
            }
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let bound = f + dot(&grad, &diff) + dot(&diff, &diff) / (2.0 * step);
            if f_new <= bound {
                let change = (f - f_new).abs();
                w = cand;
                core::mem::swap(&mut resid, &mut trial_resid);
                let done = change <= limits.tol * f.abs().max(1.0);
                f = f_new;
                step *= 2.0;
                if done {
                    return Ok((w, iter, true));
                }
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Ok((w, iter, true));
            }
        }
    }
    Ok((w, limits.max_iter, false))
}

/// Runs the configured baseline and wraps it as a [`FitReport`] (without
/// timing; the core has no clock).
pub fn fit_baseline(split: &DesignSplit, config: &BaselineConfig) -> Result<FitReport> {
    config.validate()?;
    let (fit, lambda_used) = match config.method {
        Method::Scul => (fit_scul_with(split, config.lambda, config.limits())?, config.lambda),
        Method::Psc => (fit_psc_with(split, config.lambda, config.limits())?, config.lambda),
        Method::Rols if config.rols_shared_factorization => (fit_rols(split, config.ridge)?, config.ridge),
        Method::Rols => (fit_rols_per_unit(split, config.ridge)?, config.ridge),
        Method::Msc => {
            return Err(Error::Argument(
                "msc is not a per-unit baseline; use solver::fit".to_string(),
            ))
        }
    };
    let converged = fit.unconverged.is_empty();
    Ok(FitReport {
        theta: fit.theta,
        lambda_used,
        iterations: fit.max_iterations,
        objective_trace: Vec::new(),
        converged,
        stop_reason: if converged { StopReason::Tolerance } else { StopReason::MaxIter },
        final_step: 0.0,
        wall_clock_seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(x: Matrix, y: Matrix) -> DesignSplit {
        let (m, n) = (y.cols(), x.cols());
        DesignSplit::new(y, x, Matrix::zeros(1, m), Matrix::zeros(1, n)).unwrap()
    }

    fn sample_x() -> Matrix {
        Matrix::from_rows(&[
            [1.0, 0.5, -0.2],
            [0.3, 1.2, 0.8],
            [-0.7, 0.4, 1.1],
            [1.5, -0.6, 0.2],
            [0.2, 0.9, -1.3],
            [0.8, 0.1, 0.5],
        ])
        .unwrap()
    }

    #[test]
    fn method_parsing() {
        assert_eq!("ROLS".parse::<Method>().unwrap(), Method::Rols);
        assert!("ols".parse::<Method>().is_err());
        assert_eq!(Method::Scul.to_string(), "scul");
    }

    #[test]
    fn scul_kill_threshold_and_noiseless_recovery() {
        let x = sample_x();
        let truth = Matrix::from_rows(&[[0.5, -1.0], [0.0, 2.0], [1.5, 0.0]]).unwrap();
        let y = x.matmul(&truth).unwrap();
        let s = design(x.clone(), y.clone());
        let kill = x.t_matmul(&y).unwrap().max_abs() / 6.0;
        assert_eq!(fit_scul(&s, kill).unwrap().theta, Matrix::zeros(3, 2));
        let fit = fit_scul(&s, 0.0).unwrap();
        assert!(fit.theta.sub(&truth).unwrap().max_abs() < 1e-6);
        assert!(fit.unconverged.is_empty());
    }

    #[test]
    fn scul_reports_unconverged_units() {
        let x = sample_x();
        let y = Matrix::column(&[1.0, 2.0, -1.0, 0.5, 0.0, 1.0]);
        let fit = fit_scul_with(&design(x, y), 0.0, IterLimits { max_iter: 1, tol: 1e-14 }).unwrap();
        assert_eq!(fit.unconverged, vec![0]);
    }

    #[test]
    fn rols_single_donor_and_symmetry() {
        let x = Matrix::column(&[1.0, 2.0, 3.0]);
        let y = Matrix::column(&[-4.0, 0.5, 9.0]);
        let w = fit_rols(&design(x, y), 1.0).unwrap().theta;
        assert!((w[(0, 0)] - 1.0).abs() < 1e-12);

        let col = [1.0, 3.0, -2.0, 0.5];
        let x = Matrix::from_fn(4, 2, |i, _| col[i]);
        let y = Matrix::column(&col);
        let w = fit_rols(&design(x, y), 1.0).unwrap().theta;
        assert!((w[(0, 0)] - 0.5).abs() < 1e-12 && (w[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rols_variants_agree() {
        let x = sample_x();
        let y = Matrix::from_fn(6, 3, |i, j| (i as f64 * 0.7 - j as f64).sin());
        let s = design(x, y);
        let a = fit_rols(&s, 1.0).unwrap().theta;
        let b = fit_rols_per_unit(&s, 1.0).unwrap().theta;
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
        for sum in a.col_sums() {
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let dup = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(matches!(fit_rols(&design(dup, Matrix::column(&[1.0, 2.0])), 0.0), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn psc_exact_donor_match() {
        let x = sample_x();
        let y = Matrix::column(&x.col(1));
        let w = fit_psc(&design(x, y), 0.5).unwrap().theta;
        assert!((w[(1, 0)] - 1.0).abs() < 1e-8);
        assert!(w[(0, 0)].abs() < 1e-8 && w[(2, 0)].abs() < 1e-8);
    }

    #[test]
    fn psc_feasible() {
        let x = sample_x();
        let y = Matrix::from_fn(6, 2, |i, j| (i as f64 + j as f64).cos());
        let fit = fit_psc(&design(x, y), 0.1).unwrap();
        for sum in fit.theta.col_sums() {
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(fit.theta.as_slice().iter().all(|v| *v >= 0.0 && *v <= 1.0));
    }

    #[test]
    fn dispatch() {
        let x = sample_x();
        let y = Matrix::from_fn(6, 2, |i, j| (i as f64 * 0.3 + j as f64).sin());
        let s = design(x, y);
        let r = fit_baseline(&s, &BaselineConfig::new(Method::Rols, 0.0)).unwrap();
        assert_eq!(r.lambda_used, 1.0);
        let r = fit_baseline(&s, &BaselineConfig::new(Method::Scul, 0.02)).unwrap();
        assert_eq!(r.lambda_used, 0.02);
        assert!(fit_baseline(&s, &BaselineConfig::new(Method::Msc, 0.02)).is_err());
        assert!(fit_baseline(&s, &BaselineConfig::new(Method::Psc, -1.0)).is_err());
    }
}
