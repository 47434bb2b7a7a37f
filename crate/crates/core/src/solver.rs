//! Multivariate square-root lasso fit by proximal gradient.
//!
//! The loss `(1/sqrt(T0)) ||Y - X Theta||_*` is handled through the
//! zero-`Z` subgradient selection `-(1/sqrt(T0)) X' U_E V_E'`, and the
//! entrywise L1 penalty through soft thresholding. Backtracking is done on
//! the total objective, so every accepted step strictly decreases it.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matops::{self, shrink, SvdFactors};
use crate::matrix::{matmul_into, t_matmul_into, Matrix};
use crate::panel::DesignSplit;

/// Absolute decrease an accepted step must achieve.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MscConfig {
    /// Entrywise L1 penalty level.
    pub lambda: f64,
    /// Constant of the closed-form default penalty; must exceed 1.
    pub c: f64,
    pub max_iter: usize,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub step_init: f64,
    pub step_shrink: f64,
    pub step_floor: f64,
}

impl Default for MscConfig {
    fn default() -> Self {
        MscConfig {
            lambda: 0.03,
            c: 1.1,
            max_iter: 10_000,
            tol: 1e-8,
            step_init: 1.0,
            step_shrink: 0.5,
            step_floor: 1e-12,
        }
    }
}

impl MscConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        MscConfig { lambda, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::arg("lambda must be a finite nonnegative number"));
        }
        if !(self.c > 1.0) {
            return Err(Error::arg("c must exceed 1"));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::arg("step_shrink must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("tol must be positive"));
        }
        if !(self.step_init > 0.0) || !(self.step_floor > 0.0) {
            return Err(Error::arg("step sizes must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    /// Relative objective change fell below `tol`.
    Tolerance,
    /// The proximal step returned the current iterate unchanged.
    FixedPoint,
    MaxIter,
    StepFloor,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitReport {
    /// `n x m` weights, column `j` for treated unit `j`.
    pub theta: Matrix,
    pub lambda_used: f64,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Step of the last accepted (or fixed-point) prox step.
    pub final_step: f64,
    /// Filled in by callers that time the fit; the core has no clock.
    pub wall_clock_seconds: f64,
}

/// `(1/sqrt(T0)) ||Y - X Theta||_* + lambda * sum |Theta_ij|`.
pub fn objective(theta: &Matrix, split: &DesignSplit, lambda: f64) -> Result<f64> {
    let expected = (split.n(), split.m());
    if theta.shape() != expected {
        return Err(Error::shape("objective", expected, theta.shape()));
    }
    let resid = split.y_pre.sub(&split.x_pre.matmul(theta)?)?;
    let loss = matops::nuclear_norm(&resid)? / libm::sqrt(split.t0() as f64);
    Ok(loss + lambda * theta.l1_norm())
}

/// Gradient of the nuclear-norm loss at a residual:
/// `-(1/sqrt(T0)) X' U_E V_E'`, keeping only singular directions above the
/// rank threshold. A zero residual maps to the zero matrix.
pub fn subgradient_step_direction(residual: &Matrix, x: &Matrix) -> Result<Matrix> {
    if residual.rows() != x.rows() {
        return Err(Error::shape("subgradient", (x.rows(), residual.cols()), residual.shape()));
    }
    if residual.max_abs() == 0.0 {
        return Ok(Matrix::zeros(x.cols(), residual.cols()));
    }
    let factors = matops::svd(residual)?;
    Ok(direction_from_factors(&factors, x))
}

fn direction_from_factors(factors: &SvdFactors, x: &Matrix) -> Matrix {
    let polar = factors.polar_factor();
    let mut g = Matrix::zeros(x.cols(), polar.cols());
    t_matmul_into(x, &polar, &mut g);
    let scale = -1.0 / libm::sqrt(x.rows() as f64);
    g.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    g
}

/// One proximal gradient step from `theta` with step `eta`.
pub fn prox_gradient_step(theta: &Matrix, split: &DesignSplit, lambda: f64, eta: f64) -> Result<Matrix> {
    let resid = split.y_pre.sub(&split.x_pre.matmul(theta)?)?;
    let g = subgradient_step_direction(&resid, &split.x_pre)?;
    let mut out = theta.clone();
    prox_into(theta, &g, eta, lambda, &mut out);
    Ok(out)
}

#[inline]
fn prox_into(theta: &Matrix, grad: &Matrix, eta: f64, lambda: f64, out: &mut Matrix) {
    let tau = eta * lambda;
    for ((o, t), g) in out.as_mut_slice().iter_mut().zip(theta.as_slice()).zip(grad.as_slice()) {
        *o = shrink(t - eta * g, tau);
    }
}

/// Residual `Y - X Theta` into `out`.
fn residual_into(split: &DesignSplit, theta: &Matrix, out: &mut Matrix) {
    matmul_into(&split.x_pre, theta, out);
    for (r, y) in out.as_mut_slice().iter_mut().zip(split.y_pre.as_slice()) {
        *r = y - *r;
    }
}

/// Candidate state evaluated during backtracking.
struct Iterate {
    theta: Matrix,
    resid: Matrix,
    factors: SvdFactors,
    rotation: Matrix,
    objective: f64,
}

fn evaluate(split: &DesignSplit, theta: Matrix, mut resid: Matrix, lambda: f64, guess: Option<&Matrix>) -> Result<Iterate> {
    residual_into(split, &theta, &mut resid);
    let (factors, rotation) = matops::svd_with_guess(&resid, guess)?;
    let loss: f64 = factors.d.iter().sum::<f64>() / libm::sqrt(split.t0() as f64);
    let objective = loss + lambda * theta.l1_norm();
    if !objective.is_finite() {
        return Err(Error::NonFinite("MSC objective"));
    }
    Ok(Iterate { theta, resid, factors, rotation, objective })
}

/// Fits the weight matrix by proximal gradient from `Theta = 0`.
pub fn fit(split: &DesignSplit, config: &MscConfig) -> Result<FitReport> {
    config.validate()?;
    let (n, m, t0) = (split.n(), split.m(), split.t0());
    let lambda = config.lambda;

    let mut cur = evaluate(split, Matrix::zeros(n, m), Matrix::zeros(t0, m), lambda, None)?;
    let mut trace = alloc::vec![cur.objective];
    let mut eta = config.step_init;
    let mut candidate = Matrix::zeros(n, m);
    let mut spare_resid = Matrix::zeros(t0, m);

    let mut iterations = 0;
    let mut stop = StopReason::MaxIter;
    'outer: while iterations < config.max_iter {
        iterations += 1;
        let grad = direction_from_factors(&cur.factors, &split.x_pre);
        let next = loop {
            prox_into(&cur.theta, &grad, eta, lambda, &mut candidate);
            if candidate == cur.theta {
                stop = StopReason::FixedPoint;
                break 'outer;
            }
            let trial = evaluate(
                split,
                core::mem::replace(&mut candidate, Matrix::zeros(0, 0)),
                core::mem::replace(&mut spare_resid, Matrix::zeros(0, 0)),
                lambda,
                Some(&cur.rotation),
            )?;
            if trial.objective <= cur.objective - MIN_DECREASE {
                break trial;
            }
            candidate = trial.theta;
            spare_resid = trial.resid;
            eta *= config.step_shrink;
            if eta < config.step_floor {
                stop = StopReason::StepFloor;
                break 'outer;
            }
        };
        let rel = (cur.objective - next.objective) / cur.objective.abs().max(f64::MIN_POSITIVE);
        let prev = core::mem::replace(&mut cur, next);
        candidate = prev.theta;
        spare_resid = prev.resid;
        trace.push(cur.objective);
        if rel < config.tol {
            stop = StopReason::Tolerance;
            break;
        }
        eta = config.step_init.min(2.0 * eta);
    }

    Ok(FitReport {
        theta: cur.theta,
        lambda_used: lambda,
        iterations,
        objective_trace: trace,
        converged: matches!(stop, StopReason::Tolerance | StopReason::FixedPoint),
        stop_reason: stop,
        final_step: eta,
        wall_clock_seconds: 0.0,
    })
}

/// Closed-form penalty `2 c (n ln(n T0) / T0)^(1/4)`, natural log.
pub fn default_lambda(n: usize, t0: usize, c: f64) -> f64 {
    let (n, t0) = (n as f64, t0 as f64);
    2.0 * c * libm::pow(n * libm::log(n * t0) / t0, 0.25)
}

/// Validation error of one penalty value.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvRow {
    pub lambda: f64,
    pub mean_rmse: f64,
    pub fold_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvOutcome {
    pub lambda_best: f64,
    pub table: Vec<CvRow>,
}

/// Training and validation row ranges of the rolling-origin folds.
pub fn rolling_origin_folds(t0: usize, blocks: usize) -> Result<Vec<(usize, usize)>> {
    if blocks < 2 {
        return Err(Error::arg("cross-validation needs at least 2 blocks"));
    }
    if t0 < 2 * blocks {
        return Err(Error::arg(alloc::format!(
            "{t0} pre-treatment periods are too few for {blocks} blocks (need at least {})",
            2 * blocks
        )));
    }
    let cut = |b: usize| libm::round(t0 as f64 * b as f64 / (blocks + 1) as f64) as usize;
    Ok((1..=blocks).map(|b| (cut(b), cut(b + 1))).collect())
}

/// Rolling-origin cross-validation for an arbitrary weight estimator.
///
/// Fold `b` trains on the first `round(t0 b / (blocks + 1))` rows and
/// validates on the following block by predicting `X_val Theta`. The penalty
/// with the lowest mean validation RMSE wins; ties go to the larger penalty.
pub fn cross_validate_with<F>(split: &DesignSplit, grid: &[f64], blocks: usize, mut fitter: F) -> Result<CvOutcome>
where
    F: FnMut(&DesignSplit, f64) -> Result<Matrix>,
{
    check_grid(grid)?;
    rolling_origin_folds(split.t0(), blocks)?;
    let table = grid
        .iter()
        .map(|&lambda| cv_row(split, lambda, blocks, &mut fitter))
        .collect::<Result<Vec<_>>>()?;
    select_best(table)
}

/// Rejects empty grids and negative or non-finite penalties.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::arg("lambda grid is empty"));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::arg("lambda grid values must be finite and nonnegative"));
    }
    Ok(())
}

/// Validation errors of one penalty over all rolling-origin folds.
pub fn cv_row<F>(split: &DesignSplit, lambda: f64, blocks: usize, mut fitter: F) -> Result<CvRow>
where
    F: FnMut(&DesignSplit, f64) -> Result<Matrix>,
{
    let folds = rolling_origin_folds(split.t0(), blocks)?;
    let mut fold_rmse = Vec::with_capacity(folds.len());
    for &(train_end, val_end) in &folds {
        let train = DesignSplit::new(
            split.y_pre.row_range(0, train_end),
            split.x_pre.row_range(0, train_end),
            split.y_pre.row_range(train_end, val_end),
            split.x_pre.row_range(train_end, val_end),
        )?;
        let theta = fitter(&train, lambda)?;
        let pred = train.x_post.matmul(&theta)?;
        fold_rmse.push(crate::effects::rmse(&pred, &train.y_post)?);
    }
    let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
    Ok(CvRow { lambda, mean_rmse, fold_rmse })
}

/// Picks the row with the lowest mean RMSE, preferring the larger penalty
/// on ties (relative 1e-12).
pub fn select_best(table: Vec<CvRow>) -> Result<CvOutcome> {
    let Some(first) = table.first() else {
        return Err(Error::arg("lambda grid is empty"));
    };
    let mut best = first;
    for row in &table[1..] {
        let tie = (row.mean_rmse - best.mean_rmse).abs() <= 1e-12 * best.mean_rmse.abs().max(1.0);
        if (!tie && row.mean_rmse < best.mean_rmse) || (tie && row.lambda > best.lambda) {
            best = row;
        }
    }
    Ok(CvOutcome { lambda_best: best.lambda, table })
}

/// Rolling-origin cross-validation of the MSC penalty.
pub fn cross_validate(split: &DesignSplit, grid: &[f64], blocks: usize, base: &MscConfig) -> Result<CvOutcome> {
    cross_validate_with(split, grid, blocks, |train, lambda| {
        let cfg = MscConfig { lambda, ..base.clone() };
        fit(train, &cfg).map(|r| r.theta)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy_split() -> DesignSplit {
        let x = Matrix::from_rows(&[[1.0, 0.5], [0.2, 1.0], [1.5, -0.3], [0.7, 0.9]]).unwrap();
        let y = Matrix::from_rows(&[[1.2, 0.1], [0.8, -0.5], [1.0, 0.9], [1.9, 0.2]]).unwrap();
        DesignSplit::new(y, x, Matrix::zeros(1, 2), Matrix::zeros(1, 2)).unwrap()
    }

    #[test]
    fn objective_at_zero_is_scaled_nuclear_norm() {
        let s = toy_split();
        let f = objective(&Matrix::zeros(2, 2), &s, 0.7).unwrap();
        let expected = matops::nuclear_norm(&s.y_pre).unwrap() / 2.0;
        assert!((f - expected).abs() < 1e-14);
        assert!(objective(&Matrix::zeros(3, 2), &s, 0.7).is_err());
    }

    #[test]
    fn objective_perfect_fit() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let theta = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.0]]).unwrap();
        let y = x.matmul(&theta).unwrap();
        let s = DesignSplit::new(y, x, Matrix::zeros(0, 2), Matrix::zeros(0, 2)).unwrap();
        assert!(objective(&theta, &s, 0.0).unwrap() < 1e-12);
    }

    #[test]
    fn direction_conventions() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(subgradient_step_direction(&Matrix::zeros(2, 1), &x).unwrap(), Matrix::zeros(2, 1));

        // orthonormal residual columns: U V' is the residual itself
        let r = Matrix::from_rows(&[[0.6, 0.8], [0.8, -0.6]]).unwrap();
        let g = subgradient_step_direction(&r, &x).unwrap();
        let expected = x.t_matmul(&r).unwrap().scale(-1.0 / 2.0f64.sqrt());
        assert!(g.sub(&expected).unwrap().max_abs() < 1e-12);

        // scalar: -(x / sqrt(1)) sign(r)
        let g = subgradient_step_direction(&Matrix::column(&[-0.3]), &Matrix::column(&[2.5])).unwrap();
        assert!((g[(0, 0)] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn zero_is_fixed_point_under_dominating_penalty() {
        let s = toy_split();
        let lambda = 10.0 * s.x_pre.t_matmul(&s.y_pre).unwrap().max_abs() / 2.0;
        let r = fit(&s, &MscConfig::with_lambda(lambda)).unwrap();
        assert_eq!(r.theta, Matrix::zeros(2, 2));
        assert_eq!(r.iterations, 1);
        assert_eq!(r.stop_reason, StopReason::FixedPoint);
        assert!(r.converged);
    }

    #[test]
    fn trace_is_monotone() {
        let s = toy_split();
        let r = fit(&s, &MscConfig::with_lambda(0.05)).unwrap();
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let accepted = match r.stop_reason {
            StopReason::Tolerance | StopReason::MaxIter => r.iterations,
            StopReason::FixedPoint | StopReason::StepFloor => r.iterations - 1,
        };
        assert_eq!(r.objective_trace.len(), accepted + 1);
    }

    #[test]
    fn config_validation() {
        let s = toy_split();
        for bad in [
            MscConfig { lambda: -1.0, ..Default::default() },
            MscConfig { c: 1.0, ..Default::default() },
            MscConfig { step_shrink: 1.0, ..Default::default() },
            MscConfig { tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(fit(&s, &bad), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn default_lambda_formula() {
        let v = default_lambda(1, 3, 1.1);
        assert!((v - 2.2 * libm::pow(libm::log(3.0) / 3.0, 0.25)).abs() < 1e-15);
        assert!(default_lambda(800, 100, 1.1) > default_lambda(400, 100, 1.1));
        assert!(default_lambda(400, 200, 1.1) < default_lambda(400, 100, 1.1));
    }

    #[test]
    fn folds_cover_rolling_origin() {
        assert_eq!(rolling_origin_folds(12, 2).unwrap(), vec![(4, 8), (8, 12)]);
        assert!(rolling_origin_folds(7, 4).is_err());
        assert!(rolling_origin_folds(10, 1).is_err());
    }

    #[test]
    fn single_lambda_grid() {
        let s = toy_split();
        let out = cross_validate(&s, &[0.2], 2, &MscConfig::default()).unwrap();
        assert_eq!(out.lambda_best, 0.2);
        assert!(cross_validate(&s, &[], 2, &MscConfig::default()).is_err());
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        let s = toy_split();
        let out = cross_validate_with(&s, &[0.1, 0.3, 0.2], 2, |t, _| Ok(Matrix::zeros(t.n(), t.m()))).unwrap();
        assert_eq!(out.lambda_best, 0.3);
    }
}
