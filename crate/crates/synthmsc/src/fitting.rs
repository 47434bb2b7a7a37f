//! Timed fits, penalty grids and parallel cross-validation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthmsc_core::baselines::{fit_baseline, BaselineConfig};
use synthmsc_core::solver::{self, check_grid, cv_row, default_lambda, select_best, CvOutcome, FitReport};
use synthmsc_core::{DesignSplit, Error, Matrix, Method, MscConfig, Result};

/// The MSC sensitivity grid: 0.01 to 0.10 by 0.01, then 0.2 to 0.5.
pub const MSC_GRID: [f64; 14] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.2, 0.3, 0.4, 0.5];

pub const PSC_GRID: [f64; 5] = [0.0, 0.001, 0.01, 0.1, 1.0];

/// Number of points on the SCUL path, spaced geometrically from the kill
/// threshold down to 1e-3 of it.
pub const SCUL_PATH_LEN: usize = 12;

/// How penalties are chosen when none is fixed per method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "lambda")]
pub enum LambdaPolicy {
    /// Rolling-origin CV on the method's default grid.
    Cv,
    Fixed(f64),
    /// Closed-form rule for MSC; per-unit baselines fall back to CV.
    Corollary,
}

/// Everything needed to reproduce one fit apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub method: Method,
    pub lambda: f64,
    pub ridge: f64,
    pub msc: MscConfig,
}

impl FitSettings {
    pub fn new(method: Method, lambda: f64, ridge: f64) -> Self {
        FitSettings { method, lambda, ridge, msc: MscConfig::default() }
    }
}

/// Fits one method and records the wall-clock time of the fit alone.
pub fn fit_timed(split: &DesignSplit, settings: &FitSettings) -> Result<FitReport> {
    let start = Instant::now();
    let mut report = match settings.method {
        Method::Msc => solver::fit(split, &MscConfig { lambda: settings.lambda, ..settings.msc.clone() })?,
        method => {
            let config = BaselineConfig { ridge: settings.ridge, ..BaselineConfig::new(method, settings.lambda) };
            fit_baseline(split, &config)?
        }
    };
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Largest `|x_k' y_j| / T0`: the smallest penalty at which the lasso
/// returns all zeros.
pub fn lasso_kill_threshold(split: &DesignSplit) -> Result<f64> {
    Ok(split.x_pre.t_matmul(&split.y_pre)?.max_abs() / split.t0() as f64)
}

/// Default CV grid for a method on the given data.
pub fn default_grid(method: Method, split: &DesignSplit) -> Result<Vec<f64>> {
    match method {
        Method::Msc => Ok(MSC_GRID.to_vec()),
        Method::Psc => Ok(PSC_GRID.to_vec()),
        Method::Scul => {
            let top = lasso_kill_threshold(split)?;
            if top == 0.0 {
                return Ok(vec![0.0]);
            }
            let ratio = 1e-3f64.powf(1.0 / (SCUL_PATH_LEN - 1) as f64);
            Ok((0..SCUL_PATH_LEN).map(|i| top * ratio.powi(i as i32)).collect())
        }
        Method::Rols => Err(Error::Argument("rols has no penalty to tune; set --ridge".into())),
    }
}

/// Rolling-origin CV with the grid points evaluated in parallel on the
/// current rayon pool. Results do not depend on the pool size.
pub fn cross_validate_method(
    split: &DesignSplit,
    settings: &FitSettings,
    grid: &[f64],
    blocks: usize,
) -> Result<CvOutcome> {
    if settings.method == Method::Rols {
        return Err(Error::Argument("rols has no penalty to tune; set --ridge".into()));
    }
    check_grid(grid)?;
    solver::rolling_origin_folds(split.t0(), blocks)?;
    let table = grid
        .par_iter()
        .map(|&lambda| cv_row(split, lambda, blocks, |train: &DesignSplit, l: f64| weights(train, settings, l)))
        .collect::<Result<Vec<_>>>()?;
    select_best(table)
}

fn weights(split: &DesignSplit, settings: &FitSettings, lambda: f64) -> Result<Matrix> {
    let s = FitSettings { lambda, ..settings.clone() };
    fit_timed(split, &s).map(|r| r.theta)
}

/// Penalty for `method` under `policy`, with any CV run on `split`.
pub fn resolve_lambda(
    split: &DesignSplit,
    settings: &FitSettings,
    policy: LambdaPolicy,
    blocks: usize,
) -> Result<(f64, Option<CvOutcome>)> {
    match (policy, settings.method) {
        (_, Method::Rols) => Ok((settings.ridge, None)),
        (LambdaPolicy::Fixed(lambda), _) => Ok((lambda, None)),
        (LambdaPolicy::Corollary, Method::Msc) => Ok((default_lambda(split.n(), split.t0(), settings.msc.c), None)),
        (LambdaPolicy::Cv | LambdaPolicy::Corollary, method) => {
            let grid = default_grid(method, split)?;
            let cv = cross_validate_method(split, settings, &grid, blocks)?;
            Ok((cv.lambda_best, Some(cv)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split() -> DesignSplit {
        let x = Matrix::from_fn(30, 4, |t, k| ((t * 7 + k * 3) % 11) as f64 - 5.0);
        let y = Matrix::from_fn(30, 2, |t, j| x[(t, j)] * 0.5 + x[(t, 3)] * 0.5);
        DesignSplit::new(y, x, Matrix::zeros(1, 2), Matrix::zeros(1, 4)).unwrap()
    }

    #[test]
    fn timed_fit_reports_positive_time() {
        for method in Method::ALL {
            let report = fit_timed(&split(), &FitSettings::new(method, 0.05, 1.0)).unwrap();
            assert!(report.wall_clock_seconds > 0.0);
            assert_eq!(report.theta.shape(), (4, 2));
        }
    }

    #[test]
    fn scul_grid_starts_at_kill_threshold() {
        let s = split();
        let grid = default_grid(Method::Scul, &s).unwrap();
        assert_eq!(grid.len(), SCUL_PATH_LEN);
        let zero = fit_timed(&s, &FitSettings::new(Method::Scul, grid[0], 1.0)).unwrap();
        assert_eq!(zero.theta.count_nonzero(), 0);
        assert!((grid[SCUL_PATH_LEN - 1] / grid[0] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn parallel_cv_matches_sequential() {
        let s = split();
        let settings = FitSettings::new(Method::Msc, 0.0, 1.0);
        let grid = [0.01, 0.05, 0.2];
        let par = cross_validate_method(&s, &settings, &grid, 3).unwrap();
        let seq = solver::cross_validate(&s, &grid, 3, &MscConfig::default()).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn policies() {
        let s = split();
        let msc = FitSettings::new(Method::Msc, 0.0, 1.0);
        assert_eq!(resolve_lambda(&s, &msc, LambdaPolicy::Fixed(0.3), 3).unwrap().0, 0.3);
        let (l, cv) = resolve_lambda(&s, &msc, LambdaPolicy::Corollary, 3).unwrap();
        assert_eq!(l, default_lambda(4, 30, 1.1));
        assert!(cv.is_none());
        let rols = FitSettings::new(Method::Rols, 0.0, 2.5);
        assert_eq!(resolve_lambda(&s, &rols, LambdaPolicy::Cv, 3).unwrap().0, 2.5);
        assert!(default_grid(Method::Rols, &s).is_err());
    }
}
