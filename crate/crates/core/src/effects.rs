//! Counterfactual prediction, treatment effects and evaluation metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectReport {
    /// `T1 x m` estimated untreated outcomes.
    pub counterfactuals: Matrix,
    /// `T1 x m` observed minus counterfactual.
    pub per_unit_effects: Matrix,
    /// Mean effect across treated units, one entry per post period.
    pub att_per_period: Vec<f64>,
    /// Grand mean over periods and units.
    pub att: f64,
    pub rmse: Option<f64>,
    pub att_bias: Option<f64>,
}

impl EffectReport {
    /// Adds the simulation-only metrics given the true untreated outcomes
    /// and the true effect.
    pub fn with_truth(mut self, true_y0_post: &Matrix, true_delta: f64) -> Result<Self> {
        self.rmse = Some(rmse(&self.counterfactuals, true_y0_post)?);
        self.att_bias = Some(self.att - true_delta);
        Ok(self)
    }
}

/// `X_post Theta`.
pub fn predict_counterfactual(theta: &Matrix, x_post: &Matrix) -> Result<Matrix> {
    if x_post.cols() != theta.rows() {
        return Err(Error::shape("predict_counterfactual", (x_post.rows(), theta.rows()), x_post.shape()));
    }
    x_post.matmul(theta)
}

/// Per-unit effects and their means. Refuses an empty post period.
pub fn att(y_post: &Matrix, counterfactuals: &Matrix) -> Result<EffectReport> {
    if y_post.shape() != counterfactuals.shape() {
        return Err(Error::shape("att", y_post.shape(), counterfactuals.shape()));
    }
    if y_post.rows() == 0 {
        return Err(Error::arg("no post-treatment periods"));
    }
    if y_post.cols() == 0 {
        return Err(Error::arg("no treated units"));
    }
    let effects = y_post.sub(counterfactuals)?;
    let m = effects.cols() as f64;
    let att_per_period: Vec<f64> = (0..effects.rows()).map(|t| effects.row(t).iter().sum::<f64>() / m).collect();
    let att = effects.mean();
    Ok(EffectReport {
        counterfactuals: counterfactuals.clone(),
        per_unit_effects: effects,
        att_per_period,
        att,
        rmse: None,
        att_bias: None,
    })
}

/// Root mean squared difference over all cells.
pub fn rmse(counterfactuals: &Matrix, truth: &Matrix) -> Result<f64> {
    if counterfactuals.shape() != truth.shape() {
        return Err(Error::shape("rmse", truth.shape(), counterfactuals.shape()));
    }
    let cells = counterfactuals.as_slice().len();
    if cells == 0 {
        return Err(Error::arg("rmse of an empty matrix"));
    }
    let sq: f64 = counterfactuals.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(sq / cells as f64))
}
