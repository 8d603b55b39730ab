//! Shared regression and calibration metrics.

use super::ExperimentError;
use crate::cnp::PredictiveDistribution;
use crate::nn::gaussian_nll;

fn check_lengths(a: usize, b: usize) -> Result<(), ExperimentError> {
    if a != b || a == 0 {
        return Err(ExperimentError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`, with `SS_tot` about
/// the mean of `y_true`. Negative when predictions underperform the mean
/// predictor; undefined (error) for constant truth.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64, ExperimentError> {
    check_lengths(y_true.len(), y_pred.len())?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(ExperimentError::ConstantTruth);
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, ExperimentError> {
    check_lengths(y_true.len(), y_pred.len())?;
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// Mean Gaussian log-density of the truths under the predictive
/// distribution; the negative of the episode loss on the same points.
pub fn avg_log_prob(dist: &PredictiveDistribution, y_true: &[f64]) -> Result<f64, ExperimentError> {
    check_lengths(dist.means.len(), y_true.len())?;
    check_lengths(dist.means.len(), dist.variances.len())?;
    let mut acc = 0.0;
    for ((&mu, &var), &y) in dist.means.iter().zip(&dist.variances).zip(y_true) {
        acc -= gaussian_nll(mu, var, y).map_err(crate::cnp::CnpError::from)?;
    }
    Ok(acc / y_true.len() as f64)
}
