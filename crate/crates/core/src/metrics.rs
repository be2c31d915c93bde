//! Performance criteria: RMSE and the coefficient of determination.

use serde::Serialize;

use crate::error::{Error, Result};

fn check_lengths(model: &[f64], obs: &[f64]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::dim("metric observations", 1, 0));
    }
    if model.len() != obs.len() {
        return Err(Error::dim("metric model values", obs.len(), model.len()));
    }
    Ok(())
}

/// `sqrt(mean((M_i - O_i)^2))`
pub fn rmse(model: &[f64], obs: &[f64]) -> Result<f64> {
    check_lengths(model, obs)?;
    let sse: f64 = model.iter().zip(obs).map(|(m, o)| (m - o) * (m - o)).sum();
    Ok((sse / obs.len() as f64).sqrt())
}

/// `1 - sum((O_i - M_i)^2) / sum((O_i - mean(O))^2)`; negative when the model
/// is worse than predicting the observed mean.
pub fn r_squared(model: &[f64], obs: &[f64]) -> Result<f64> {
    check_lengths(model, obs)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let ss_tot: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedRSquared);
    }
    let ss_res: f64 = obs.iter().zip(model).map(|(o, m)| (o - m) * (o - m)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Total sum of squares around the observed mean.
pub fn total_sum_of_squares(obs: &[f64]) -> f64 {
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    obs.iter().map(|o| (o - mean) * (o - mean)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub rmse: f64,
    pub r2: f64,
}

impl Scores {
    pub fn compute(model: &[f64], obs: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(model, obs)?,
            r2: r_squared(model, obs)?,
        })
    }
}

/// Median that does not depend on the order of `values`. NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
