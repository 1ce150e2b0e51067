use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GmedError, Result};

/// Column means and standard deviations of the non-intercept confounders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl StandardizationRecord {
    /// Maps coefficients fitted on the standardized design back to the
    /// original confounder scale.
    pub fn unscale_gamma(&self, gamma: &DVector<f64>) -> DVector<f64> {
        let mut out = gamma.clone();
        for (j, (mean, sd)) in self.means.iter().zip(&self.sds).enumerate() {
            out[j + 1] = gamma[j + 1] / sd;
            out[0] -= gamma[j + 1] * mean / sd;
        }
        out
    }
}

/// Centres and scales every non-intercept confounder to mean 0 and unit
/// sample SD. Outcome, mediator, exposure and weights are untouched.
pub fn standardize(data: &Dataset) -> Result<(Dataset, StandardizationRecord)> {
    let z = data.confounders();
    let n = data.n();
    let mut out = DMatrix::from_element(n, z.ncols(), 1.0);
    let mut record = StandardizationRecord { means: Vec::new(), sds: Vec::new() };
    for j in 1..z.ncols() {
        let col = z.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(GmedError::ConstantColumn(data.confounder_names()[j - 1].clone()));
        }
        for i in 0..n {
            out[(i, j)] = (z[(i, j)] - mean) / sd;
        }
        record.means.push(mean);
        record.sds.push(sd);
    }
    let scaled = Dataset::from_design(
        data.outcome().clone(),
        data.mediator().clone(),
        data.exposure().clone(),
        out,
        data.weights().clone(),
        data.confounder_names().to_vec(),
    )?;
    Ok((scaled, record))
}
