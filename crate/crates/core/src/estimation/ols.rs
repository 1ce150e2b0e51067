use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::moments::TargetParams;
use crate::numerics::linalg::{invert_square, weighted_gram};
use crate::numerics::weighted_least_squares;

/// Product-of-coefficients regressions `M ~ X + Z` and `Y ~ M + X (+ XM) + Z`
/// with classical standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsProduct {
    pub beta: TargetParams,
    /// Classical standard errors of `β₁`, `β₂`, `β₃` (and `θ`).
    pub se: Vec<f64>,
}

impl OlsProduct {
    /// Squared t-statistic of coefficient `j` (0-based in `β₁, β₂, β₃`).
    pub fn t_squared(&self, j: usize) -> f64 {
        let b = self.beta.to_vector()[j];
        (b / self.se[j]).powi(2)
    }
}

/// Fits `response ~ leading columns + Z` and returns the leading coefficients
/// with classical standard errors. Weights are normalised to mean one.
fn regress(data: &Dataset, leading: &[DVector<f64>], response: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = data.n();
    let z = data.confounders();
    let lead = leading.len();
    let mut design = DMatrix::zeros(n, lead + z.ncols());
    for (j, col) in leading.iter().enumerate() {
        design.set_column(j, col);
    }
    design.view_mut((0, lead), (n, z.ncols())).copy_from(z);
    let w = data.weights() / data.weights().mean();
    let fit = weighted_least_squares(&design, response, &w)?;
    let dof = (n - design.ncols()) as f64;
    let sigma2 = fit.residuals.iter().zip(w.iter()).map(|(r, wi)| wi * r * r).sum::<f64>() / dof;
    let (gram, _) = weighted_gram(&design, &w, response);
    let cov = invert_square(&gram)? * sigma2;
    let coef = (0..lead).map(|j| fit.coefficients[j]).collect();
    let se = (0..lead).map(|j| cov[(j, j)].sqrt()).collect();
    Ok((coef, se))
}

/// Ordinary (weighted) least-squares estimates of the structural parameters.
pub fn ols_product(data: &Dataset, interaction: bool) -> Result<OlsProduct> {
    let (x, m) = (data.exposure(), data.mediator());
    let (b1, s1) = regress(data, &[x.clone()], m)?;
    let mut leading = vec![m.clone(), x.clone()];
    if interaction {
        leading.push(x.component_mul(m));
    }
    let (b, s) = regress(data, &leading, data.outcome())?;
    let beta = TargetParams { beta1: b1[0], beta2: b[0], beta3: b[1], theta: interaction.then(|| b[2]) };
    let mut se = vec![s1[0]];
    se.extend(s);
    Ok(OlsProduct { beta, se })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_and_se_match_closed_form() {
        // simple regression without confounders: slope = Sxy/Sxx, se² = s²/Sxx
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let m = DVector::from_vec(vec![0.1, 1.3, -0.2, 0.8, 1.1, 0.4, 0.9]);
        let y = DVector::from_vec(vec![0.0, 1.0, 0.3, 0.2, 0.9, 0.1, 0.5]);
        let d = Dataset::new(y, m.clone(), x.clone(), DMatrix::zeros(7, 0), None).unwrap();
        let fit = ols_product(&d, false).unwrap();
        let (xm, mm) = (x.mean(), m.mean());
        let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
        let sxy: f64 = x.iter().zip(m.iter()).map(|(a, b)| (a - xm) * (b - mm)).sum();
        let slope = sxy / sxx;
        let intercept = mm - slope * xm;
        let rss: f64 = x.iter().zip(m.iter()).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        assert!((fit.beta.beta1 - slope).abs() < 1e-12);
        assert!((fit.se[0] - (rss / 5.0 / sxx).sqrt()).abs() < 1e-12);
    }
}
