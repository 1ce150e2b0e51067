use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gest::{g_estimate_with, GEstimateOptions};
use crate::data::{Dataset, ModelConfig};
use crate::error::{GmedError, Result};
use crate::moments::TargetParams;
use crate::rng::{stream, stream_rng};

pub const MIN_REPLICATES: usize = 100;

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub replicates: usize,
    /// One row per replicate; failed replicates are rows of NaN.
    pub beta_draws: DMatrix<f64>,
    pub nide_se_boot: f64,
    pub nde_se_boot: f64,
    pub failures: usize,
    /// Every row of the data is identical, so every resample equals the
    /// original and the bootstrap distribution is a point mass.
    pub degenerate: bool,
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn all_rows_identical(data: &Dataset) -> bool {
    let z = data.confounders();
    (1..data.n()).all(|i| {
        data.outcome()[i] == data.outcome()[0]
            && data.mediator()[i] == data.mediator()[0]
            && data.exposure()[i] == data.exposure()[0]
            && data.weights()[i] == data.weights()[0]
            && (0..z.ncols()).all(|j| z[(i, j)] == z[(0, j)])
    })
}

/// Nonparametric row bootstrap of the G-estimator.
///
/// Replicate `r` draws its rows from the stream `(seed, r)`, so results do
/// not depend on how rayon schedules the replicates.
pub fn bootstrap_variance(data: &Dataset, config: &ModelConfig, replicates: usize, seed: u64) -> Result<BootstrapReport> {
    if replicates < MIN_REPLICATES {
        return Err(GmedError::InvalidInput(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    let k = if config.interaction { 4 } else { 3 };
    if all_rows_identical(data) {
        return Ok(BootstrapReport {
            replicates,
            beta_draws: DMatrix::zeros(0, k),
            nide_se_boot: 0.0,
            nde_se_boot: 0.0,
            failures: 0,
            degenerate: true,
        });
    }
    let n = data.n();
    let draws: Vec<Option<TargetParams>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64, stream::BOOTSTRAP);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = data.select_rows(&rows).ok()?;
            let opts = GEstimateOptions { start: None, skip_influence: true };
            g_estimate_with(&sample, config, &opts).ok().map(|e| e.beta_hat)
        })
        .collect();

    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures as f64 > MAX_FAILURE_RATE * replicates as f64 {
        return Err(GmedError::TooManyFailures { failures, replicates });
    }
    let mut beta_draws = DMatrix::from_element(replicates, k, f64::NAN);
    let mut nide = Vec::new();
    let mut nde = Vec::new();
    for (r, d) in draws.iter().enumerate() {
        if let Some(b) = d {
            for (j, v) in b.to_vector().iter().enumerate() {
                beta_draws[(r, j)] = *v;
            }
            nide.push(b.nide());
            nde.push(b.nde());
        }
    }
    Ok(BootstrapReport {
        replicates,
        beta_draws,
        nide_se_boot: sample_sd(&nide),
        nde_se_boot: sample_sd(&nde),
        failures,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn identical_rows_give_zero_se() {
        let n = 10;
        let d = Dataset::new(
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 2.0),
            DVector::from_element(n, 1.0),
            DMatrix::from_element(n, 1, 0.3),
            None,
        )
        .unwrap();
        let r = bootstrap_variance(&d, &ModelConfig::default(), 100, 1).unwrap();
        assert_eq!(r.nide_se_boot, 0.0);
        assert_eq!(r.nde_se_boot, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn too_few_replicates_rejected() {
        let n = 10;
        let d = Dataset::new(
            DVector::from_fn(n, |i, _| i as f64),
            DVector::from_fn(n, |i, _| (i * i) as f64),
            DVector::from_fn(n, |i, _| (i % 2) as f64),
            DMatrix::zeros(n, 0),
            None,
        )
        .unwrap();
        assert!(matches!(bootstrap_variance(&d, &ModelConfig::default(), 99, 1), Err(GmedError::InvalidInput(_))));
    }

    #[test]
    fn sd_uses_n_minus_one() {
        assert!((sample_sd(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
