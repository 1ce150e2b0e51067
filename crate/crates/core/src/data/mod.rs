//! Dataset container and model configuration.

mod csv_io;
mod standardize;

pub use csv_io::{load_csv, write_csv, ColumnMap, MissingPolicy};
pub use standardize::{standardize, StandardizationRecord};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GmedError, Result};

/// Rectangular data `(Y, M, X, Z, w)` with an explicit intercept column as
/// the first confounder. Fields are private so a constructed dataset stays
/// valid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    m: DVector<f64>,
    x: DVector<f64>,
    z: DMatrix<f64>,
    weights: DVector<f64>,
    confounder_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from raw confounders; an intercept column is
    /// prepended. `weights = None` means unit weights.
    pub fn new(
        y: DVector<f64>,
        m: DVector<f64>,
        x: DVector<f64>,
        confounders: DMatrix<f64>,
        weights: Option<DVector<f64>>,
    ) -> Result<Self> {
        let names = (1..=confounders.ncols()).map(|j| format!("z{j}")).collect();
        Self::with_names(y, m, x, confounders, weights, names)
    }

    pub fn with_names(
        y: DVector<f64>,
        m: DVector<f64>,
        x: DVector<f64>,
        confounders: DMatrix<f64>,
        weights: Option<DVector<f64>>,
        confounder_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if confounders.ncols() > 0 && confounders.nrows() != n {
            return Err(GmedError::DimensionMismatch(format!(
                "confounders have {} rows, outcome has {n}",
                confounders.nrows()
            )));
        }
        if confounder_names.len() != confounders.ncols() {
            return Err(GmedError::DimensionMismatch("one name per confounder column".into()));
        }
        let mut z = DMatrix::from_element(n, confounders.ncols() + 1, 1.0);
        for j in 0..confounders.ncols() {
            z.set_column(j + 1, &confounders.column(j));
        }
        let weights = weights.unwrap_or_else(|| DVector::from_element(n, 1.0));
        Self::from_design(y, m, x, z, weights, confounder_names)
    }

    /// Builds a dataset whose `z` already carries the intercept column.
    pub fn from_design(
        y: DVector<f64>,
        m: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        weights: DVector<f64>,
        confounder_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if m.len() != n || x.len() != n || z.nrows() != n || weights.len() != n {
            return Err(GmedError::DimensionMismatch(format!(
                "row counts differ: y {n}, m {}, x {}, z {}, weights {}",
                m.len(),
                x.len(),
                z.nrows(),
                weights.len()
            )));
        }
        if z.ncols() == 0 {
            return Err(GmedError::DimensionMismatch("confounder design needs an intercept".into()));
        }
        // intercept excluded from the count
        if n < z.ncols() + 2 {
            return Err(GmedError::InvalidInput(format!(
                "{n} rows is too few for {} confounder columns",
                z.ncols()
            )));
        }
        let finite = |v: &DVector<f64>| v.iter().all(|a| a.is_finite());
        if !finite(&y) || !finite(&m) || !finite(&x) || z.iter().any(|a| !a.is_finite()) {
            return Err(GmedError::InvalidInput("data contain non-finite values".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GmedError::InvalidInput("weights must be finite and non-negative".into()));
        }
        if weights.sum() <= 0.0 {
            return Err(GmedError::InvalidInput("weights sum to zero".into()));
        }
        // weights only enter through ratios, so equal weights are stored as
        // ones and reproduce the unweighted fit bit for bit
        let weights = if weights.iter().all(|w| *w == weights[0]) { DVector::from_element(n, 1.0) } else { weights };
        Ok(Self { y, m, x, z, weights, confounder_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn mediator(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn exposure(&self) -> &DVector<f64> {
        &self.x
    }

    /// Confounder design including the leading intercept column.
    pub fn confounders(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Names of the non-intercept confounder columns.
    pub fn confounder_names(&self) -> &[String] {
        &self.confounder_names
    }

    /// Dimension of each working-model coefficient block (intercept included).
    pub fn gamma_dim(&self) -> usize {
        self.z.ncols()
    }

    /// Sub-sample (with repetition allowed) used by the bootstrap.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let pick = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
        let z = DMatrix::from_fn(rows.len(), self.z.ncols(), |i, j| self.z[(rows[i], j)]);
        Self::from_design(
            pick(&self.y),
            pick(&self.m),
            pick(&self.x),
            z,
            pick(&self.weights),
            self.confounder_names.clone(),
        )
    }

    /// Same data with replaced observation weights.
    pub fn with_weights(&self, weights: DVector<f64>) -> Result<Self> {
        Self::from_design(
            self.y.clone(),
            self.m.clone(),
            self.x.clone(),
            self.z.clone(),
            weights,
            self.confounder_names.clone(),
        )
    }

    /// Same data with the outcome and mediator replaced (used by equivariance checks).
    pub fn with_outcome_mediator(&self, y: DVector<f64>, m: DVector<f64>) -> Result<Self> {
        Self::from_design(y, m, self.x.clone(), self.z.clone(), self.weights.clone(), self.confounder_names.clone())
    }

    /// Weighted sample mean `Σ wᵢ vᵢ / Σ wᵢ`.
    pub fn weighted_mean(&self, v: &DVector<f64>) -> f64 {
        self.weights.dot(v) / self.weights.sum()
    }
}

/// Link for the exposure working model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureFamily {
    Gaussian,
    Binomial,
}

/// How the working-model coefficients are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceStrategy {
    MaximumLikelihood,
    BiasReduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub exposure_family: ExposureFamily,
    pub interaction: bool,
    pub nuisance: NuisanceStrategy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            exposure_family: ExposureFamily::Binomial,
            interaction: false,
            nuisance: NuisanceStrategy::BiasReduced,
        }
    }
}

impl ModelConfig {
    pub fn new(exposure_family: ExposureFamily, nuisance: NuisanceStrategy) -> Self {
        Self { exposure_family, interaction: false, nuisance }
    }

    pub fn with_interaction(mut self, on: bool) -> Self {
        self.interaction = on;
        self
    }

    /// Checks the configuration against the data (binary exposure for the logit link).
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.exposure_family == ExposureFamily::Binomial
            && data.exposure().iter().any(|&v| v != 0.0 && v != 1.0)
        {
            return Err(GmedError::InvalidInput("binomial exposure family needs X in {0, 1}".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            DVector::from_vec(vec![0.5, 0.1, 0.2, 0.9, 0.3]),
            DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0]),
            DMatrix::from_column_slice(5, 1, &[0.3, -1.0, 2.0, 0.1, 0.7]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn intercept_is_prepended() {
        let d = tiny();
        assert_eq!(d.confounders().ncols(), 2);
        assert!(d.confounders().column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.weights().sum(), 5.0);
    }

    #[test]
    fn too_few_rows_rejected() {
        let r = Dataset::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 4.0]),
            None,
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(tiny().with_weights(DVector::zeros(5)).is_err());
    }

    #[test]
    fn select_rows_repeats() {
        let d = tiny().select_rows(&[4, 4, 0, 1, 2]).unwrap();
        assert_eq!(d.outcome()[0], 5.0);
        assert_eq!(d.outcome()[1], 5.0);
        assert_eq!(d.confounders()[(0, 1)], 0.7);
    }

    #[test]
    fn binomial_family_needs_binary_exposure() {
        let d = tiny();
        let cfg = ModelConfig::default();
        assert!(cfg.validate(&d).is_ok());
        let shifted = Dataset::new(
            d.outcome().clone(),
            d.mediator().clone(),
            d.exposure().map(|v| v + 0.5),
            DMatrix::from_column_slice(5, 1, &[0.3, -1.0, 2.0, 0.1, 0.7]),
            None,
        )
        .unwrap();
        assert!(cfg.validate(&shifted).is_err());
    }
}
