use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linalg::{weighted_gram, PivotedCholesky};
use crate::error::{GmedError, Result};

/// Default tolerance on the weighted normal equations.
pub const LINEAR_TOL: f64 = 1e-10;

/// Coefficients and residuals of a (weighted) regression fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub design_rank: usize,
}

pub(crate) fn check_shapes(design: &DMatrix<f64>, response: &DVector<f64>, weights: &DVector<f64>) -> Result<()> {
    if design.nrows() != response.len() || design.nrows() != weights.len() {
        return Err(GmedError::DimensionMismatch(format!(
            "design has {} rows, response {}, weights {}",
            design.nrows(),
            response.len(),
            weights.len()
        )));
    }
    if design.ncols() == 0 {
        return Err(GmedError::DimensionMismatch("design has no columns".into()));
    }
    Ok(())
}

/// Minimises `Σ wᵢ (yᵢ − xᵢᵀb)²` through the weighted normal equations.
///
/// Weights must be non-negative; the weighted Gram matrix is factored with a
/// pivoted Cholesky so that rank deficiency is reported rather than
/// silently regularised.
pub fn weighted_least_squares(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<LinearFit> {
    check_shapes(design, response, weights)?;
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(GmedError::InvalidInput("weights must be finite and non-negative".into()));
    }
    let (gram, cross) = weighted_gram(design, weights, response);
    let coefficients = PivotedCholesky::new(&gram)?.solve(&cross);
    let residuals = response - design * &coefficients;
    Ok(LinearFit { coefficients, residuals, design_rank: design.ncols() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain Gaussian elimination with partial pivoting, kept independent of
    /// the Cholesky path under test.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in (col + 1)..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    #[test]
    fn mean_of_two_points() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let fit = weighted_least_squares(&x, &DVector::from_vec(vec![2.0, 4.0]), &DVector::from_element(2, 1.0)).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-14);
        assert_eq!(fit.design_rank, 1);
    }

    #[test]
    fn identity_design_returns_response() {
        let x = DMatrix::identity(2, 2);
        let fit = weighted_least_squares(&x, &DVector::from_vec(vec![-1.5, 7.25]), &DVector::from_element(2, 1.0)).unwrap();
        assert!((fit.coefficients[0] + 1.5).abs() < 1e-14);
        assert!((fit.coefficients[1] - 7.25).abs() < 1e-14);
    }

    #[test]
    fn matches_gaussian_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
        let truth = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let noise = DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
        let y = &x * &truth + noise;
        let w = DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0));
        let fit = weighted_least_squares(&x, &y, &w).unwrap();

        let mut a = vec![vec![0.0; 3]; 3];
        let mut b = vec![0.0; 3];
        for i in 0..n {
            for r in 0..3 {
                b[r] += w[i] * x[(i, r)] * y[i];
                for c in 0..3 {
                    a[r][c] += w[i] * x[(i, r)] * x[(i, c)];
                }
            }
        }
        let oracle = gauss_solve(a, b);
        for j in 0..3 {
            assert!((fit.coefficients[j] - oracle[j]).abs() < 1e-10);
        }
        // weighted normal equations hold at the solution
        let score = x.transpose() * DVector::from_fn(n, |i, _| w[i] * fit.residuals[i]);
        assert!(score.amax() < LINEAR_TOL);
    }

    #[test]
    fn rank_deficient_design_is_reported() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let err = weighted_least_squares(&x, &y, &DVector::from_element(4, 1.0)).unwrap_err();
        assert!(matches!(err, GmedError::RankDeficient { .. }));
    }

    #[test]
    fn negative_weights_are_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let w = DVector::from_vec(vec![1.0, -1.0]);
        assert!(matches!(weighted_least_squares(&x, &y, &w), Err(GmedError::InvalidInput(_))));
    }
}
