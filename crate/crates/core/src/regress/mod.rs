//! Linear-model subproblem solvers.
//!
//! Ordinary and weighted least squares, ridge, and an L1 coordinate-descent
//! solver with regularization paths and k-fold cross-validated penalty
//! selection. All solvers fit an unpenalized intercept.

mod cv;
mod lasso;
mod ols;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use cv::{cv_lasso, cv_ridge, fold_assignment, CvConfig, CvLasso, CvRidge, LambdaPath,
    LambdaRule};
pub(crate) use cv::cv_lasso_rows;
pub use lasso::{lambda_grid, lambda_max, lasso_fit, lasso_path, soft_threshold, TOL_CD, MAX_CYCLES};
pub use ols::{ols_fit, ridge_fit, weighted_ridge_fit};

pub(crate) use lasso::{lasso_fit_rows, PenaltyScale};
pub(crate) use ols::weighted_fit_columns;

/// A fitted linear model `y ~ intercept + x' coefficients`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    /// Mean squared residual (weighted RSS over total weight when weighted).
    pub residual_variance: f64,
    /// False when an iterative solver hit its cycle limit.
    pub converged: bool,
}

impl LinearFit {
    pub fn zeros(p: usize, intercept: f64) -> Self {
        Self {
            intercept,
            coefficients: Array1::zeros(p),
            residual_variance: 0.0,
            converged: true,
        }
    }

    /// Column indices with a nonzero coefficient, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        self.intercept + x.dot(&self.coefficients)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.coefficients) + self.intercept
    }
}

pub(crate) fn check_xy(x: &ArrayView2<f64>, y: &ArrayView1<f64>) -> crate::Result<()> {
    if x.nrows() != y.len() {
        return Err(crate::Error::DimensionMismatch(format!(
            "X has {} rows but y has length {}",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}
