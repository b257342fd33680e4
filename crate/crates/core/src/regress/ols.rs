use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{check_xy, LinearFit};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// Least squares with an unpenalized intercept, optionally weighted.
///
/// `residual_variance` is the weighted RSS divided by the total weight.
pub fn ols_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    weights: Option<ArrayView1<f64>>,
) -> Result<LinearFit> {
    check_xy(&x, &y)?;
    let n = x.nrows();
    let p = x.ncols();
    let w = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "weights have length {} for {} rows",
                    w.len(),
                    n
                )));
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
            }
            w.to_owned()
        }
        None => Array1::ones(n),
    };
    if w.sum() <= p as f64 {
        return Err(Error::InsufficientData(format!(
            "effective sample size {} does not exceed {} predictors",
            w.sum(),
            p
        )));
    }
    let cols: Vec<usize> = (0..p).collect();
    weighted_fit_columns(x, y, w.view(), &cols, 0.0)
}

/// Ridge regression minimizing `(1/(2N)) RSS + (lambda/2) ||beta||^2` on the
/// original column scale, intercept unpenalized.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<LinearFit> {
    check_xy(&x, &y)?;
    let w = Array1::ones(x.nrows());
    weighted_ridge_fit(x, y, w.view(), lambda)
}

/// Weighted ridge; with weights `w` the objective is
/// `(1/(2 sum w)) sum w_i r_i^2 + (lambda/2) ||beta||^2`.
pub fn weighted_ridge_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    lambda: f64,
) -> Result<LinearFit> {
    check_xy(&x, &y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge penalty {lambda} must be >= 0")));
    }
    if weights.len() != x.nrows() {
        return Err(Error::DimensionMismatch("weights length differs from rows".into()));
    }
    let cols: Vec<usize> = (0..x.ncols()).collect();
    weighted_fit_columns(x, y, weights, &cols, lambda)
}

/// Weighted (ridge-)regression on the column subset `cols`; the returned
/// coefficient vector has full length `x.ncols()` with zeros off `cols`.
pub(crate) fn weighted_fit_columns(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    cols: &[usize],
    ridge: f64,
) -> Result<LinearFit> {
    let n = x.nrows();
    let q = cols.len();
    let sw: f64 = w.sum();
    if !(sw > 0.0) {
        return Err(Error::InsufficientData("total weight is zero".into()));
    }
    let ybar = w.dot(&y) / sw;
    let xbar: Vec<f64> = cols
        .iter()
        .map(|&j| w.dot(&x.column(j)) / sw)
        .collect();

    // Centered, sqrt-weighted design restricted to `cols`.
    let mut xc = Array2::<f64>::zeros((n, q));
    let mut yc = Array1::<f64>::zeros(n);
    for i in 0..n {
        let sq = w[i].sqrt();
        yc[i] = sq * (y[i] - ybar);
        for (c, &j) in cols.iter().enumerate() {
            xc[[i, c]] = sq * (x[[i, j]] - xbar[c]);
        }
    }
    let mut gram = xc.t().dot(&xc) / sw;
    for c in 0..q {
        gram[[c, c]] += ridge;
    }
    let rhs = xc.t().dot(&yc) / sw;
    let beta_sub = solve_spd(&gram, &rhs)?;

    let mut coefficients = Array1::zeros(x.ncols());
    let mut intercept = ybar;
    for (c, &j) in cols.iter().enumerate() {
        coefficients[j] = beta_sub[c];
        intercept -= beta_sub[c] * xbar[c];
    }
    let mut rss = 0.0;
    for i in 0..n {
        let mut pred = intercept;
        for &j in cols {
            pred += x[[i, j]] * coefficients[j];
        }
        let r = y[i] - pred;
        rss += w[i] * r * r;
    }
    Ok(LinearFit {
        intercept,
        coefficients,
        residual_variance: rss / sw,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn exact_line() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![2.0, 4.0, 6.0, 8.0];
        let fit = ols_fit(x.view(), y.view(), None).unwrap();
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!(fit.residual_variance < 1e-24);
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let x = array![[1.0, 0.3], [2.0, -1.0], [3.0, 0.5], [4.0, 2.0], [0.5, 0.1]];
        let y = array![1.0, 3.0, 2.0, 5.0, 0.2];
        let a = ols_fit(x.view(), y.view(), None).unwrap();
        let w = Array1::from_elem(5, 2.5);
        let b = ols_fit(x.view(), y.view(), Some(w.view())).unwrap();
        assert!((a.intercept - b.intercept).abs() < 1e-12);
        for j in 0..2 {
            assert!((a.coefficients[j] - b.coefficients[j]).abs() < 1e-12);
        }
        assert!((a.residual_variance - b.residual_variance).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_are_singular() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [5.0, 10.0]];
        let y = array![1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            ols_fit(x.view(), y.view(), None),
            Err(Error::SingularDesign)
        ));
        // a constant column is collinear with the intercept
        let x = array![[1.0, 1.0], [2.0, 1.0], [3.0, 1.0], [5.0, 1.0]];
        assert!(matches!(
            ols_fit(x.view(), y.view(), None),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn too_few_rows() {
        let x = Array2::<f64>::zeros((2, 2));
        let y = array![1.0, 2.0];
        assert!(matches!(
            ols_fit(x.view(), y.view(), None),
            Err(Error::InsufficientData(_))
        ));
        let y3 = array![1.0, 2.0, 3.0];
        assert!(matches!(
            ols_fit(x.view(), y3.view(), None),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn ridge_closed_form_single_column() {
        // centered x = (-1, 0, 1), centered y = (-1, 0, 1), N = 3, lambda = 1
        let x = array![[1.0], [2.0], [3.0]];
        let y = array![1.0, 2.0, 3.0];
        let fit = ridge_fit(x.view(), y.view(), 1.0).unwrap();
        let expected = 2.0 / (2.0 + 3.0 * 1.0);
        assert!((fit.coefficients[0] - expected).abs() < 1e-14);
        assert!((fit.intercept - (2.0 - 2.0 * expected)).abs() < 1e-14);
    }

    #[test]
    fn ridge_infinite_shrinkage() {
        let x = array![[1.0, 0.2], [2.0, -0.4], [3.0, 1.1], [4.0, 0.0]];
        let y = array![3.0, 1.0, 4.0, 1.5];
        let fit = ridge_fit(x.view(), y.view(), 1e9).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-3));
        let ols = ols_fit(x.view(), y.view(), None).unwrap();
        let r0 = ridge_fit(x.view(), y.view(), 0.0).unwrap();
        for j in 0..2 {
            assert!((ols.coefficients[j] - r0.coefficients[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_rejects_negative_penalty() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = array![1.0, 2.0, 3.0];
        assert!(ridge_fit(x.view(), y.view(), -1.0).is_err());
    }
}
