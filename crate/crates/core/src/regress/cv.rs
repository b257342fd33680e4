use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lasso::{lambda_grid, CdSolver, PenaltyScale, Standardized};
use super::{check_xy, weighted_fit_columns, LinearFit};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::seed;

/// Fits along a decreasing penalty sequence, with cross-validation error
/// when produced by [`cv_lasso`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<LinearFit>,
    pub cv_mean: Option<Vec<f64>>,
    pub cv_se: Option<Vec<f64>>,
}

/// How the penalty is picked from the cross-validation curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Minimum mean CV error.
    #[default]
    Min,
    /// Largest penalty whose mean CV error is within one standard error of
    /// the minimum.
    OneSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub n_lambda: usize,
    pub seed: u64,
    #[serde(default)]
    pub rule: LambdaRule,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambda: 100,
            seed: 0,
            rule: LambdaRule::Min,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvLasso {
    pub lambda: f64,
    pub fit: LinearFit,
    pub path: LambdaPath,
}

#[derive(Debug, Clone)]
pub struct CvRidge {
    pub lambda: f64,
    pub fit: LinearFit,
}

/// Fold label for each of `n` rows: a seeded shuffle followed by
/// round-robin assignment, so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn split(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &g) in fold.iter().enumerate() {
        if g == f {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

fn check_folds(n: usize, folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::InsufficientData(format!("{n} rows for {folds} folds")));
    }
    // The smallest training split holds n - ceil(n / folds) rows.
    if n - n.div_ceil(folds) < 2 {
        return Err(Error::InsufficientData(
            "every training split needs at least 2 rows".into(),
        ));
    }
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// K-fold cross-validated lasso.
///
/// The grid is `n_lambda` log-spaced values on `[eps * lambda_max, lambda_max]`
/// where `lambda_max` comes from the full data and `eps` is `1e-3` when
/// `N > P`, `1e-2` otherwise. Each fold is fitted along the grid with warm
/// starts; the selected penalty minimizes the mean out-of-fold squared error
/// (ties go to the larger penalty), or under [`LambdaRule::OneSe`] is the
/// largest penalty within one standard error of that minimum. Fold errors
/// are accumulated in fold order.
pub fn cv_lasso(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &CvConfig) -> Result<CvLasso> {
    check_xy(&x, &y)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    cv_lasso_rows(x, y, &rows, cfg)
}

/// [`cv_lasso`] restricted to a subset of rows.
pub(crate) fn cv_lasso_rows(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    rows: &[usize],
    cfg: &CvConfig,
) -> Result<CvLasso> {
    let n = rows.len();
    let p = x.ncols();
    check_folds(n, cfg.folds)?;
    if cfg.n_lambda == 0 {
        return Err(Error::InvalidArgument("n_lambda must be positive".into()));
    }
    let full = Standardized::new(x, y, rows);
    let lmax = full.lambda_max(&vec![1.0; p]);
    let ratio = if n > p { 1e-3 } else { 1e-2 };
    let lambdas = lambda_grid(lmax, ratio, cfg.n_lambda);

    let fold = fold_assignment(n, cfg.folds, cfg.seed);
    let mut fold_mse = vec![vec![0.0; cfg.folds]; lambdas.len()];
    for f in 0..cfg.folds {
        let (train_pos, test_pos) = split(&fold, f);
        let train: Vec<usize> = train_pos.iter().map(|&i| rows[i]).collect();
        let test: Vec<usize> = test_pos.iter().map(|&i| rows[i]).collect();
        let data = Standardized::new(x, y, &train);
        let mut solver = CdSolver::new(&data, PenaltyScale::Standardized);
        for (l, &lambda) in lambdas.iter().enumerate() {
            solver.solve(lambda);
            let sse: f64 = test
                .iter()
                .map(|&i| (y[i] - data.predict(&solver.beta, x.row(i))).powi(2))
                .sum();
            fold_mse[l][f] = sse / test.len() as f64;
        }
    }
    let (cv_mean, cv_se): (Vec<f64>, Vec<f64>) =
        fold_mse.iter().map(|errs| mean_and_se(errs)).unzip();

    let mut best = 0;
    for l in 1..lambdas.len() {
        if cv_mean[l] < cv_mean[best] {
            best = l;
        }
    }
    if cfg.rule == LambdaRule::OneSe {
        // lambdas decrease, so the first index under the bound is the largest
        let bound = cv_mean[best] + cv_se[best];
        best = (0..=best).find(|&l| cv_mean[l] <= bound).unwrap_or(best);
    }

    let mut solver = CdSolver::new(&full, PenaltyScale::Standardized);
    let fits: Vec<LinearFit> = lambdas
        .iter()
        .map(|&lambda| {
            let ok = solver.solve(lambda);
            full.to_fit(&solver.beta, ok)
        })
        .collect();
    Ok(CvLasso {
        lambda: lambdas[best],
        fit: fits[best].clone(),
        path: LambdaPath {
            lambdas,
            fits,
            cv_mean: Some(cv_mean),
            cv_se: Some(cv_se),
        },
    })
}

/// Number of penalty values tried by [`cv_ridge`].
const RIDGE_GRID: usize = 50;

/// Cross-validated ridge regression (baseline model).
///
/// Penalties are log-spaced over `[1e-4, 1e2]` times the mean column
/// variance, so the grid spans from near-OLS to heavy shrinkage regardless
/// of units.
pub fn cv_ridge(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &CvConfig) -> Result<CvRidge> {
    check_xy(&x, &y)?;
    let n = x.nrows();
    let p = x.ncols();
    check_folds(n, cfg.folds)?;
    let col_var = (0..p)
        .map(|j| crate::linalg::variance(x.column(j)))
        .sum::<f64>()
        / p.max(1) as f64;
    let base = if col_var > 0.0 { col_var } else { 1.0 };
    let lambdas: Vec<f64> = (0..RIDGE_GRID)
        .map(|i| base * 10f64.powf(2.0 - 6.0 * i as f64 / (RIDGE_GRID - 1) as f64))
        .collect();

    let fold = fold_assignment(n, cfg.folds, cfg.seed);
    let mut fold_mse = vec![vec![f64::INFINITY; cfg.folds]; lambdas.len()];
    for f in 0..cfg.folds {
        let (train, test) = split(&fold, f);
        let nt = train.len() as f64;
        let ybar = train.iter().map(|&i| y[i]).sum::<f64>() / nt;
        let xbar: Array1<f64> = Array1::from_shape_fn(p, |j| {
            train.iter().map(|&i| x[[i, j]]).sum::<f64>() / nt
        });
        let xc = Array2::from_shape_fn((train.len(), p), |(r, j)| x[[train[r], j]] - xbar[j]);
        let yc = Array1::from_shape_fn(train.len(), |r| y[train[r]] - ybar);
        let gram = xc.t().dot(&xc) / nt;
        let rhs = xc.t().dot(&yc) / nt;
        for (l, &lambda) in lambdas.iter().enumerate() {
            let mut a = gram.clone();
            for j in 0..p {
                a[[j, j]] += lambda;
            }
            let Ok(beta) = solve_spd(&a, &rhs) else {
                continue;
            };
            let b0 = ybar - xbar.dot(&beta);
            let sse: f64 = test
                .iter()
                .map(|&i| (y[i] - b0 - x.row(i).dot(&beta)).powi(2))
                .sum();
            fold_mse[l][f] = sse / test.len() as f64;
        }
    }
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for (l, errs) in fold_mse.iter().enumerate() {
        let (m, _) = mean_and_se(errs);
        if m < best_err {
            best_err = m;
            best = l;
        }
    }
    let w = Array1::ones(n);
    let cols: Vec<usize> = (0..p).collect();
    let fit = weighted_fit_columns(x, y, w.view(), &cols, lambdas[best])?;
    Ok(CvRidge {
        lambda: lambdas[best],
        fit,
    })
}
