//! Choosing the number of components: a modified BIC on full-data fits, or
//! repeated K-fold cross-validation with supervised prediction.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::mixture::{fit_csmr, log_normal_density, penalized_complete_ll, CsmrConfig, FitResult, MixtureModel};
use crate::regress::fold_assignment;
use crate::seed;

/// `K + (K - 1)` plus the number of nonzero regression coefficients
/// (intercepts excluded).
pub fn effective_dof(model: &MixtureModel) -> usize {
    let k = model.k();
    let nonzero: usize = model.supports().iter().map(Vec::len).sum();
    k + (k - 1) + nonzero
}

/// `-2 * lpc + ln(n) * dof`.
pub fn bic_from_parts(lpc: f64, n: usize, dof: usize) -> f64 {
    -2.0 * lpc + (n as f64).ln() * dof as f64
}

/// Modified BIC of a fit, using the penalized complete log-likelihood of
/// its hard partition.
pub fn bic_score(fit: &FitResult, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let lpc = penalized_complete_ll(&fit.model, &fit.partition, x, y)?;
    Ok(bic_from_parts(lpc, y.len(), effective_dof(&fit.model)))
}

/// Supervised prediction for one sample whose response is known: the
/// component is `argmax_k pi_k N(y; b0_k + x' beta_k, sigma2_k)` (ties to the
/// smallest index, 0-based) and the prediction is that component's mean.
pub fn predict_supervised(model: &MixtureModel, x: ArrayView1<f64>, y: f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for (k, c) in model.components.iter().enumerate() {
        let mean = c.mean(x);
        let score = c.weight.ln() + log_normal_density(y, mean, c.variance);
        if k == 0 || score > best.1 {
            best = (k, score, mean);
        }
    }
    (best.0, best.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Bic,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample mean and (n - 1) standard deviation; `None` when empty.
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanSd { mean, sd })
    }
}

/// One (K, repetition, fold) evaluation of the CV selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub k: usize,
    pub rep: usize,
    pub fold: usize,
    pub n_test: usize,
    pub rmse: Option<f64>,
    /// `None` when the fit failed or the test predictions were constant.
    pub correlation: Option<f64>,
    pub error: Option<String>,
}

impl CvCell {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub mode: SelectionMode,
    pub candidates: Vec<usize>,
    pub chosen_k: usize,
    /// Per candidate, `None` where the fit failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bic: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_rmse: Option<Vec<Option<MeanSd>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_correlation: Option<Vec<Option<MeanSd>>>,
    /// Candidates dropped because too many of their fits failed.
    pub excluded: Vec<usize>,
    #[serde(default)]
    pub cells: Vec<CvCell>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
}

fn check_grid(k_grid: &[usize]) -> Result<()> {
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("K grid is empty".into()));
    }
    if k_grid.contains(&0) {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(())
}

fn argmin(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|b| *v < values[b].unwrap()) {
                best = Some(i);
            }
        }
    }
    best
}

/// Fits every candidate on the full data and picks the smallest BIC.
/// Candidate `K` is fitted with seed `derive(seed, [K])`.
pub fn select_k_bic(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    k_grid: &[usize],
    cfg: &CsmrConfig,
    seed: u64,
) -> Result<KSelectionReport> {
    check_grid(k_grid)?;
    let scores: Vec<std::result::Result<f64, String>> = k_grid
        .par_iter()
        .map(|&k| {
            let cfg = cfg.clone().with_seed(seed::derive(seed, &[k as u64]));
            fit_csmr(x, y, k, &cfg)
                .and_then(|fit| bic_score(&fit, x, y))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut excluded = Vec::new();
    let bic: Vec<Option<f64>> = k_grid
        .iter()
        .zip(&scores)
        .map(|(&k, s)| match s {
            Ok(v) => Some(*v),
            Err(e) => {
                log::warn!("K = {k} excluded: {e}");
                excluded.push(k);
                None
            }
        })
        .collect();
    let best = argmin(&bic).ok_or_else(|| Error::SelectionFailed("every BIC fit failed".into()))?;
    Ok(KSelectionReport {
        mode: SelectionMode::Bic,
        candidates: k_grid.to_vec(),
        chosen_k: k_grid[best],
        bic: Some(bic),
        cv_rmse: None,
        cv_correlation: None,
        excluded,
        cells: Vec::new(),
        seed,
        folds: None,
        reps: None,
    })
}

fn cv_cell(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    fold: &[usize],
    (k, rep, f): (usize, usize, usize),
    cfg: &CsmrConfig,
    seed: u64,
) -> CvCell {
    let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != f).collect();
    let test: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
    let mut cell = CvCell {
        k,
        rep,
        fold: f,
        n_test: test.len(),
        rmse: None,
        correlation: None,
        error: None,
    };
    let xt = x.select(Axis(0), &train);
    let yt = y.select(Axis(0), &train);
    let cfg = cfg
        .clone()
        .with_seed(seed::derive(seed, &[k as u64, rep as u64, f as u64]));
    match fit_csmr(xt.view(), yt.view(), k, &cfg) {
        Ok(fit) => {
            let obs = y.select(Axis(0), &test);
            let pred: ndarray::Array1<f64> = test
                .iter()
                .map(|&i| predict_supervised(&fit.model, x.row(i), y[i]).1)
                .collect();
            let mse = (&obs - &pred).mapv(|r| r * r).sum() / test.len() as f64;
            cell.rmse = Some(mse.sqrt());
            cell.correlation = pearson(obs.view(), pred.view());
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Per-candidate RMSE and correlation summaries from a cell table, plus the
/// candidates with more than half of their cells failed. A pure function of
/// `cells`, so a stored table reproduces the report exactly.
#[allow(clippy::type_complexity)]
pub fn aggregate_cv(
    candidates: &[usize],
    cells: &[CvCell],
) -> (Vec<Option<MeanSd>>, Vec<Option<MeanSd>>, Vec<usize>) {
    let mut rmse = Vec::with_capacity(candidates.len());
    let mut corr = Vec::with_capacity(candidates.len());
    let mut excluded = Vec::new();
    for &k in candidates {
        let mine: Vec<&CvCell> = cells.iter().filter(|c| c.k == k).collect();
        let failed = mine.iter().filter(|c| !c.ok()).count();
        if mine.is_empty() || 2 * failed > mine.len() {
            excluded.push(k);
            rmse.push(None);
            corr.push(None);
            continue;
        }
        let r: Vec<f64> = mine.iter().filter_map(|c| c.rmse).collect();
        let c: Vec<f64> = mine.iter().filter_map(|c| c.correlation).collect();
        rmse.push(MeanSd::of(&r));
        corr.push(MeanSd::of(&c));
    }
    (rmse, corr, excluded)
}

/// Repeated `folds`-fold cross-validation over `k_grid`.
///
/// Repetition `r` splits the samples with fold seed `derive(seed, [r])`,
/// shared by every candidate; the cell `(K, r, f)` fits on the training
/// part with seed `derive(seed, [K, r, f])` and predicts each held-out
/// response with [`predict_supervised`]. The chosen K minimizes mean RMSE
/// (ties to the earlier candidate).
pub fn select_k_cv(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    k_grid: &[usize],
    folds: usize,
    reps: usize,
    cfg: &CsmrConfig,
    seed: u64,
) -> Result<KSelectionReport> {
    check_grid(k_grid)?;
    if folds < 2 || reps == 0 {
        return Err(Error::InvalidArgument(format!(
            "need folds >= 2 and reps >= 1, got {folds} and {reps}"
        )));
    }
    let n = y.len();
    let kmax = *k_grid.iter().max().unwrap();
    let smallest_train = n - n.div_ceil(folds);
    if smallest_train < kmax * cfg.min_cluster_size() {
        return Err(Error::InsufficientData(format!(
            "training splits of {smallest_train} samples cannot hold {kmax} clusters of {}",
            cfg.min_cluster_size()
        )));
    }
    let splits: Vec<Vec<usize>> = (0..reps)
        .map(|r| fold_assignment(n, folds, seed::derive(seed, &[r as u64])))
        .collect();
    let jobs: Vec<(usize, usize, usize)> = k_grid
        .iter()
        .flat_map(|&k| (0..reps).flat_map(move |r| (0..folds).map(move |f| (k, r, f))))
        .collect();
    let cells: Vec<CvCell> = jobs
        .par_iter()
        .map(|&job| cv_cell(x, y, &splits[job.1], job, cfg, seed))
        .collect();
    let (cv_rmse, cv_correlation, excluded) = aggregate_cv(k_grid, &cells);
    for &k in &excluded {
        log::warn!("K = {k} excluded: more than half of its fits failed");
    }
    let means: Vec<Option<f64>> = cv_rmse.iter().map(|s| s.map(|s| s.mean)).collect();
    let best = argmin(&means)
        .ok_or_else(|| Error::SelectionFailed("every candidate was excluded".into()))?;
    Ok(KSelectionReport {
        mode: SelectionMode::Cv,
        candidates: k_grid.to_vec(),
        chosen_k: k_grid[best],
        bic: None,
        cv_rmse: Some(cv_rmse),
        cv_correlation: Some(cv_correlation),
        excluded,
        cells,
        seed,
        folds: Some(folds),
        reps: Some(reps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::Component;
    use ndarray::{array, Array1};

    fn comp(weight: f64, intercept: f64, beta: Vec<f64>, variance: f64) -> Component {
        Component {
            weight,
            intercept,
            coefficients: Array1::from(beta),
            variance,
            lambda: 0.0,
        }
    }

    #[test]
    fn dof_counts() {
        let m = MixtureModel::new(vec![
            comp(0.5, 0.0, vec![1.0, 2.0, 3.0, 0.0], 1.0),
            comp(0.5, 1.0, vec![0.0, 0.0, 1.0, -1.0], 1.0),
        ])
        .unwrap();
        assert_eq!(effective_dof(&m), 8);
        let m = MixtureModel::new(vec![comp(1.0, 3.0, vec![0.0; 4], 1.0)]).unwrap();
        assert_eq!(effective_dof(&m), 1);
        let zero = |w| comp(w, 0.0, vec![0.0; 2], 1.0);
        let m = MixtureModel::new(vec![zero(0.2), zero(0.3), zero(0.5)]).unwrap();
        assert_eq!(effective_dof(&m), 5);
    }

    #[test]
    fn bic_arithmetic() {
        assert!((bic_from_parts(-100.0, 100, 8) - (200.0 + 100f64.ln() * 8.0)).abs() < 1e-12);
        let delta = bic_from_parts(-50.0, 400, 9) - bic_from_parts(-50.0, 400, 8);
        assert!((delta - 400f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn supervised_prediction_examples() {
        let one = MixtureModel::new(vec![comp(1.0, 2.0, vec![1.0], 1.0)]).unwrap();
        assert_eq!(predict_supervised(&one, array![3.0].view(), -50.0), (0, 5.0));
        let two = MixtureModel::new(vec![
            comp(0.5, 0.0, vec![0.0], 1.0),
            comp(0.5, 10.0, vec![0.0], 1.0),
        ])
        .unwrap();
        assert_eq!(predict_supervised(&two, array![0.0].view(), 9.0), (1, 10.0));
        assert_eq!(predict_supervised(&two, array![0.0].view(), 5.0), (0, 0.0));
    }

    #[test]
    fn aggregation_excludes_mostly_failed() {
        let cell = |k, rmse: Option<f64>| CvCell {
            k,
            rep: 0,
            fold: 0,
            n_test: 4,
            rmse,
            correlation: rmse.map(|_| 0.5),
            error: rmse.is_none().then(|| "boom".to_string()),
        };
        let cells = vec![
            cell(1, Some(2.0)),
            cell(1, Some(4.0)),
            cell(2, None),
            cell(2, None),
            cell(2, Some(1.0)),
        ];
        let (rmse, corr, excluded) = aggregate_cv(&[1, 2], &cells);
        assert_eq!(excluded, vec![2]);
        let s = rmse[0].unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(corr[0].unwrap().mean, 0.5);
        assert!(rmse[1].is_none());
    }

    #[test]
    fn grid_validation() {
        let x = ndarray::Array2::<f64>::zeros((10, 2));
        let y = Array1::<f64>::zeros(10);
        let cfg = CsmrConfig::default();
        assert!(select_k_bic(x.view(), y.view(), &[], &cfg, 0).is_err());
        assert!(select_k_cv(x.view(), y.view(), &[0], 5, 1, &cfg, 0).is_err());
        assert!(matches!(
            select_k_cv(x.view(), y.view(), &[1], 5, 1, &cfg, 0),
            Err(Error::InsufficientData(_))
        ));
    }
}
