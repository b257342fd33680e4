//! Classification-EM fitting of sparse mixtures of regressions.
//!
//! Each iteration computes responsibilities (E-step), assigns every sample
//! to its most probable component (C-step), fits a cross-validated lasso
//! inside each cluster (M-step), and finally refits the mixture by soft EM
//! using only the variables each component selected.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::em::{model_from_posterior, renormalize, EmConfig};
use super::{
    c_step, e_step, fit_fmgr_em, penalized_complete_ll, refit, variance_floor, Component,
    FitResult, MixtureModel, Partition, Posterior,
};
use crate::error::{Error, Result};
use crate::linalg::{pearson, variance};
use crate::regress::{cv_lasso_rows, lasso_fit_rows, CvConfig, LambdaRule, LinearFit, PenaltyScale};
use crate::seed;

/// Small-component repairs tolerated before a fit restarts from a new seed.
const MAX_REBALANCE_EVENTS: usize = 3;

/// Recent partitions remembered for cycle detection.
const CYCLE_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsmrConfig {
    /// Cross-validation folds for the per-component lasso.
    pub folds: usize,
    /// Penalty grid size for the per-component lasso.
    pub n_lambda: usize,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    pub max_iter: usize,
    pub tol_em: f64,
    /// Columns used by the initial low-dimensional EM; `None` picks
    /// `min(P, max(10, 3K))`.
    pub n_top: Option<usize>,
    pub seed: u64,
    /// `None` means `max(10, folds)`.
    pub min_cluster_size: Option<usize>,
    /// Iteration cap of the support-restricted EM refit.
    pub refit_iters: usize,
    pub n_restarts: usize,
    /// Iteration cap of the initial low-dimensional EM.
    pub init_iters: usize,
    /// Random starts tried by the initializer; the best log-likelihood wins.
    pub init_starts: usize,
    /// Disable to run the loop without the refit step.
    pub refit: bool,
}

impl Default for CsmrConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambda: 100,
            lambda_rule: LambdaRule::Min,
            max_iter: 100,
            tol_em: 1e-6,
            n_top: None,
            seed: 0,
            min_cluster_size: None,
            refit_iters: 20,
            n_restarts: 5,
            init_iters: 200,
            init_starts: 1,
            refit: true,
        }
    }
}

impl CsmrConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn min_cluster_size(&self) -> usize {
        self.min_cluster_size.unwrap_or(self.folds.max(10))
    }

    /// Default or configured initialization width, clamped to what the data
    /// can support.
    pub fn n_top(&self, n: usize, p: usize, k: usize) -> usize {
        let cap = p.min(n / (2 * k)).max(1);
        self.n_top.unwrap_or(p.min((3 * k).max(10))).min(cap)
    }

    /// Fold seed used by the M-step lasso of component `k`.
    pub fn cv_seed(&self, k: usize) -> u64 {
        seed::derive(self.seed, &[0xC5, k as u64])
    }

    fn cv_config(&self, k: usize) -> CvConfig {
        CvConfig {
            folds: self.folds,
            n_lambda: self.n_lambda,
            seed: self.cv_seed(k),
            rule: self.lambda_rule,
        }
    }
}

/// Random soft start: each row of responsibilities is a Dirichlet(1) draw.
fn random_posterior(n: usize, k: usize, rng: &mut impl Rng) -> Posterior {
    let mut probs = Array2::from_shape_fn((n, k), |_| rng.sample::<f64, _>(Exp1));
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row /= s;
    }
    Posterior { probs }
}

/// Columns ranked by absolute Pearson correlation with `y`; ties keep the
/// smaller index. Constant columns rank last.
pub fn rank_by_correlation(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Vec<usize> {
    let score: Vec<f64> = (0..x.ncols())
        .map(|j| pearson(x.column(j), y).map_or(-1.0, f64::abs))
        .collect();
    let mut order: Vec<usize> = (0..x.ncols()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order
}

/// Initial mixture: soft EM on the `n_top` columns most correlated with the
/// response, embedded back into full-length coefficient vectors.
///
/// Each of `cfg.init_starts` random soft starts is run through EM; starts
/// that collapse a component are retried with fresh seeds up to
/// `cfg.n_restarts` times in total.
pub fn init_model(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    k: usize,
    n_top: usize,
    seed: u64,
    cfg: &CsmrConfig,
) -> Result<MixtureModel> {
    let n = y.len();
    let p = x.ncols();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!("X has {} rows, y has {n}", x.nrows())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if n_top == 0 || n_top > p || n_top > n / (2 * k) {
        return Err(Error::InvalidArgument(format!(
            "n_top = {n_top} outside 1..=min(P, N/(2K)) = {}",
            p.min(n / (2 * k))
        )));
    }
    if variance(y) == 0.0 {
        return Err(Error::ConstantResponse);
    }
    let mut top: Vec<usize> = rank_by_correlation(x, y)[..n_top].to_vec();
    top.sort_unstable();
    let sub = x.select(Axis(1), &top);
    let floor = variance_floor(y);
    let em_cfg = EmConfig {
        max_iter: cfg.init_iters,
        tol: cfg.tol_em,
        variance_floor: floor,
    };

    let mut best: Option<(f64, MixtureModel)> = None;
    let mut attempts = 0;
    let mut successes = 0;
    while successes < cfg.init_starts.max(1) && attempts < cfg.n_restarts.max(1) {
        let mut rng = seed::rng(seed::derive(seed, &[0x1417, attempts as u64]));
        attempts += 1;
        let post = random_posterior(n, k, &mut rng);
        let start = match model_from_posterior(sub.view(), y, &post, floor) {
            Ok(m) => m,
            Err(Error::DegenerateComponent { .. }) => continue,
            Err(e) => return Err(e),
        };
        match fit_fmgr_em(sub.view(), y, &start, &em_cfg) {
            Ok(fit) => {
                successes += 1;
                let ll = fit.trace.last().copied().unwrap_or(f64::NEG_INFINITY);
                if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                    best = Some((ll, fit.model));
                }
            }
            Err(Error::DegenerateComponent { component, mass }) => {
                log::debug!("init attempt {attempts}: component {component} collapsed ({mass:.2})");
            }
            Err(e) => return Err(e),
        }
    }
    let Some((_, low)) = best else {
        return Err(Error::InitFailure { attempts });
    };
    let components = low
        .components
        .into_iter()
        .map(|c| {
            let mut full = Array1::zeros(p);
            for (&j, &b) in top.iter().zip(c.coefficients.iter()) {
                full[j] = b;
            }
            Component {
                coefficients: full,
                lambda: 0.0,
                ..c
            }
        })
        .collect();
    Ok(MixtureModel { components })
}

/// M-step of the classification EM: weights are cluster proportions and each
/// component is a cross-validated lasso on its own cluster, with variance
/// `RSS_k / n_k` (floored).
pub fn m_step_csmr(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    partition: &Partition,
    cfg: &CsmrConfig,
) -> Result<MixtureModel> {
    let n = y.len();
    if partition.assignments.len() != n || x.nrows() != n {
        return Err(Error::DimensionMismatch("partition, X and y disagree in length".into()));
    }
    let min = cfg.min_cluster_size();
    if let Some((k, &size)) = partition.counts.iter().enumerate().find(|(_, &c)| c < min) {
        return Err(Error::EmptyComponent { component: k, size, min });
    }
    let floor = variance_floor(y);
    let mut components = Vec::with_capacity(partition.k());
    for k in 0..partition.k() {
        let rows = partition.members(k);
        let cv = cv_lasso_rows(x, y, &rows, &cfg.cv_config(k))?;
        components.push(Component {
            weight: rows.len() as f64 / n as f64,
            intercept: cv.fit.intercept,
            coefficients: cv.fit.coefficients,
            variance: cv.fit.residual_variance.max(floor),
            lambda: cv.lambda,
        });
    }
    Ok(MixtureModel { components })
}

/// Moves the upper half (by residual) of the largest cluster into every
/// cluster smaller than `min`. Returns the number of repairs made, or `None`
/// when the budget `remaining` is exhausted.
fn rebalance(
    partition: &mut Partition,
    model: &MixtureModel,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    min: usize,
    mut remaining: usize,
) -> Option<usize> {
    let mut events = 0;
    while let Some(small) = (0..partition.k()).find(|&k| partition.counts[k] < min) {
        if remaining == 0 {
            return None;
        }
        remaining -= 1;
        events += 1;
        let large = (0..partition.k())
            .max_by(|&a, &b| partition.counts[a].cmp(&partition.counts[b]).then(b.cmp(&a)))
            .unwrap();
        let comp = &model.components[large];
        let mut members: Vec<(f64, usize)> = partition
            .members(large)
            .into_iter()
            .map(|i| (y[i] - comp.mean(x.row(i)), i))
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let half = members.len() / 2;
        for &(_, i) in &members[members.len() - half..] {
            partition.assignments[i] = small;
        }
        *partition = Partition::new(std::mem::take(&mut partition.assignments), partition.k())
            .expect("labels stay in range");
        log::debug!("split component {large} to refill component {small}");
    }
    Some(events)
}

enum LoopOutcome {
    Done(FitResult),
    Restart,
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

fn csmr_loop(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    mut model: MixtureModel,
    cfg: &CsmrConfig,
) -> Result<LoopOutcome> {
    let min = cfg.min_cluster_size();
    let floor = variance_floor(y);
    let refit_cfg = EmConfig {
        max_iter: cfg.refit_iters,
        tol: cfg.tol_em,
        variance_floor: floor,
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut events = 0;
    let mut history: VecDeque<Vec<usize>> = VecDeque::with_capacity(CYCLE_WINDOW);
    for _ in 0..cfg.max_iter {
        let posterior = e_step(&model, x, y)?;
        let mut partition = c_step(&posterior);
        if history.back() == Some(&partition.assignments) {
            trace.push(penalized_complete_ll(&model, &partition, x, y)?);
            converged = true;
            break;
        }
        if history.contains(&partition.assignments) {
            // the map from partitions to partitions is deterministic, so a
            // revisit means a limit cycle; stop without claiming convergence
            log::debug!("assignments cycle after {} iterations", trace.len());
            break;
        }
        match rebalance(&mut partition, &model, x, y, min, MAX_REBALANCE_EVENTS - events) {
            Some(e) => events += e,
            None => return Ok(LoopOutcome::Restart),
        }
        model = m_step_csmr(x, y, &partition, cfg)?;
        if cfg.refit {
            model = refit(x, y, &model, &model.supports(), &refit_cfg)?;
        }
        let ll = penalized_complete_ll(&model, &partition, x, y)?;
        let settled = trace
            .last()
            .is_some_and(|&prev| relative_change(ll, prev) < cfg.tol_em);
        trace.push(ll);
        if settled {
            converged = true;
            break;
        }
        if history.len() == CYCLE_WINDOW {
            history.pop_front();
        }
        history.push_back(partition.assignments);
    }
    let posterior = e_step(&model, x, y)?;
    let partition = c_step(&posterior);
    Ok(LoopOutcome::Done(FitResult {
        model,
        partition,
        posterior,
        iterations: trace.len(),
        trace,
        converged,
    }))
}

/// Fits a `k`-component sparse mixture of regressions by classification EM
/// with per-component cross-validated lasso and support-restricted refit.
///
/// Iteration stops when the C-step reproduces the previous assignments, when
/// the penalized complete log-likelihood changes by less than `tol_em`
/// relatively, or after `max_iter` iterations. For `k = 1` with the refit
/// disabled the result is the cross-validated lasso on all samples.
pub fn fit_csmr(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    k: usize,
    cfg: &CsmrConfig,
) -> Result<FitResult> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!("X has {} rows, y has {n}", x.nrows())));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let min = cfg.min_cluster_size();
    if min < cfg.folds {
        return Err(Error::InvalidArgument(format!(
            "min_cluster_size {min} is below the fold count {}",
            cfg.folds
        )));
    }
    if n < k * min {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot hold {k} clusters of at least {min}"
        )));
    }
    let n_top = cfg.n_top(n, x.ncols(), k);
    for attempt in 0..cfg.n_restarts.max(1) {
        let init_seed = seed::derive(cfg.seed, &[0x5EED, attempt as u64]);
        let model = match init_model(x, y, k, n_top, init_seed, cfg) {
            Ok(m) => m,
            Err(Error::InitFailure { .. }) => continue,
            Err(e) => return Err(e),
        };
        match csmr_loop(x, y, model, cfg)? {
            LoopOutcome::Done(fit) => return Ok(fit),
            LoopOutcome::Restart => {
                log::debug!("restarting after repeated component starvation (attempt {attempt})")
            }
        }
    }
    Err(Error::InitFailure {
        attempts: cfg.n_restarts.max(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedCemConfig {
    pub max_iter: usize,
    pub variance_floor: f64,
}

/// Weights maximizing `sum_k n_k log pi_k - sum_k pi_k c_k` on the simplex:
/// `pi_k = n_k / (mu + c_k)` with `mu` found by bisection.
fn penalized_weights(counts: &[usize], costs: &[f64]) -> Vec<f64> {
    let n: f64 = counts.iter().sum::<usize>() as f64;
    let total = |mu: f64| -> f64 {
        counts
            .iter()
            .zip(costs)
            .map(|(&c, &cost)| c as f64 / (mu + cost))
            .sum()
    };
    let max_cost = costs.iter().copied().fold(0.0, f64::max);
    let min_active = counts
        .iter()
        .zip(costs)
        .filter(|(&c, _)| c > 0)
        .map(|(_, &cost)| cost)
        .fold(f64::INFINITY, f64::min);
    let mut lo = (n - max_cost).max(-min_active);
    let mut hi = n;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= -min_active || total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs() {
            break;
        }
    }
    let mu = hi;
    let mut w: Vec<f64> = counts
        .iter()
        .zip(costs)
        .map(|(&c, &cost)| c as f64 / (mu + cost))
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Classification EM with the penalties of `start` held fixed and no refit
/// step.
///
/// The M-step is an exact block ascent on the penalized complete
/// log-likelihood: for each cluster, a warm-started lasso on the original
/// coefficient scale with penalty `sigma2_k pi_k lambda_k / n_k`, then the
/// variance `RSS_k / n_k`, then the weights solving the penalized simplex
/// problem. Together with the C-step this makes the trace non-decreasing.
/// Clusters with fewer than 3 samples keep their regression and variance.
pub fn fit_cem_fixed(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    start: &MixtureModel,
    cfg: &FixedCemConfig,
) -> Result<FitResult> {
    start.validate()?;
    let mut model = start.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..cfg.max_iter {
        let posterior = e_step(&model, x, y)?;
        let partition = c_step(&posterior);
        if previous.as_deref() == Some(partition.assignments.as_slice()) {
            trace.push(penalized_complete_ll(&model, &partition, x, y)?);
            converged = true;
            break;
        }
        for (k, c) in model.components.iter_mut().enumerate() {
            let rows = partition.members(k);
            if rows.len() < 3 {
                continue;
            }
            let nk = rows.len() as f64;
            let penalty = c.variance * c.weight * c.lambda / nk;
            let warm = LinearFit {
                intercept: c.intercept,
                coefficients: c.coefficients.clone(),
                residual_variance: c.variance,
                converged: true,
            };
            let fit = lasso_fit_rows(x, y, &rows, penalty, PenaltyScale::Original, Some(&warm))?;
            c.intercept = fit.intercept;
            c.coefficients = fit.coefficients;
            c.variance = fit.residual_variance.max(cfg.variance_floor);
        }
        let costs: Vec<f64> = model.components.iter().map(|c| c.lambda * c.l1_norm()).collect();
        for (c, w) in model
            .components
            .iter_mut()
            .zip(penalized_weights(&partition.counts, &costs))
        {
            c.weight = w;
        }
        renormalize(&mut model.components);
        trace.push(penalized_complete_ll(&model, &partition, x, y)?);
        previous = Some(partition.assignments);
    }
    let posterior = e_step(&model, x, y)?;
    let partition = c_step(&posterior);
    Ok(FitResult {
        model,
        partition,
        posterior,
        iterations: trace.len(),
        trace,
        converged,
    })
}
