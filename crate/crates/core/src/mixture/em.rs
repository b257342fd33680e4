//! Soft EM for low-dimensional mixtures and the support-restricted refit.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{
    c_step, posterior_from_log_joint, Component, FitResult, MixtureModel, Posterior,
};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::regress::weighted_fit_columns;

/// Ridge penalty used when a weighted least-squares subproblem is singular.
pub const RIDGE_FALLBACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative change in log-likelihood that counts as converged.
    pub tol: f64,
    pub variance_floor: f64,
}

fn observed_ll(lj: &ndarray::Array2<f64>) -> f64 {
    lj.axis_iter(Axis(0))
        .map(|row| log_sum_exp(row.as_slice().unwrap()))
        .sum()
}

/// Closed-form weighted M-step on all columns. Fails with
/// `DegenerateComponent` when a component holds less than `P + 1` units of
/// responsibility or its weighted design is singular.
fn weighted_m_step(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    post: &Posterior,
    floor: f64,
) -> Result<MixtureModel> {
    let n = y.len() as f64;
    let p = x.ncols();
    let cols: Vec<usize> = (0..p).collect();
    let mut components = Vec::with_capacity(post.probs.ncols());
    for (k, w) in post.probs.axis_iter(Axis(1)).enumerate() {
        let mass = w.sum();
        if mass < (p + 1) as f64 {
            return Err(Error::DegenerateComponent { component: k, mass });
        }
        let fit = weighted_fit_columns(x, y, w, &cols, 0.0)
            .map_err(|_| Error::DegenerateComponent { component: k, mass })?;
        components.push(Component {
            weight: mass / n,
            intercept: fit.intercept,
            coefficients: fit.coefficients,
            variance: fit.residual_variance.max(floor),
            lambda: 0.0,
        });
    }
    renormalize(&mut components);
    Ok(MixtureModel { components })
}

pub(crate) fn renormalize(components: &mut [Component]) {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in components.iter_mut() {
        c.weight /= total;
    }
}

/// Builds a model from given responsibilities with one weighted M-step.
pub(crate) fn model_from_posterior(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    post: &Posterior,
    floor: f64,
) -> Result<MixtureModel> {
    weighted_m_step(x, y, post, floor)
}

/// Classical EM for a mixture of Gaussian regressions, started from `start`.
///
/// Alternates the E-step with closed-form weighted least squares until the
/// relative change of the observed log-likelihood drops below `cfg.tol` or
/// `cfg.max_iter` iterations run. The trace holds the log-likelihood of the
/// model produced by each iteration.
pub fn fit_fmgr_em(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    start: &MixtureModel,
    cfg: &EmConfig,
) -> Result<FitResult> {
    start.validate()?;
    let n = y.len();
    let k = start.k();
    let p = x.ncols();
    if n <= k * (p + 2) {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot identify {k} components with {p} predictors"
        )));
    }
    let mut model = start.clone();
    let mut lj = model.log_joint(x, y)?;
    let mut ll_prev = observed_ll(&lj);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let post = posterior_from_log_joint(&lj);
        model = weighted_m_step(x, y, &post, cfg.variance_floor)?;
        lj = model.log_joint(x, y)?;
        let ll = observed_ll(&lj);
        trace.push(ll);
        if (ll - ll_prev).abs() <= cfg.tol * ll_prev.abs() {
            converged = true;
            break;
        }
        ll_prev = ll;
    }
    let posterior = posterior_from_log_joint(&lj);
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

/// Soft EM refit in which component `k` may only use the columns in
/// `supports[k]`; all other coefficients are held at exactly zero.
///
/// Runs at most `cfg.max_iter` iterations from `model`. A singular weighted
/// subproblem falls back to ridge with penalty [`RIDGE_FALLBACK`]; a
/// component holding less than one unit of responsibility keeps its
/// regression and variance and only has its weight updated.
pub fn refit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    model: &MixtureModel,
    supports: &[Vec<usize>],
    cfg: &EmConfig,
) -> Result<MixtureModel> {
    model.validate()?;
    if supports.len() != model.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} supports for {} components",
            supports.len(),
            model.k()
        )));
    }
    let p = x.ncols();
    if let Some(&j) = supports.iter().flatten().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("support index {j} >= {p}")));
    }
    let n = y.len() as f64;
    let mut current = model.clone();
    // Off-support coefficients must be exactly zero even if no iteration runs.
    for (c, s) in current.components.iter_mut().zip(supports) {
        let keep: Vec<f64> = s.iter().map(|&j| c.coefficients[j]).collect();
        c.coefficients.fill(0.0);
        for (&j, v) in s.iter().zip(keep) {
            c.coefficients[j] = v;
        }
    }
    let mut lj = current.log_joint(x, y)?;
    let mut ll_prev = observed_ll(&lj);
    for _ in 0..cfg.max_iter {
        let post = posterior_from_log_joint(&lj);
        let mut next = current.clone();
        for (k, (c, w)) in next
            .components
            .iter_mut()
            .zip(post.probs.axis_iter(Axis(1)))
            .enumerate()
        {
            let mass = w.sum();
            c.weight = mass / n;
            if mass < 1.0 {
                continue;
            }
            let fit = match weighted_fit_columns(x, y, w, &supports[k], 0.0) {
                Ok(f) => f,
                Err(Error::SingularDesign) | Err(Error::InsufficientData(_)) => {
                    weighted_fit_columns(x, y, w, &supports[k], RIDGE_FALLBACK)?
                }
                Err(e) => return Err(e),
            };
            c.intercept = fit.intercept;
            c.coefficients = fit.coefficients;
            c.variance = fit.residual_variance.max(cfg.variance_floor);
        }
        renormalize(&mut next.components);
        current = next;
        lj = current.log_joint(x, y)?;
        let ll = observed_ll(&lj);
        let done = (ll - ll_prev).abs() <= cfg.tol * ll_prev.abs();
        ll_prev = ll;
        if done {
            break;
        }
    }
    Ok(current)
}
