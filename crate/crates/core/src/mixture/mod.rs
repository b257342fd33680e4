//! Finite mixtures of Gaussian linear regressions.
//!
//! Component `k` models `y = b0_k + x' beta_k + N(0, sigma2_k)` and is drawn
//! with probability `weight_k`. This module holds the model types and the
//! likelihood, E-step and C-step primitives; [`em`] has the classical soft
//! EM and the support-restricted refit, [`csmr`] the classification-EM
//! driver.

pub mod csmr;
pub mod em;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;

pub use csmr::{
    fit_cem_fixed, fit_csmr, init_model, m_step_csmr, CsmrConfig, FixedCemConfig,
};
pub use em::{fit_fmgr_em, refit, EmConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Tolerance on `sum_k weight_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// `log N(y; mean, var)`.
pub fn log_normal_density(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// `1e-8 * var(y)`, the lower bound placed on component variances.
pub fn variance_floor(y: ArrayView1<f64>) -> f64 {
    let v = crate::linalg::variance(y);
    if v > 0.0 {
        1e-8 * v
    } else {
        f64::MIN_POSITIVE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub variance: f64,
    /// Lasso penalty selected for this component; 0 when untuned.
    pub lambda: f64,
}

impl Component {
    pub fn mean(&self, x: ArrayView1<f64>) -> f64 {
        self.intercept + x.dot(&self.coefficients)
    }

    pub fn support(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<Component>,
}

impl MixtureModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let m = Self { components };
        m.validate()?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn p(&self) -> usize {
        self.components
            .first()
            .map_or(0, |c| c.coefficients.len())
    }

    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.components.iter().map(Component::support).collect()
    }

    /// Checks the weight simplex, positive variances and equal coefficient
    /// lengths.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let p = self.p();
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if c.coefficients.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "component {k} has {} coefficients, expected {p}",
                    c.coefficients.len()
                )));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::InvalidArgument(format!("component {k} weight {}", c.weight)));
            }
            if !(c.variance > 0.0) || !c.variance.is_finite() {
                return Err(Error::DegenerateDensity(format!(
                    "component {k} variance {}",
                    c.variance
                )));
            }
            if !(c.lambda >= 0.0) {
                return Err(Error::InvalidArgument(format!("component {k} lambda {}", c.lambda)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        Ok(())
    }

    fn check_data(&self, x: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<()> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} columns but the model has {} coefficients",
                x.ncols(),
                self.p()
            )));
        }
        Ok(())
    }

    /// `log weight_k + log N(y_i; mean_ik, sigma2_k)` for every sample and
    /// component.
    pub fn log_joint(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_data(&x, &y)?;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.variance > 0.0) || !c.variance.is_finite() {
                return Err(Error::DegenerateDensity(format!(
                    "component {k} variance {}",
                    c.variance
                )));
            }
        }
        let n = y.len();
        let mut out = Array2::zeros((n, self.k()));
        for (k, c) in self.components.iter().enumerate() {
            let means = x.dot(&c.coefficients) + c.intercept;
            let log_w = c.weight.ln();
            for i in 0..n {
                out[[i, k]] = log_w + log_normal_density(y[i], means[i], c.variance);
            }
        }
        Ok(out)
    }
}

/// Responsibilities `p_ik`, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub probs: Array2<f64>,
}

/// Hard assignment of samples to components (0-based labels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
}

impl Partition {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        let mut counts = vec![0; k];
        for &z in &assignments {
            if z >= k {
                return Err(Error::InvalidArgument(format!("label {z} outside 0..{k}")));
            }
            counts[z] += 1;
        }
        Ok(Self {
            assignments,
            counts,
        })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &z)| z == k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Output of a mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: MixtureModel,
    pub partition: Partition,
    pub posterior: Posterior,
    /// Objective value after every iteration: the observed log-likelihood
    /// for soft EM, the penalized complete log-likelihood for CEM fits.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Observed-data log-likelihood `sum_i log sum_k pi_k N(y_i; ., sigma2_k)`.
pub fn log_likelihood(model: &MixtureModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let lj = model.log_joint(x, y)?;
    Ok(lj
        .axis_iter(Axis(0))
        .map(|row| log_sum_exp(row.as_slice().unwrap()))
        .sum())
}

/// `sum_k pi_k lambda_k ||beta_k||_1`.
pub fn l1_penalty(model: &MixtureModel) -> f64 {
    model
        .components
        .iter()
        .map(|c| c.weight * c.lambda * c.l1_norm())
        .sum()
}

/// Penalized complete-data log-likelihood of a hard partition:
/// `sum_i [log pi_{z_i} + log N(y_i; ., sigma2_{z_i})] - sum_k pi_k lambda_k ||beta_k||_1`.
pub fn penalized_complete_ll(
    model: &MixtureModel,
    partition: &Partition,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    model.check_data(&x, &y)?;
    if partition.assignments.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} samples, data has {}",
            partition.assignments.len(),
            y.len()
        )));
    }
    if partition.k() != model.k() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} components, model has {}",
            partition.k(),
            model.k()
        )));
    }
    let mut ll = 0.0;
    for (i, &z) in partition.assignments.iter().enumerate() {
        let c = &model.components[z];
        ll += c.weight.ln() + log_normal_density(y[i], c.mean(x.row(i)), c.variance);
    }
    Ok(ll - l1_penalty(model))
}

pub(crate) fn posterior_from_log_joint(lj: &Array2<f64>) -> Posterior {
    let mut probs = lj.clone();
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    Posterior { probs }
}

/// Responsibilities computed in log space.
pub fn e_step(model: &MixtureModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Posterior> {
    let lj = model.log_joint(x, y)?;
    Ok(posterior_from_log_joint(&lj))
}

/// Assigns every sample to its most probable component; ties go to the
/// smallest index.
pub fn c_step(posterior: &Posterior) -> Partition {
    let k = posterior.probs.ncols();
    let assignments = posterior
        .probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Partition::new(assignments, k).expect("argmax labels are in range")
}
