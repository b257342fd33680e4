//! Evaluation metrics against simulated truth: prediction correlation and
//! RMSE, variable-selection TPR/TNR after component matching, and the Rand
//! index of the sample partition.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::mixture::{MixtureModel, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correlation: f64,
    pub rmse: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub rand_index: f64,
    /// `matching[k]` is the true component paired with estimated component `k`.
    pub matching: Vec<usize>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "correlation,rmse,tpr,tnr,rand_index,matching";

    /// One CSV row; the matching is written 1-based and `;`-separated.
    pub fn to_csv_row(&self) -> String {
        let matching: Vec<String> = self.matching.iter().map(|m| (m + 1).to_string()).collect();
        format!(
            "{},{},{},{},{},{}",
            self.correlation,
            self.rmse,
            self.tpr,
            self.tnr,
            self.rand_index,
            matching.join(";")
        )
    }
}

/// `b0_{z_i} + x_i' beta_{z_i}` under the hard assignments.
pub fn in_sample_prediction(
    model: &MixtureModel,
    partition: &Partition,
    x: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    if partition.assignments.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} samples, X has {} rows",
            partition.assignments.len(),
            x.nrows()
        )));
    }
    if x.ncols() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns, model has {}",
            x.ncols(),
            model.p()
        )));
    }
    partition
        .assignments
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            model
                .components
                .get(z)
                .map(|c| c.mean(x.row(i)))
                .ok_or_else(|| Error::InvalidArgument(format!("label {z} has no component")))
        })
        .collect::<Result<Vec<f64>>>()
        .map(Array1::from)
}

fn pairs(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Fraction of sample pairs on which two labelings agree (co-clustered in
/// both or separated in both).
pub fn rand_index(z1: &[usize], z2: &[usize]) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings have lengths {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    let n = z1.len();
    if n < 2 {
        return Err(Error::InsufficientData("rand index needs at least 2 samples".into()));
    }
    let k1 = z1.iter().max().unwrap() + 1;
    let k2 = z2.iter().max().unwrap() + 1;
    let mut table = vec![0usize; k1 * k2];
    let mut rows = vec![0usize; k1];
    let mut cols = vec![0usize; k2];
    for (&a, &b) in z1.iter().zip(z2) {
        table[a * k2 + b] += 1;
        rows[a] += 1;
        cols[b] += 1;
    }
    let same_both: f64 = table.iter().map(|&c| pairs(c)).sum();
    let same_1: f64 = rows.iter().map(|&c| pairs(c)).sum();
    let same_2: f64 = cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    // agreements = same in both + different in both
    let agree = total + 2.0 * same_both - same_1 - same_2;
    Ok(agree / total)
}

/// Contingency counts `table[est][true]`.
fn contingency(est: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "labelings have lengths {} and {}",
            est.len(),
            truth.len()
        )));
    }
    let mut t = vec![vec![0u64; k]; k];
    for (&a, &b) in est.iter().zip(truth) {
        if a >= k || b >= k {
            return Err(Error::InvalidArgument(format!("label outside 0..{k}")));
        }
        t[a][b] += 1;
    }
    Ok(t)
}

/// Bijection from estimated to true components maximizing total overlap of
/// the assignment contingency table. Among optimal bijections the
/// lexicographically smallest is returned.
///
/// Exact subset dynamic programming, `O(K^2 2^K)`; intended for `K <= 20`.
pub fn match_components(est: &[usize], truth: &[usize], k: usize) -> Result<Vec<usize>> {
    if k > 20 {
        return Err(Error::InvalidArgument(format!("matching supports K <= 20, got {k}")));
    }
    let table = contingency(est, truth, k)?;
    let full = 1usize << k;
    // best[mask]: max overlap assigning estimated components popcount(mask)..k
    // to the true components outside mask.
    let mut best = vec![0u64; full];
    for mask in (0..full).rev() {
        let i = mask.count_ones() as usize;
        if i >= k {
            continue;
        }
        best[mask] = (0..k)
            .filter(|&j| mask & (1 << j) == 0)
            .map(|j| table[i][j] + best[mask | (1 << j)])
            .max()
            .unwrap();
    }
    let mut mask = 0usize;
    let mut perm = Vec::with_capacity(k);
    for i in 0..k {
        let j = (0..k)
            .find(|&j| mask & (1 << j) == 0 && table[i][j] + best[mask | (1 << j)] == best[mask])
            .expect("an optimal continuation exists");
        perm.push(j);
        mask |= 1 << j;
    }
    Ok(perm)
}

/// Pooled variable-selection rates over all `K * P` (component, feature)
/// slots after aligning estimated component `k` with true component
/// `matching[k]`.
///
/// Returns `(tpr, tnr)`; `ZeroDenominator` when the truth has no nonzero
/// (or no zero) slots.
pub fn selection_rates(
    est_supports: &[Vec<usize>],
    true_supports: &[Vec<usize>],
    matching: &[usize],
    p: usize,
) -> Result<(f64, f64)> {
    let k = true_supports.len();
    if est_supports.len() != k || matching.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated supports, {} true supports, matching of {}",
            est_supports.len(),
            k,
            matching.len()
        )));
    }
    let mut seen = vec![false; k];
    for &m in matching {
        if m >= k || std::mem::replace(&mut seen[m], true) {
            return Err(Error::InvalidArgument("matching is not a bijection".into()));
        }
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (e, &t) in est_supports.iter().zip(matching) {
        let mut est = vec![false; p];
        let mut truth = vec![false; p];
        for &j in e {
            est[j] = true;
        }
        for &j in &true_supports[t] {
            truth[j] = true;
        }
        for j in 0..p {
            if truth[j] {
                pos += 1;
                tp += usize::from(est[j]);
            } else {
                neg += 1;
                tn += usize::from(!est[j]);
            }
        }
    }
    if pos == 0 {
        return Err(Error::ZeroDenominator("no truly nonzero coefficients".into()));
    }
    if neg == 0 {
        return Err(Error::ZeroDenominator("no truly zero coefficients".into()));
    }
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}

/// Pearson correlation between observed and predicted responses.
pub fn correlation(y: ArrayView1<f64>, y_hat: ArrayView1<f64>) -> Result<f64> {
    check_pair(&y, &y_hat)?;
    pearson(y, y_hat).ok_or_else(|| Error::DegenerateVariance("constant input".into()))
}

pub fn rmse(y: ArrayView1<f64>, y_hat: ArrayView1<f64>) -> Result<f64> {
    check_pair(&y, &y_hat)?;
    let mse = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

fn check_pair(y: &ArrayView1<f64>, y_hat: &ArrayView1<f64>) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 values".into()));
    }
    Ok(())
}

/// All four metrics for a mixture fit against known truth.
pub fn evaluate(
    model: &MixtureModel,
    partition: &Partition,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    true_z: &[usize],
    true_supports: &[Vec<usize>],
) -> Result<EvalReport> {
    let k = model.k();
    if true_supports.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "model has {k} components, truth has {}",
            true_supports.len()
        )));
    }
    let y_hat = in_sample_prediction(model, partition, x)?;
    let matching = match_components(&partition.assignments, true_z, k)?;
    let (tpr, tnr) = selection_rates(&model.supports(), true_supports, &matching, x.ncols())?;
    Ok(EvalReport {
        correlation: correlation(y, y_hat.view())?,
        rmse: rmse(y, y_hat.view())?,
        tpr,
        tnr,
        rand_index: rand_index(&partition.assignments, true_z)?,
        matching,
    })
}
