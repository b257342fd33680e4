//! Simulation benchmark: every (case, repetition) cell generates data, fits
//! the mixture with the true K plus single-model lasso and ridge baselines,
//! and scores them against the truth.
//!
//! Repetition `r` draws its data from seed `derive(seed, [r])` whatever the
//! case, so cases differing in one parameter are compared on common random
//! numbers. Timings live apart from the metric rows, which are
//! deterministic.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{self, correlation, rmse};
use crate::mixture::{fit_csmr, CsmrConfig};
use crate::regress::{cv_lasso, cv_ridge, CvConfig, LinearFit};
use crate::seed;
use crate::sim::{self, SimulatedData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Csmr,
    Lasso,
    Ridge,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Csmr => "csmr",
            Method::Lasso => "lasso",
            Method::Ridge => "ridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// 1-based case numbers.
    pub cases: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub csmr: CsmrConfig,
    pub baselines: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            cases: (1..=12).collect(),
            reps: 20,
            seed: 0,
            csmr: CsmrConfig::default(),
            baselines: true,
        }
    }
}

/// One method on one (case, repetition) cell. Metrics are `None` when the
/// fit failed or the metric does not apply (RI for baselines, selection
/// rates for ridge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub case: usize,
    pub rep: usize,
    pub method: Method,
    pub status: String,
    pub correlation: Option<f64>,
    pub rmse: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub rand_index: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    #[serde(skip)]
    pub seconds: f64,
}

impl BenchRow {
    fn new(case: usize, rep: usize, method: Method) -> Self {
        BenchRow {
            case,
            rep,
            method,
            status: "ok".into(),
            correlation: None,
            rmse: None,
            tpr: None,
            tnr: None,
            rand_index: None,
            iterations: None,
            converged: None,
            seconds: 0.0,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn fail(mut self, e: impl std::fmt::Display) -> Self {
        self.status = format!("error: {e}");
        self
    }
}

pub fn data_seed(seed: u64, rep: usize) -> u64 {
    seed::derive(seed, &[rep as u64])
}

pub fn fit_seed(seed: u64, rep: usize) -> u64 {
    seed::derive(seed, &[rep as u64, 1])
}

fn csmr_row(case: usize, rep: usize, d: &SimulatedData, cfg: &BenchConfig) -> BenchRow {
    let row = BenchRow::new(case, rep, Method::Csmr);
    let fit_cfg = cfg.csmr.clone().with_seed(fit_seed(cfg.seed, rep));
    let start = Instant::now();
    let fit = fit_csmr(d.x.view(), d.y.view(), d.spec.k, &fit_cfg);
    let seconds = start.elapsed().as_secs_f64();
    let fit = match fit {
        Ok(f) => f,
        Err(e) => return BenchRow { seconds, ..row.fail(e) },
    };
    let report = metrics::evaluate(
        &fit.model,
        &fit.partition,
        d.x.view(),
        d.y.view(),
        &d.z_true,
        &d.supports_true,
    );
    match report {
        Ok(r) => BenchRow {
            correlation: Some(r.correlation),
            rmse: Some(r.rmse),
            tpr: Some(r.tpr),
            tnr: Some(r.tnr),
            rand_index: Some(r.rand_index),
            iterations: Some(fit.iterations),
            converged: Some(fit.converged),
            seconds,
            ..row
        },
        Err(e) => BenchRow { seconds, ..row.fail(e) },
    }
}

fn single_model_row(
    case: usize,
    rep: usize,
    method: Method,
    d: &SimulatedData,
    fit: Result<LinearFit>,
    seconds: f64,
) -> BenchRow {
    let row = BenchRow { seconds, ..BenchRow::new(case, rep, method) };
    let fit = match fit {
        Ok(f) => f,
        Err(e) => return row.fail(e),
    };
    let y_hat = fit.predict(d.x.view());
    let (cor, err) = match (correlation(d.y.view(), y_hat.view()), rmse(d.y.view(), y_hat.view())) {
        (Ok(c), Ok(r)) => (c, r),
        (Err(e), _) | (_, Err(e)) => return row.fail(e),
    };
    // one shared support stands in for every true component
    let rates = (method == Method::Lasso).then(|| {
        let k = d.spec.k;
        let identity: Vec<usize> = (0..k).collect();
        metrics::selection_rates(&vec![fit.support(); k], &d.supports_true, &identity, d.spec.p)
    });
    let (tpr, tnr) = match rates {
        Some(Ok((tpr, tnr))) => (Some(tpr), Some(tnr)),
        Some(Err(e)) => return row.fail(e),
        None => (None, None),
    };
    BenchRow {
        correlation: Some(cor),
        rmse: Some(err),
        tpr,
        tnr,
        ..row
    }
}

/// All rows of one (case, repetition) cell, CSMR first.
pub fn run_cell(case: usize, rep: usize, cfg: &BenchConfig) -> Vec<BenchRow> {
    let spec = match sim::case_spec(case) {
        Ok(s) => s.with_seed(data_seed(cfg.seed, rep)),
        Err(e) => return vec![BenchRow::new(case, rep, Method::Csmr).fail(e)],
    };
    let d = match sim::generate(&spec) {
        Ok(d) => d,
        Err(e) => return vec![BenchRow::new(case, rep, Method::Csmr).fail(e)],
    };
    let mut rows = vec![csmr_row(case, rep, &d, cfg)];
    if cfg.baselines {
        let cv = CvConfig {
            folds: cfg.csmr.folds,
            n_lambda: cfg.csmr.n_lambda,
            seed: fit_seed(cfg.seed, rep),
            rule: cfg.csmr.lambda_rule,
        };
        let start = Instant::now();
        let lasso = cv_lasso(d.x.view(), d.y.view(), &cv).map(|c| c.fit);
        rows.push(single_model_row(case, rep, Method::Lasso, &d, lasso, start.elapsed().as_secs_f64()));
        let start = Instant::now();
        let ridge = cv_ridge(d.x.view(), d.y.view(), &cv).map(|c| c.fit);
        rows.push(single_model_row(case, rep, Method::Ridge, &d, ridge, start.elapsed().as_secs_f64()));
    }
    rows
}

/// Runs every (case, repetition) cell; rows come back in (case, rep,
/// method) order regardless of scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Vec<BenchRow> {
    let cells: Vec<(usize, usize)> = cfg
        .cases
        .iter()
        .flat_map(|&c| (0..cfg.reps).map(move |r| (c, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(case, rep)| run_cell(case, rep, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Per (case, method) means over successful rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub case: usize,
    pub method: Method,
    pub n_ok: usize,
    pub n_total: usize,
    pub correlation: Option<f64>,
    pub rmse: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub rand_index: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(rows: &[BenchRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(usize, Method)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.case, r.method)) {
            keys.push((r.case, r.method));
        }
    }
    keys.into_iter()
        .map(|(case, method)| {
            let all: Vec<&BenchRow> = rows.iter().filter(|r| r.case == case && r.method == method).collect();
            let ok: Vec<&BenchRow> = all.iter().copied().filter(|r| r.ok()).collect();
            AggregateRow {
                case,
                method,
                n_ok: ok.len(),
                n_total: all.len(),
                correlation: mean_of(ok.iter().map(|r| r.correlation)),
                rmse: mean_of(ok.iter().map(|r| r.rmse)),
                tpr: mean_of(ok.iter().map(|r| r.tpr)),
                tnr: mean_of(ok.iter().map(|r| r.tnr)),
                rand_index: mean_of(ok.iter().map(|r| r.rand_index)),
            }
        })
        .collect()
}

/// Fraction of rows with status `ok`.
pub fn success_rate(rows: &[BenchRow]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    rows.iter().filter(|r| r.ok()).count() as f64 / rows.len() as f64
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

pub fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| crate::Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub case: usize,
    pub rep: usize,
    pub method: Method,
    pub seconds: f64,
}

pub fn timings(rows: &[BenchRow]) -> Vec<TimingRow> {
    rows.iter()
        .map(|r| TimingRow {
            case: r.case,
            rep: r.rep,
            method: r.method,
            seconds: r.seconds,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(case: usize, method: Method, cor: Option<f64>) -> BenchRow {
        let mut r = BenchRow::new(case, 0, method);
        r.correlation = cor;
        if cor.is_none() {
            r = r.fail("x");
        }
        r
    }

    #[test]
    fn aggregation_skips_failures() {
        let rows = vec![
            row(1, Method::Csmr, Some(0.5)),
            row(1, Method::Csmr, Some(1.0)),
            row(1, Method::Csmr, None),
            row(1, Method::Lasso, Some(0.2)),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].n_ok, agg[0].n_total), (2, 3));
        assert_eq!(agg[0].correlation, Some(0.75));
        assert_eq!(agg[1].method, Method::Lasso);
        assert!((success_rate(&rows) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn csv_leaves_missing_metrics_empty() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row(2, Method::Ridge, Some(0.5))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "case,rep,method,status,correlation,rmse,tpr,tnr,rand_index,iterations,converged"
        );
        assert_eq!(lines.next().unwrap(), "2,0,ridge,ok,0.5,,,,,,");
    }

    #[test]
    fn small_cell_runs() {
        let cfg = BenchConfig {
            cases: vec![1],
            reps: 1,
            seed: 3,
            ..Default::default()
        };
        let rows = run_cell(1, 0, &cfg);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].method, Method::Csmr);
        assert!(rows[2].tpr.is_none() && rows[2].rand_index.is_none());
        assert!(rows[1].tpr.is_some() && rows[1].rand_index.is_none());
        assert!(run_cell(13, 0, &cfg)[0].status.starts_with("error"));
    }
}
