use csmr::mixture::{fit_csmr, Component, CsmrConfig, MixtureModel};
use csmr::select::{
    aggregate_cv, bic_from_parts, bic_score, effective_dof, predict_supervised, select_k_bic, select_k_cv,
    CvCell,
};
use csmr::seed;
use csmr::sim::{generate, SimulationSpec};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn quick_cfg() -> CsmrConfig {
    CsmrConfig {
        folds: 5,
        n_lambda: 30,
        ..CsmrConfig::default()
    }
}

fn intercept_model(means: &[f64], weights: &[f64], var: f64) -> MixtureModel {
    MixtureModel::new(
        means
            .iter()
            .zip(weights)
            .map(|(&m, &w)| Component {
                weight: w,
                intercept: m,
                coefficients: Array1::zeros(1),
                variance: var,
                lambda: 0.0,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn supervised_prediction_picks_nearer_component() {
    let m = intercept_model(&[0.0, 10.0], &[0.5, 0.5], 1.0);
    let x = array![0.0];
    assert_eq!(predict_supervised(&m, x.view(), 9.0), (1, 10.0));
    assert_eq!(predict_supervised(&m, x.view(), 5.0), (0, 0.0));
    let single = intercept_model(&[3.0], &[1.0], 2.0);
    assert_eq!(predict_supervised(&single, x.view(), -100.0), (0, 3.0));
}

prop_compose! {
    fn model_and_point()(k in 1usize..5, s in any::<u64>()) -> (MixtureModel, Array1<f64>, f64) {
        let mut rng = seed::rng(s);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let comps = raw.iter().map(|w| Component {
            weight: w / total,
            intercept: rng.random_range(-5.0..5.0),
            coefficients: Array1::from_shape_simple_fn(2, || rng.random_range(-2.0..2.0)),
            variance: rng.random_range(0.2..3.0),
            lambda: 0.0,
        }).collect();
        let x = Array1::from_shape_simple_fn(2, || Distribution::<f64>::sample(&StandardNormal, &mut rng));
        (MixtureModel::new(comps).unwrap(), x, rng.random_range(-8.0..8.0))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn supervised_component_is_argmax_under_monotone_transforms((m, x, y) in model_and_point()) {
        let dens: Vec<f64> = m.components.iter().map(|c| {
            let r = y - c.mean(x.view());
            c.weight * (-r * r / (2.0 * c.variance)).exp() / (2.0 * std::f64::consts::PI * c.variance).sqrt()
        }).collect();
        let argmax = |v: &[f64]| (1..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        let (k0, yhat) = predict_supervised(&m, x.view(), y);
        prop_assume!(dens.iter().all(|&d| d > 1e-300));
        // near ties are decided by rounding, not by the rule under test
        let mut sorted = dens.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted.len() == 1 || sorted[0] > sorted[1] * (1.0 + 1e-9));
        for f in [f64::ln, f64::sqrt, f64::cbrt, |d: f64| -1.0 / d] {
            let t: Vec<f64> = dens.iter().map(|&d| f(d)).collect();
            prop_assert_eq!(k0, argmax(&t));
        }
        prop_assert_eq!(yhat, m.components[k0].mean(x.view()));
    }

    #[test]
    fn bic_grows_by_log_n_per_parameter(lpc in -1e4f64..0.0, n in 2usize..10_000, d in 0usize..500) {
        let step = bic_from_parts(lpc, n, d + 1) - bic_from_parts(lpc, n, d);
        prop_assert!((step - (n as f64).ln()).abs() < 1e-9 * (1.0 + lpc.abs()));
        prop_assert_eq!(bic_from_parts(lpc, n, d), -2.0 * lpc + (n as f64).ln() * d as f64);
    }
}

#[test]
fn bic_hand_formula() {
    assert!((bic_from_parts(-100.0, 100, 8) - (200.0 + 100f64.ln() * 8.0)).abs() < 1e-12);
    let d = generate(&SimulationSpec { n: 160, p: 12, m0: 3, seed: 4, ..SimulationSpec::default() }).unwrap();
    let fit = fit_csmr(d.x.view(), d.y.view(), 2, &quick_cfg().with_seed(2)).unwrap();
    let nnz: usize = fit.model.components.iter().map(|c| c.coefficients.iter().filter(|&&b| b != 0.0).count()).sum();
    assert_eq!(effective_dof(&fit.model), 2 + 1 + nnz);
    let mut lpc = 0.0;
    for (i, &z) in fit.partition.assignments.iter().enumerate() {
        let c = &fit.model.components[z];
        let r = d.y[i] - c.mean(d.x.row(i));
        lpc += c.weight.ln() - 0.5 * (2.0 * std::f64::consts::PI * c.variance).ln() - r * r / (2.0 * c.variance);
    }
    for c in &fit.model.components {
        lpc -= c.weight * c.lambda * c.l1_norm();
    }
    let expect = -2.0 * lpc + (160f64).ln() * (3 + nnz) as f64;
    let got = bic_score(&fit, d.x.view(), d.y.view()).unwrap();
    assert!((got - expect).abs() < 1e-8 * expect.abs());
}

#[test]
fn singleton_grids() {
    let d = generate(&SimulationSpec { n: 160, p: 12, m0: 3, seed: 6, ..SimulationSpec::default() }).unwrap();
    let r = select_k_bic(d.x.view(), d.y.view(), &[3], &quick_cfg(), 1).unwrap();
    assert_eq!(r.chosen_k, 3);
    let r = select_k_bic(d.x.view(), d.y.view(), &[1], &quick_cfg(), 1).unwrap();
    assert_eq!(r.chosen_k, 1);
    assert_eq!(r.bic.unwrap().len(), 1);
}

#[test]
fn noiseless_single_regime_prefers_one_component() {
    let mut rng = seed::rng(90);
    let x = Array2::from_shape_simple_fn((200, 8), || Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let y = x.column(0).to_owned() * 3.0 - x.column(4).to_owned() * 2.0 + 1.0;
    let r = select_k_bic(x.view(), y.view(), &[1, 2], &quick_cfg(), 3).unwrap();
    assert_eq!(r.bic.as_ref().unwrap().len(), 2);
    assert_eq!(r.chosen_k, 1, "{:?}", r.bic);
}

#[test]
fn cv_report_is_reproducible_from_cells() {
    let d = generate(&SimulationSpec { n: 200, p: 10, m0: 3, seed: 12, ..SimulationSpec::default() }).unwrap();
    let cfg = CsmrConfig { min_cluster_size: Some(10), ..quick_cfg() };
    let r = select_k_cv(d.x.view(), d.y.view(), &[1, 2], 4, 2, &cfg, 5).unwrap();
    assert_eq!(r.cells.len(), 2 * 2 * 4);
    let again = select_k_cv(d.x.view(), d.y.view(), &[1, 2], 4, 2, &cfg, 5).unwrap();
    assert_eq!(r, again);

    let stored = serde_json::to_string(&r.cells).unwrap();
    let cells: Vec<CvCell> = serde_json::from_str(&stored).unwrap();
    let (rmse, corr, excluded) = aggregate_cv(&r.candidates, &cells);
    assert_eq!(Some(rmse), r.cv_rmse);
    assert_eq!(Some(corr), r.cv_correlation);
    assert_eq!(excluded, r.excluded);
}
