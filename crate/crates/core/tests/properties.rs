mod common;

use common::oracles::{gaussian_matrix, gaussian_vector};
use eopr_core::baselines::{dsc_fit, rsc_fit, sc_fit, Method, RscConfig};
use eopr_core::eopr::{self, select_lambda_scored, DEFAULT_LAMBDA_GRID};
use eopr_core::estimator::{fit_method, MethodSpec};
use eopr_core::evaluation::{inject_effect, placebo_run, rmse, sweep, EffectShape};
use eopr_core::panel::NormalizationScheme;
use eopr_core::simulation::{generate_panel, SimulationConfig, WeightMode};
use eopr_core::PanelData;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_panel(seed: u64, n: usize, t: usize, t0: usize) -> PanelData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PanelData::from_parts(gaussian_matrix(&mut rng, n, t), gaussian_vector(&mut rng, t), t0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dsc_ignores_per_unit_offsets(seed in any::<u64>(), shift in -50.0f64..50.0, per_unit in prop::collection::vec(-20.0f64..20.0, 5)) {
        let panel = random_panel(seed, 5, 16, 9);
        let shifted_controls = DMatrix::from_fn(5, 16, |i, t| panel.controls()[(i, t)] + per_unit[i]);
        let shifted = PanelData::from_parts(shifted_controls, panel.treated().add_scalar(shift), 9).unwrap();
        let a = dsc_fit(&panel).unwrap();
        let b = dsc_fit(&shifted).unwrap();
        prop_assert!((&a.weights - &b.weights).amax() <= 1e-8);
        prop_assert!((a.s_hat.add_scalar(shift) - &b.s_hat).amax() <= 1e-7);
    }

    #[test]
    fn sc_weights_stay_on_simplex(seed in any::<u64>(), n in 1usize..15, t in 3usize..30) {
        let t0 = 1 + (seed as usize % (t - 1));
        let panel = random_panel(seed, n, t, t0);
        let w = sc_fit(&panel).unwrap().weights;
        prop_assert!((w.sum() - 1.0).abs() <= 1e-8);
        prop_assert!(w.iter().all(|&x| x >= -1e-10));
    }

    #[test]
    fn rsc_least_squares_residual_is_orthogonal(seed in any::<u64>(), n in 2usize..8, t in 10usize..30) {
        let t0 = t - 2;
        let panel = random_panel(seed, n, t, t0);
        let cfg = RscConfig { singular_value_cutoff_ratio: 0.0, ridge: 0.0 };
        let est = rsc_fit(&panel, cfg).unwrap();
        let pre = panel.controls().columns(0, t0);
        let resid = panel.treated().rows(0, t0) - est.s_hat.rows(0, t0);
        let scale = pre.amax() * panel.treated().rows(0, t0).amax();
        prop_assert!((pre * resid).amax() <= 1e-8 * scale.max(1.0));
    }
}

#[test]
fn selected_lambda_is_best_on_exhaustive_grid() {
    for seed in 0..8u64 {
        let panel = generate_panel(&SimulationConfig::new(12, 60, 30, 200 + seed)).unwrap().panel;
        let sel = select_lambda_scored(&panel, &DEFAULT_LAMBDA_GRID, 0.2).unwrap();
        let t_fit = (30.0f64 * 0.8).ceil() as usize;
        let sub = panel.truncated(30, t_fit).unwrap();
        let mut best = f64::INFINITY;
        for &lambda in &DEFAULT_LAMBDA_GRID {
            let fit = eopr::fit(&sub, lambda).unwrap();
            let r = rmse(sub.treated().as_slice(), fit.estimate.s_hat.as_slice(), t_fit..30).unwrap();
            let reported = sel.scores.iter().find(|s| s.lambda == lambda).unwrap().holdout_rmse.unwrap();
            assert!((r - reported).abs() <= 1e-10 * r.max(1.0));
            best = best.min(r);
        }
        let chosen = sel.scores.iter().find(|s| s.lambda == sel.lambda).unwrap().holdout_rmse.unwrap();
        assert!(chosen <= best * (1.0 + 1e-12));
    }
}

#[test]
fn placebo_ranks_ignore_control_order() {
    let sim = generate_panel(&SimulationConfig::new(9, 40, 20, 77)).unwrap();
    let panel = inject_effect(&sim.panel, EffectShape::Step, 2.0).unwrap();
    let mut order: Vec<usize> = (0..panel.n_controls()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let controls = DMatrix::from_fn(order.len(), panel.t_total(), |i, t| panel.controls()[(order[i], t)]);
    let mut labels = vec![panel.treated_label().to_string()];
    labels.extend(order.iter().map(|&i| panel.unit_labels()[i + 1].clone()));
    let shuffled = PanelData::new(controls, panel.treated().clone(), panel.t0(), labels, panel.time_labels().to_vec()).unwrap();

    let spec = MethodSpec::default_for(Method::Eopr);
    let a = placebo_run(&panel, &spec).unwrap();
    let b = placebo_run(&shuffled, &spec).unwrap();
    assert_eq!(a.treated_rank, b.treated_rank);
    for ea in &a.entries {
        let eb = b.entries.iter().find(|e| e.unit == ea.unit).unwrap();
        let (x, y) = (ea.post_gap_rmse.unwrap(), eb.post_gap_rmse.unwrap());
        assert!((x - y).abs() <= 1e-8 * x.max(1.0), "{}: {x} vs {y}", ea.unit);
    }
}

#[test]
fn injected_step_is_recovered_on_average() {
    let magnitude = 3.0;
    let mut means = Vec::new();
    for seed in 0..20u64 {
        let sim = generate_panel(&SimulationConfig::new(15, 60, 30, 500 + seed)).unwrap();
        let panel = inject_effect(&sim.panel, EffectShape::Step, magnitude).unwrap();
        let fit = eopr::fit(&panel, 1.0).unwrap();
        let tau = eopr::effect_series(&fit.estimate.s_hat, panel.treated(), panel.t0()).unwrap();
        means.push(tau.iter().sum::<f64>() / tau.len() as f64);
    }
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    assert!((avg + magnitude).abs() < 0.5, "average effect {avg}");
}

#[test]
fn doubling_noise_raises_every_post_rmse() {
    let specs: Vec<MethodSpec> = [Method::Eopr, Method::Sc, Method::Dsc, Method::Rsc]
        .into_iter()
        .map(MethodSpec::default_for)
        .collect();
    // t0 well above the donor count keeps RSC's least squares well posed
    let base = SimulationConfig::new(15, 80, 40, 900);
    let loud = SimulationConfig { noise_sigma: 2.0, ..base.clone() };
    let res = sweep(&[base, loud], &specs, 10, NormalizationScheme::None).unwrap();
    for m in 0..specs.len() {
        let (quiet, noisy) = (&res.rows[m], &res.rows[specs.len() + m]);
        assert_eq!(quiet.method, noisy.method);
        assert!(noisy.post_rmse.mean > quiet.post_rmse.mean, "{}", quiet.method);
    }
}

#[test]
fn sweep_is_reproducible() {
    let specs = vec![MethodSpec::default_for(Method::Eopr), MethodSpec::default_for(Method::Sc)];
    let cfg = SimulationConfig::new(10, 40, 10, 31);
    let a = sweep(std::slice::from_ref(&cfg), &specs, 4, NormalizationScheme::TreatedPreMax).unwrap();
    let b = sweep(std::slice::from_ref(&cfg), &specs, 4, NormalizationScheme::TreatedPreMax).unwrap();
    assert_eq!(a, b);
}

#[test]
fn methods_share_the_common_interface() {
    let panel = random_panel(3, 6, 20, 12);
    for m in [Method::Eopr, Method::Sc, Method::Dsc, Method::Rsc] {
        let cf = fit_method(&panel, &MethodSpec::default_for(m)).unwrap();
        assert_eq!(cf.method, m);
        assert_eq!(cf.s_hat.len(), 20);
        assert_eq!(cf.band.is_some(), m == Method::Eopr);
        assert_eq!(cf.lambda.is_some(), m == Method::Eopr);
    }
}

#[test]
fn placebo_rank_is_uniform_without_an_effect() {
    // random simplex weights make the treated unit exchangeable with its donors
    let n = 6;
    let mut counts = vec![0usize; n];
    for seed in 0..200u64 {
        let mut cfg = SimulationConfig::new(n, 30, 15, 10_000 + seed);
        cfg.weight_mode = WeightMode::Dirichlet;
        let sim = generate_panel(&cfg).unwrap();
        let report = placebo_run(&sim.panel, &MethodSpec::default_for(Method::Eopr)).unwrap();
        counts[report.treated_rank - 1] += 1;
    }
    let expected = 200.0 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.99 quantile of chi-square with 5 degrees of freedom
    assert!(chi2 < 15.086, "{counts:?} chi2 {chi2}");
}
