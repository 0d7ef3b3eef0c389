mod common;

use common::oracles::{coordinate_max, coordinate_min, gaussian_matrix, gaussian_vector, kkt_center};
use eopr_core::eopr::{self, extrapolate_via, learn_ellipsoid, representors, worst_case_band_via, Route};
use eopr_core::simulation::{generate_panel, SimulationConfig};
use eopr_core::PanelData;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn center_matches_kkt_solution_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..120 {
        let n_controls = rng.random_range(3..=10);
        let t = rng.random_range(8..=30);
        let t0 = rng.random_range(2..t);
        let lambda = [1e-4, 1e-2, 1.0][rng.random_range(0..3)];
        let controls = gaussian_matrix(&mut rng, n_controls, t);
        let treated = gaussian_vector(&mut rng, t);
        let panel = PanelData::from_parts(controls, treated, t0).unwrap();
        let fit = eopr::fit(&panel, lambda).unwrap();
        let b = panel.treated().rows(0, t0).into_owned();
        let oracle = kkt_center(fit.model.q(), &b);
        let scale = panel.pre_scale().max(1.0);
        let err = (&fit.estimate.s_hat - &oracle).amax();
        assert!(err <= 1e-8 * scale, "N-1={n_controls} T={t} t0={t0} λ={lambda}: {err:e}");
    }
}

#[test]
fn band_edges_match_dual_oracle_on_noiseless_panels() {
    for seed in 0..6u64 {
        let mut cfg = SimulationConfig::new(8, 20, 8, 40 + seed);
        cfg.noise_sigma = 0.0;
        let panel = generate_panel(&cfg).unwrap().panel;
        let fit = eopr::fit(&panel, 1.0).unwrap();
        let band = fit.band();
        let b = panel.treated().rows(0, cfg.t0).into_owned();
        let (q, h) = (fit.model.q(), fit.model.radius());
        for t in cfg.t0..cfg.t_total {
            let hi = coordinate_max(q, h, &b, t);
            let lo = coordinate_min(q, h, &b, t);
            assert!((hi - band.upper[t]).abs() <= 1e-6 * hi.abs().max(1.0), "seed {seed} t {t}: {hi} vs {}", band.upper[t]);
            assert!((lo - band.lower[t]).abs() <= 1e-6 * lo.abs().max(1.0), "seed {seed} t {t}: {lo} vs {}", band.lower[t]);
        }
    }
}

#[test]
fn pre_period_band_is_degenerate() {
    let cfg = SimulationConfig::new(12, 40, 15, 3);
    let panel = generate_panel(&cfg).unwrap().panel;
    for lambda in [1e-4, 1e-2, 1.0] {
        let fit = eopr::fit(&panel, lambda).unwrap();
        let worst = fit.band().half_widths.rows(0, cfg.t0).amax();
        assert!(worst <= 1e-6 * panel.pre_scale(), "λ={lambda}: {worst:e}");
    }
}

#[test]
fn estimate_is_scale_covariant() {
    // scaling all data by c and λ by c² scales the estimate by c
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let controls = gaussian_matrix(&mut rng, 6, 15);
        let treated = gaussian_vector(&mut rng, 15);
        let c = 10f64.powf(rng.random_range(-2.0..2.0));
        let base = PanelData::from_parts(controls.clone(), treated.clone(), 6).unwrap();
        let scaled = PanelData::from_parts(controls * c, treated * c, 6).unwrap();
        let a = eopr::fit(&base, 0.05).unwrap();
        let b = eopr::fit(&scaled, 0.05 * c * c).unwrap();
        let err = (&a.estimate.s_hat * c - &b.estimate.s_hat).amax();
        assert!(err <= 1e-9 * c.max(1.0), "c={c}: {err:e}");
        let band_err = (&a.band().half_widths * c - &b.band().half_widths).amax();
        assert!(band_err <= 1e-7 * c.max(1.0), "c={c}: {band_err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn both_routes_agree(seed in any::<u64>(), t in 6usize..20, n in 2usize..9, log_lambda in -4.0f64..0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = rng.random_range(1..t);
        let lambda = 10f64.powf(log_lambda);
        let controls = gaussian_matrix(&mut rng, n, t);
        let b: DVector<f64> = gaussian_vector(&mut rng, t0);
        let model = learn_ellipsoid(&controls, lambda).unwrap();
        let reps = representors(&model, t0).unwrap();
        let lit = extrapolate_via(Route::Representor, &model, &reps, &b).unwrap();
        let cs = extrapolate_via(Route::ControlSpace, &model, &reps, &b).unwrap();
        let scale = b.amax().max(1.0);
        prop_assert!((&lit.s_hat - &cs.s_hat).amax() <= 1e-6 * scale);
        let lit = worst_case_band_via(Route::Representor, &model, &reps, &lit).unwrap();
        let cs = worst_case_band_via(Route::ControlSpace, &model, &reps, &cs).unwrap();
        let (hl, hc) = (lit.band.unwrap().half_widths, cs.band.unwrap().half_widths);
        prop_assert!((&hl - &hc).amax() <= 1e-5 * hc.amax().max(1.0));
    }

    #[test]
    fn pre_fit_is_exact(seed in any::<u64>(), t in 4usize..25, n in 1usize..12, log_lambda in -6.0f64..0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = rng.random_range(1..t);
        let panel = PanelData::from_parts(gaussian_matrix(&mut rng, n, t), gaussian_vector(&mut rng, t), t0).unwrap();
        let fit = eopr::fit(&panel, 10f64.powf(log_lambda)).unwrap();
        let err = (fit.estimate.s_hat.rows(0, t0) - panel.treated().rows(0, t0)).amax();
        prop_assert!(err <= 1e-8 * panel.pre_scale().max(1e-300));
    }
}
