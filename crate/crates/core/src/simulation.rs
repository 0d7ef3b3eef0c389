//! Low-rank logistic data-generating process for controlled experiments.
//!
//! Unit features `θ_i` and time features `ρ_t` are drawn with replacement
//! from two pools of `Unif(0, 1)` values; the noiseless outcome is
//! `10 / (1 + exp(−θ_i − ρ_t − θ_i ρ_t))` and observations add `N(0, σ²)`
//! noise. The treated unit is a convex combination of the noiseless control
//! rows. Randomness comes from ChaCha8 seeded by `seed`, so output is
//! identical across platforms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `1 / (N − 1)` on every control.
    Equal,
    /// Uniform draw from the probability simplex.
    Dirichlet,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equal" => Ok(WeightMode::Equal),
            "dirichlet" => Ok(WeightMode::Dirichlet),
            other => Err(Error::InvalidArgument(format!("unknown weight mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_units: usize,
    pub t_total: usize,
    pub t0: usize,
    pub pool_size: usize,
    pub noise_sigma: f64,
    pub treated_noise: bool,
    pub weight_mode: WeightMode,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(n_units: usize, t_total: usize, t0: usize, seed: u64) -> Self {
        Self {
            n_units,
            t_total,
            t0,
            pool_size: 10,
            noise_sigma: 1.0,
            treated_noise: true,
            weight_mode: WeightMode::Equal,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t0 < 1 || self.t0 >= self.t_total {
            return Err(Error::BadT0 {
                t0: self.t0,
                t_total: self.t_total,
            });
        }
        if self.n_units < 2 {
            return Err(Error::InvalidArgument("simulation needs n_units >= 2".into()));
        }
        if self.pool_size < 1 {
            return Err(Error::InvalidArgument("pool_size must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub panel: PanelData,
    pub truth: PanelData,
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub treated_weights: Vec<f64>,
    pub config: SimulationConfig,
}

/// Noiseless outcome for unit feature `theta` and time feature `rho`.
pub fn logistic_signal(theta: f64, rho: f64) -> f64 {
    10.0 / (1.0 + (-theta - rho - theta * rho).exp())
}

/// Convex combination of the rows of `noiseless_controls`; returns the
/// combined series and the weights used.
pub fn treated_from_controls<R: Rng + ?Sized>(
    noiseless_controls: &DMatrix<f64>,
    mode: WeightMode,
    rng: &mut R,
) -> (DVector<f64>, Vec<f64>) {
    let n = noiseless_controls.nrows();
    assert!(n > 0, "need at least one control row");
    let weights: Vec<f64> = match mode {
        WeightMode::Equal => vec![1.0 / n as f64; n],
        WeightMode::Dirichlet => {
            let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            draws.into_iter().map(|d: f64| d / total).collect()
        }
    };
    let series = noiseless_controls.tr_mul(&DVector::from_column_slice(&weights));
    (series, weights)
}

pub fn generate_panel(config: &SimulationConfig) -> Result<SimOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_controls = config.n_units - 1;
    let t = config.t_total;

    let unit_pool: Vec<f64> = (0..config.pool_size).map(|_| rng.random::<f64>()).collect();
    let time_pool: Vec<f64> = (0..config.pool_size).map(|_| rng.random::<f64>()).collect();
    let theta: Vec<f64> = (0..n_controls)
        .map(|_| unit_pool[rng.random_range(0..config.pool_size)])
        .collect();
    let rho: Vec<f64> = (0..t)
        .map(|_| time_pool[rng.random_range(0..config.pool_size)])
        .collect();

    let clean = DMatrix::from_fn(n_controls, t, |i, j| logistic_signal(theta[i], rho[j]));
    let (clean_treated, treated_weights) = treated_from_controls(&clean, config.weight_mode, &mut rng);

    let sigma = config.noise_sigma;
    let mut noisy = clean.clone();
    // row-major draw order keeps the stream independent of storage layout
    for i in 0..n_controls {
        for j in 0..t {
            let e: f64 = StandardNormal.sample(&mut rng);
            noisy[(i, j)] += sigma * e;
        }
    }
    let mut noisy_treated = clean_treated.clone();
    if config.treated_noise {
        for j in 0..t {
            let e: f64 = StandardNormal.sample(&mut rng);
            noisy_treated[j] += sigma * e;
        }
    }

    let panel = PanelData::from_parts(noisy, noisy_treated, config.t0)?;
    let truth = PanelData::from_parts(clean, clean_treated, config.t0)?;
    Ok(SimOutput {
        panel,
        truth,
        theta,
        rho,
        treated_weights,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_features_give_five() {
        assert_eq!(logistic_signal(0.0, 0.0), 5.0);
    }

    #[test]
    fn zero_noise_panel_equals_truth() {
        let mut cfg = SimulationConfig::new(6, 20, 8, 3);
        cfg.noise_sigma = 0.0;
        let out = generate_panel(&cfg).unwrap();
        assert_eq!(out.panel, out.truth);
    }

    #[test]
    fn noiseless_values_stay_in_logistic_range() {
        let out = generate_panel(&SimulationConfig::new(30, 80, 20, 11)).unwrap();
        let upper = 10.0 / (1.0 + (-3.0f64).exp());
        for v in out.truth.controls().iter().chain(out.truth.treated().iter()) {
            assert!(*v > 5.0 && *v < upper, "{v}");
        }
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SimulationConfig::new(8, 30, 10, 42);
        assert_eq!(generate_panel(&cfg).unwrap(), generate_panel(&cfg).unwrap());
        let other = SimulationConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate_panel(&cfg).unwrap().panel, generate_panel(&other).unwrap().panel);
    }

    #[test]
    fn treated_combination_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        for mode in [WeightMode::Equal, WeightMode::Dirichlet] {
            let (s, _) = treated_from_controls(&one, mode, &mut rng);
            assert!((s - one.row(0).transpose()).amax() < 1e-15);
        }
        let same = DMatrix::from_row_slice(2, 3, &[4.0, 5.0, 6.0, 4.0, 5.0, 6.0]);
        let (s, w) = treated_from_controls(&same, WeightMode::Dirichlet, &mut rng);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s - same.row(0).transpose()).amax() < 1e-12);
        let pair = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 3.0, 3.0, 3.0]);
        let (s, _) = treated_from_controls(&pair, WeightMode::Equal, &mut rng);
        assert_eq!(s.as_slice(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn noiseless_rank_is_small() {
        let mut cfg = SimulationConfig::new(60, 150, 50, 9);
        cfg.noise_sigma = 0.0;
        let out = generate_panel(&cfg).unwrap();
        let rank = crate::linalg::TruncatedSvd::new(out.truth.controls()).unwrap().rank;
        assert!(rank <= 10, "rank {rank}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SimulationConfig::new(5, 10, 10, 0);
        assert!(matches!(generate_panel(&cfg), Err(Error::BadT0 { .. })));
        cfg.t0 = 4;
        cfg.n_units = 1;
        assert!(generate_panel(&cfg).is_err());
    }
}
