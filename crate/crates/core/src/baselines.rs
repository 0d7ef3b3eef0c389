//! Synthetic-control baselines: classical SC (simplex weights), demeaned SC
//! and robust SC (SVD denoising followed by regression).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_matrix, ensure_finite_slice, solve_spd, TruncatedSvd};
use crate::panel::{split, PanelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Eopr,
    Sc,
    Dsc,
    Rsc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Eopr => "eopr",
            Method::Sc => "sc",
            Method::Dsc => "dsc",
            Method::Rsc => "rsc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eopr" => Ok(Method::Eopr),
            "sc" => Ok(Method::Sc),
            "dsc" => Ok(Method::Dsc),
            "rsc" => Ok(Method::Rsc),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Fitted weighted combination of control units.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEstimate {
    pub s_hat: DVector<f64>,
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub method: Method,
    /// Singular values kept by RSC.
    pub retained_rank: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: DVector<f64>,
    pub iterations: usize,
    /// Frank–Wolfe duality gap at the returned point.
    pub gap: f64,
}

/// Minimizes `‖A w − b‖²` over the probability simplex with away-step
/// Frank–Wolfe and exact line search.
///
/// Starts from the best single column and stops once the duality gap drops
/// to `tol` or after `max_iters` iterations. Ties always go to the lowest
/// column index.
pub fn solve_simplex_qp(a: &DMatrix<f64>, b: &DVector<f64>, max_iters: usize, tol: f64) -> SimplexSolution {
    let n = a.ncols();
    assert!(n > 0, "simplex QP needs at least one column");
    assert_eq!(a.nrows(), b.len(), "row count of A must match b");
    if n == 1 {
        return SimplexSolution {
            weights: DVector::from_element(1, 1.0),
            iterations: 0,
            gap: 0.0,
        };
    }

    let start = (0..n)
        .map(|j| (j, (a.column(j) - b).norm_squared()))
        .fold((0, f64::INFINITY), |best, (j, d)| if d < best.1 { (j, d) } else { best });
    let mut w = DVector::zeros(n);
    w[start.0] = 1.0;
    let mut aw = a.column(start.0).into_owned();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;

    while iterations < max_iters {
        if iterations % 256 == 255 {
            aw = a * &w;
        }
        let r = &aw - b;
        let g = a.tr_mul(&r) * 2.0;
        let gw = g.dot(&w);
        let (s, gs) = argmin(g.iter().cloned());
        gap = gw - gs;
        if gap <= tol {
            break;
        }
        let (v, gv) = (0..n)
            .filter(|&i| w[i] > 0.0)
            .map(|i| (i, g[i]))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, gi)| if gi > best.1 { (i, gi) } else { best });
        let away_gap = gv - gw;

        let (direction, gamma_max, toward) = if gap >= away_gap || v == usize::MAX {
            (a.column(s) - &aw, 1.0, true)
        } else {
            let wv = w[v];
            let gamma_max = if wv < 1.0 { wv / (1.0 - wv) } else { f64::INFINITY };
            (&aw - a.column(v), gamma_max, false)
        };
        let denom = direction.norm_squared();
        if denom.is_nan() || denom <= 0.0 {
            break;
        }
        let gamma = (-r.dot(&direction) / denom).clamp(0.0, gamma_max);
        if gamma.is_nan() || gamma <= 0.0 {
            break;
        }
        if toward {
            w *= 1.0 - gamma;
            w[s] += gamma;
        } else {
            w *= 1.0 + gamma;
            w[v] -= gamma;
            if gamma >= gamma_max {
                w[v] = 0.0;
            }
        }
        aw.axpy(gamma, &direction, 1.0);
        iterations += 1;
    }

    w.iter_mut().for_each(|x| *x = x.max(0.0));
    let total = w.sum();
    w /= total;
    SimplexSolution {
        weights: w,
        iterations,
        gap,
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
}

fn check_panel(panel: &PanelData) -> Result<()> {
    ensure_finite_matrix(panel.controls(), "control matrix")?;
    ensure_finite_slice(panel.treated().as_slice(), "treated series")
}

/// Classical synthetic control on outcomes: simplex weights fitted on the
/// pre-period, applied over all periods.
pub fn sc_fit(panel: &PanelData) -> Result<WeightedEstimate> {
    sc_fit_with(panel, QpOptions::default())
}

pub fn sc_fit_with(panel: &PanelData, opts: QpOptions) -> Result<WeightedEstimate> {
    check_panel(panel)?;
    let parts = split(panel);
    let sol = solve_simplex_qp(&parts.s_pre.transpose(), &parts.s1_pre, opts.max_iters, opts.tol);
    let s_hat = panel.controls().tr_mul(&sol.weights);
    Ok(WeightedEstimate {
        s_hat,
        weights: sol.weights,
        intercept: 0.0,
        method: Method::Sc,
        retained_rank: None,
    })
}

/// Demeaned synthetic control: simplex weights on pre-period-demeaned
/// series, with the treated pre-period mean added back as intercept.
pub fn dsc_fit(panel: &PanelData) -> Result<WeightedEstimate> {
    dsc_fit_with(panel, QpOptions::default())
}

pub fn dsc_fit_with(panel: &PanelData, opts: QpOptions) -> Result<WeightedEstimate> {
    check_panel(panel)?;
    let t0 = panel.t0();
    let controls = panel.controls();
    let means: Vec<f64> = (0..controls.nrows())
        .map(|i| controls.row(i).columns(0, t0).mean())
        .collect();
    let intercept = panel.treated().rows(0, t0).mean();
    let demeaned = DMatrix::from_fn(controls.nrows(), controls.ncols(), |i, t| controls[(i, t)] - means[i]);
    let b = panel.treated().rows(0, t0).add_scalar(-intercept);
    let a = demeaned.columns(0, t0).transpose();
    let sol = solve_simplex_qp(&a, &b, opts.max_iters, opts.tol);
    let s_hat = demeaned.tr_mul(&sol.weights).add_scalar(intercept);
    Ok(WeightedEstimate {
        s_hat,
        weights: sol.weights,
        intercept,
        method: Method::Dsc,
        retained_rank: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RscConfig {
    /// Singular values below `ratio · σ_max` are zeroed.
    pub singular_value_cutoff_ratio: f64,
    pub ridge: f64,
}

impl Default for RscConfig {
    fn default() -> Self {
        Self {
            singular_value_cutoff_ratio: 0.1,
            ridge: 0.0,
        }
    }
}

impl RscConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.singular_value_cutoff_ratio;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("RSC cutoff ratio must lie in [0, 1], got {r}")));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("RSC ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Low-rank approximation of the control matrix keeping singular values
/// `σ_k ≥ ratio · σ_max`. Returns the denoised matrix and the kept rank.
pub fn denoise_controls(controls: &DMatrix<f64>, ratio: f64) -> Result<(DMatrix<f64>, usize)> {
    let svd = TruncatedSvd::new(controls)?;
    let s_max = svd.sigma_max();
    if s_max.is_nan() || s_max <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let keep = svd
        .singular_values
        .iter()
        .filter(|&&s| s >= ratio * s_max)
        .count();
    Ok((svd.reconstruct(keep), keep))
}

/// Robust synthetic control: SVD-denoise the controls, then regress the
/// treated pre-period on the denoised pre-period controls (unconstrained,
/// optional ridge).
pub fn rsc_fit(panel: &PanelData, config: RscConfig) -> Result<WeightedEstimate> {
    config.validate()?;
    check_panel(panel)?;
    let t0 = panel.t0();
    let (denoised, keep) = denoise_controls(panel.controls(), config.singular_value_cutoff_ratio)?;
    let m_pre = denoised.columns(0, t0).into_owned();
    let b = panel.treated().rows(0, t0).into_owned();
    let weights = if config.ridge > 0.0 {
        let mut gram = &m_pre * m_pre.transpose();
        for i in 0..gram.nrows() {
            gram[(i, i)] += config.ridge;
        }
        solve_spd(&gram, &(&m_pre * &b))?
    } else {
        TruncatedSvd::new(&m_pre.transpose())?.solve(&b)
    };
    let s_hat = denoised.tr_mul(&weights);
    Ok(WeightedEstimate {
        s_hat,
        weights,
        intercept: 0.0,
        method: Method::Rsc,
        retained_rank: Some(keep),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on_simplex(w: &DVector<f64>) -> bool {
        w.iter().all(|&x| x >= -1e-10) && (w.sum() - 1.0).abs() <= 1e-8
    }

    #[test]
    fn single_column_is_the_only_feasible_point() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let sol = solve_simplex_qp(&a, &DVector::from_vec(vec![9.0, 9.0, 9.0]), 100, 1e-10);
        assert_eq!(sol.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn target_on_a_vertex_is_recovered() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 3.0, -1.0, 0.0]);
        for j in 0..3 {
            let b = a.column(j).into_owned();
            let sol = solve_simplex_qp(&a, &b, 50_000, 1e-12);
            let mut e = DVector::zeros(3);
            e[j] = 1.0;
            assert!((sol.weights - e).amax() < 1e-6);
        }
    }

    #[test]
    fn interior_target_is_matched() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let truth = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let b = &a * &truth;
        let sol = solve_simplex_qp(&a, &b, 50_000, 1e-14);
        assert!(on_simplex(&sol.weights));
        assert!((sol.weights - truth).amax() < 1e-6);
    }

    #[test]
    fn ratio_zero_ridge_zero_is_least_squares() {
        let controls = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 0.0, 1.0, 3.0, 0.5, -1.0, 2.0, 1.0, 0.0]);
        let treated = DVector::from_vec(vec![1.0, 0.0, 2.5, 1.0, 2.0]);
        let panel = PanelData::from_parts(controls.clone(), treated.clone(), 4).unwrap();
        let est = rsc_fit(
            &panel,
            RscConfig {
                singular_value_cutoff_ratio: 0.0,
                ridge: 0.0,
            },
        )
        .unwrap();
        assert_eq!(est.retained_rank, Some(2));
        let a = controls.columns(0, 4).transpose();
        let ols = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * treated.rows(0, 4);
        assert!((est.weights - ols).amax() < 1e-10);
    }

    #[test]
    fn retained_rank_non_increasing_in_ratio() {
        let controls = DMatrix::from_fn(4, 7, |i, t| ((i + 1) as f64 * (t as f64 + 0.5)).sin() + i as f64);
        let mut prev = usize::MAX;
        for ratio in [0.0, 0.01, 0.1, 0.3, 0.6, 1.0] {
            let (_, keep) = denoise_controls(&controls, ratio).unwrap();
            assert!(keep <= 4 && keep <= prev);
            prev = keep;
        }
    }

    #[test]
    fn zero_controls_are_degenerate() {
        let panel = PanelData::from_parts(DMatrix::zeros(2, 4), DVector::from_element(4, 1.0), 2).unwrap();
        assert!(matches!(rsc_fit(&panel, RscConfig::default()), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn dsc_intercept_is_treated_pre_mean() {
        let controls = DMatrix::from_row_slice(2, 4, &[1.0, 3.0, 2.0, 5.0, 0.0, 1.0, 4.0, 4.0]);
        let treated = DVector::from_vec(vec![2.0, 4.0, 9.0, 9.0]);
        let panel = PanelData::from_parts(controls, treated, 2).unwrap();
        let est = dsc_fit(&panel).unwrap();
        assert_eq!(est.intercept, 3.0);
        assert!(on_simplex(&est.weights));
    }

    #[test]
    fn method_round_trips_through_str() {
        for m in [Method::Eopr, Method::Sc, Method::Dsc, Method::Rsc] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}
