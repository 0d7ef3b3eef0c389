//! Scoring, placebo tests, effect injection, λ ablation and simulation sweeps.

use std::ops::Range;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Method;
use crate::eopr;
use crate::error::{Error, Result};
use crate::estimator::{fit_method, MethodSpec};
use crate::panel::{normalize, NormalizationScheme, PanelData};
use crate::simulation::{generate_panel, SimulationConfig};

/// Root mean squared difference over `range`.
pub fn rmse(u: &[f64], u_hat: &[f64], range: Range<usize>) -> Result<f64> {
    if u.len() != u_hat.len() {
        return Err(Error::Shape(format!("rmse inputs differ in length ({} vs {})", u.len(), u_hat.len())));
    }
    if range.is_empty() {
        return Err(Error::EmptyRange);
    }
    if range.end > u.len() {
        return Err(Error::Shape(format!("range end {} beyond length {}", range.end, u.len())));
    }
    let n = range.len() as f64;
    let sq: f64 = range.map(|t| (u[t] - u_hat[t]).powi(2)).sum();
    Ok((sq / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub pre_rmse: f64,
    pub post_rmse: f64,
    pub method: Method,
    pub panel: String,
}

/// Pre-period (`0..t0`) and post-period (`t0..T`) RMSE against the
/// observed treated series.
pub fn score(panel: &PanelData, estimate: &DVector<f64>, method: Method) -> Result<ScoreReport> {
    let observed = panel.treated().as_slice();
    let (t0, t) = (panel.t0(), panel.t_total());
    Ok(ScoreReport {
        pre_rmse: rmse(observed, estimate.as_slice(), 0..t0)?,
        post_rmse: rmse(observed, estimate.as_slice(), t0..t)?,
        method,
        panel: format!("N={} T={} t0={}", panel.n_units(), t, t0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboEntry {
    pub unit: String,
    pub is_treated: bool,
    /// `estimate − observed` over all `T` periods.
    pub gap: Option<Vec<f64>>,
    pub post_gap_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboReport {
    /// Treated unit first, then every control in panel order.
    pub entries: Vec<PlaceboEntry>,
    /// 1 when the treated unit has the largest post-gap RMSE.
    pub treated_rank: usize,
}

impl PlaceboReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }
}

/// Refits the estimator with every control cast as a placebo treated unit
/// (the true treated unit never enters a placebo donor pool) and ranks the
/// treated unit by post-period gap RMSE.
///
/// Units whose fit fails keep an entry with the error message and count as
/// least divergent.
pub fn placebo_run(panel: &PanelData, spec: &MethodSpec) -> Result<PlaceboReport> {
    if panel.n_units() < 3 {
        return Err(Error::Shape("placebo tests need at least three units".into()));
    }
    let n = panel.n_units();
    let entries: Vec<PlaceboEntry> = (0..n)
        .into_par_iter()
        .map(|u| {
            let unit = panel.unit_labels()[u].clone();
            let outcome = (|| -> Result<(Vec<f64>, f64)> {
                let target = if u == 0 { panel.clone() } else { panel.placebo(u - 1)? };
                let cf = fit_method(&target, spec)?;
                let gap: Vec<f64> = cf
                    .s_hat
                    .iter()
                    .zip(target.treated().iter())
                    .map(|(e, o)| e - o)
                    .collect();
                let zeros = vec![0.0; gap.len()];
                let post = rmse(&gap, &zeros, target.t0()..target.t_total())?;
                Ok((gap, post))
            })();
            match outcome {
                Ok((gap, post)) => PlaceboEntry {
                    unit,
                    is_treated: u == 0,
                    gap: Some(gap),
                    post_gap_rmse: Some(post),
                    error: None,
                },
                Err(e) => PlaceboEntry {
                    unit,
                    is_treated: u == 0,
                    gap: None,
                    post_gap_rmse: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let treated_rank = match entries[0].post_gap_rmse {
        Some(r) => 1 + entries[1..]
            .iter()
            .filter(|e| e.post_gap_rmse.is_some_and(|x| x > r))
            .count(),
        None => n,
    };
    Ok(PlaceboReport { entries, treated_rank })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectShape {
    /// Constant shift over the whole post-period.
    Step,
    /// Linear growth reaching the full magnitude at the last period.
    Ramp,
}

impl std::str::FromStr for EffectShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "step" => Ok(EffectShape::Step),
            "ramp" => Ok(EffectShape::Ramp),
            other => Err(Error::InvalidArgument(format!("unknown effect shape `{other}`"))),
        }
    }
}

/// Adds a known effect to the treated unit's post-period.
pub fn inject_effect(panel: &PanelData, shape: EffectShape, magnitude: f64) -> Result<PanelData> {
    let (t0, t) = (panel.t0(), panel.t_total());
    let len = (t - t0) as f64;
    let mut treated = panel.treated().clone();
    for (k, tt) in (t0..t).enumerate() {
        treated[tt] += match shape {
            EffectShape::Step => magnitude,
            EffectShape::Ramp => magnitude * (k + 1) as f64 / len,
        };
    }
    panel.with_treated(treated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub lambda: f64,
    pub pre_rmse: Option<f64>,
    pub post_rmse: Option<f64>,
    pub error: Option<String>,
}

/// Fits EOpR at each `λ` of the grid (zero allowed) and scores it.
pub fn lambda_ablation(panel: &PanelData, grid: &[f64]) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut rows: Vec<AblationRow> = grid
        .par_iter()
        .map(|&lambda| {
            let scored = eopr::fit(panel, lambda).and_then(|f| score(panel, &f.estimate.s_hat, Method::Eopr));
            match scored {
                Ok(s) => AblationRow {
                    lambda,
                    pre_rmse: Some(s.pre_rmse),
                    post_rmse: Some(s.post_rmse),
                    error: None,
                },
                Err(e) => AblationRow {
                    lambda,
                    pre_rmse: None,
                    post_rmse: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    /// Sample statistics; `std` is 0 for a single value. Empty input gives NaNs.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                median: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            median: median(values),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One seeded run of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScore {
    pub config_index: usize,
    pub repeat: usize,
    pub seed: u64,
    pub method: Method,
    pub pre_rmse: f64,
    pub post_rmse: f64,
    /// Post-period RMSE against the noiseless treated series.
    pub post_rmse_truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config_index: usize,
    pub config: SimulationConfig,
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    pub pre_rmse: Summary,
    pub post_rmse: Summary,
    pub post_rmse_truth: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunScore>,
}

/// Seed of repeat `r` for a config: `config.seed + r` (wrapping).
pub fn repeat_seed(config: &SimulationConfig, repeat: usize) -> u64 {
    config.seed.wrapping_add(repeat as u64)
}

/// Runs every method on `repeats` simulated panels per config and
/// aggregates the RMSEs. Each panel is normalized with `normalization`
/// before fitting; scores are always in original units. Results do not
/// depend on scheduling.
pub fn sweep(
    configs: &[SimulationConfig],
    methods: &[MethodSpec],
    repeats: usize,
    normalization: NormalizationScheme,
) -> Result<SweepResult> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one method".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..repeats).map(move |r| (c, r)))
        .collect();
    let results: Vec<Vec<(Method, Option<RunScore>)>> = jobs
        .par_iter()
        .map(|&(ci, r)| {
            let mut cfg = configs[ci].clone();
            cfg.seed = repeat_seed(&configs[ci], r);
            let sim = generate_panel(&cfg)
                .and_then(|sim| normalize(&sim.panel, normalization).map(|(fit_panel, rec)| (sim, fit_panel, rec)));
            methods
                .iter()
                .map(|spec| {
                    let method = spec.method();
                    let run = sim.as_ref().ok().and_then(|(sim, fit_panel, rec)| {
                        let cf = fit_method(fit_panel, spec).ok()?;
                        let s_hat = DVector::from_vec(rec.invert_series(cf.s_hat.as_slice()));
                        let s = score(&sim.panel, &s_hat, method).ok()?;
                        let truth = rmse(
                            sim.truth.treated().as_slice(),
                            s_hat.as_slice(),
                            cfg.t0..cfg.t_total,
                        )
                        .ok()?;
                        Some(RunScore {
                            config_index: ci,
                            repeat: r,
                            seed: cfg.seed,
                            method,
                            pre_rmse: s.pre_rmse,
                            post_rmse: s.post_rmse,
                            post_rmse_truth: truth,
                        })
                    });
                    (method, run)
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (ci, config) in configs.iter().enumerate() {
        for (mi, spec) in methods.iter().enumerate() {
            let cell: Vec<&Option<RunScore>> = jobs
                .iter()
                .zip(results.iter())
                .filter(|((c, _), _)| *c == ci)
                .map(|(_, res)| &res[mi].1)
                .collect();
            let ok: Vec<&RunScore> = cell.iter().filter_map(|r| r.as_ref()).collect();
            let pick = |f: fn(&RunScore) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            rows.push(SweepRow {
                config_index: ci,
                config: config.clone(),
                method: spec.method(),
                runs: ok.len(),
                failures: cell.len() - ok.len(),
                pre_rmse: Summary::of(&pick(|r| r.pre_rmse)),
                post_rmse: Summary::of(&pick(|r| r.post_rmse)),
                post_rmse_truth: Summary::of(&pick(|r| r.post_rmse_truth)),
            });
            runs.extend(ok.into_iter().cloned());
        }
    }
    Ok(SweepResult { rows, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], 0..2).unwrap(), 0.0);
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0], 0..2).unwrap();
        assert!((r - 3.5355339059327378).abs() < 1e-12);
        assert!(matches!(rmse(&[1.0], &[1.0], 0..0), Err(Error::EmptyRange)));
        assert!(rmse(&[1.0], &[1.0, 2.0], 0..1).is_err());
    }

    #[test]
    fn rmse_is_permutation_invariant() {
        let u = [1.0, 5.0, -2.0, 0.5];
        let v = [0.0, 4.0, 1.0, 0.25];
        let (pu, pv) = ([0.5, -2.0, 1.0, 5.0], [0.25, 1.0, 0.0, 4.0]);
        assert!((rmse(&u, &v, 0..4).unwrap() - rmse(&pu, &pv, 0..4).unwrap()).abs() < 1e-15);
    }

    fn tiny_panel() -> PanelData {
        let controls = DMatrix::from_row_slice(
            3,
            6,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 0.5, 0.7, 0.2, 0.9, 1.1, 0.3],
        );
        PanelData::from_parts(controls, DVector::from_vec(vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5]), 3).unwrap()
    }

    #[test]
    fn score_of_observed_is_zero() {
        let p = tiny_panel();
        let s = score(&p, p.treated(), Method::Sc).unwrap();
        assert_eq!((s.pre_rmse, s.post_rmse), (0.0, 0.0));
        let mut est = p.treated().clone();
        est[4] += 1.0;
        let s = score(&p, &est, Method::Sc).unwrap();
        assert_eq!(s.pre_rmse, 0.0);
        assert!(s.post_rmse > 0.0);
    }

    #[test]
    fn step_and_ramp_injection() {
        let p = tiny_panel();
        assert_eq!(inject_effect(&p, EffectShape::Step, 0.0).unwrap(), p);
        let stepped = inject_effect(&p, EffectShape::Step, 2.0).unwrap();
        let diff = stepped.treated() - p.treated();
        assert_eq!(diff.as_slice(), &[0.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let ramp = inject_effect(&p, EffectShape::Ramp, 3.0).unwrap();
        let diff = ramp.treated() - p.treated();
        assert!((diff - DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0])).amax() < 1e-12);
    }

    #[test]
    fn perfect_counterfactual_sees_negative_step() {
        let p = tiny_panel();
        let shifted = inject_effect(&p, EffectShape::Step, 1.5).unwrap();
        let tau = eopr::effect_series(p.treated(), shifted.treated(), p.t0()).unwrap();
        assert!(tau.iter().all(|&x| x == -1.5));
    }

    #[test]
    fn ablation_table_has_one_row_per_lambda() {
        let p = tiny_panel();
        let rows = lambda_ablation(&p, &[1.0, 0.0, 0.1]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.lambda).collect::<Vec<_>>(), vec![0.0, 0.1, 1.0]);
        assert_eq!(lambda_ablation(&p, &[0.5]).unwrap().len(), 1);
        assert!(matches!(lambda_ablation(&p, &[]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn placebo_report_has_every_unit() {
        let p = tiny_panel();
        let report = placebo_run(&p, &MethodSpec::default_for(Method::Sc)).unwrap();
        assert_eq!(report.entries.len(), 4);
        assert!((1..=4).contains(&report.treated_rank));
        assert!(report.entries[0].is_treated);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 4.0]);
        assert!((s.mean - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.median, 2.0);
        assert_eq!(Summary::of(&[5.0]).std, 0.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn single_repeat_sweep_matches_direct_scores() {
        let cfg = SimulationConfig::new(6, 30, 12, 5);
        let spec = MethodSpec::default_for(Method::Sc);
        let res = sweep(std::slice::from_ref(&cfg), std::slice::from_ref(&spec), 1, NormalizationScheme::None).unwrap();
        let sim = generate_panel(&cfg).unwrap();
        let cf = fit_method(&sim.panel, &spec).unwrap();
        let direct = score(&sim.panel, &cf.s_hat, Method::Sc).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].pre_rmse.mean, direct.pre_rmse);
        assert_eq!(res.rows[0].post_rmse.mean, direct.post_rmse);
        assert_eq!(res.rows[0].post_rmse.std, 0.0);
    }
}
