//! Ellipsoidal optimal recovery (EOpR).
//!
//! The control trajectories define an ellipsoidal signal class
//! `K = {x : xᵀQx ≤ h}` with `Q = Σ†` and `Σ = SᵀS + λI` (a `T × T` Gram
//! matrix over time). The treated unit is known on the pre-period only; the
//! estimate is the Chebyshev center of `K` intersected with the affine set of
//! trajectories matching the observed pre-period, which is the minimum
//! `Q`-norm interpolant
//!
//! ```text
//! Φ  = Σ⁻ᵀ Q Σ⁻          (Σ⁻ = first t0 columns of Σ)
//! w* = Φ⁻¹ s₁⁻
//! ŝ₁ = Σ⁻ w*
//! ```
//!
//! For `λ > 0` with `Q` the exact inverse, `Φ` is the top-left block of `Σ`
//! and the same quantities can be computed in the `(N−1)`-dimensional
//! control space, which is what [`extrapolate`] does in that case: the
//! direct route loses roughly `cond(Σ)·ε` of accuracy, which is fatal for
//! the small `λ` values the holdout search likes to pick. Both routes are
//! public so they can be checked against each other.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_matrix, ensure_finite_slice, symmetrize, TruncatedSvd};
use crate::panel::PanelData;

/// `{10⁻⁶, 10⁻⁵, …, 1}`.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

/// Learned ellipsoidal signal class.
#[derive(Debug, Clone)]
pub struct EllipsoidModel {
    sigma: DMatrix<f64>,
    q: DMatrix<f64>,
    lambda: f64,
    radius: f64,
    rank: usize,
    controls: DMatrix<f64>,
    spectrum: TruncatedSvd,
}

impl EllipsoidModel {
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Ellipsoid radius `h`: the largest `sᵢᵀQsᵢ` over control rows.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Numerical rank of `Σ`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn t_total(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn controls(&self) -> &DMatrix<f64> {
        &self.controls
    }

    /// `xᵀQx`, evaluated through the spectrum of `Σ` rather than the
    /// assembled `Q`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let svd = &self.spectrum;
        (0..svd.rank)
            .map(|k| svd.u.column(k).dot(x) * svd.v_t.row(k).transpose().dot(x) / svd.singular_values[k])
            .sum()
    }

    /// True when `λ > 0` and no part of the spectrum was truncated, so that
    /// `Q = Σ⁻¹` exactly.
    pub fn is_invertible(&self) -> bool {
        self.lambda > 0.0 && self.rank == self.t_total()
    }
}

/// Builds `Σ = SᵀS + λI`, `Q = Σ†` and the radius from the `(N−1) × T`
/// control matrix.
pub fn learn_ellipsoid(controls: &DMatrix<f64>, lambda: f64) -> Result<EllipsoidModel> {
    ensure_finite_matrix(controls, "control matrix")?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let t = controls.ncols();
    let mut sigma = controls.transpose() * controls;
    for i in 0..t {
        sigma[(i, i)] += lambda;
    }
    symmetrize(&mut sigma);
    let spectrum = TruncatedSvd::new(&sigma)?;
    let mut q = spectrum.pseudo_inverse();
    symmetrize(&mut q);
    let mut model = EllipsoidModel {
        sigma,
        q,
        lambda,
        radius: 0.0,
        rank: spectrum.rank,
        controls: controls.clone(),
        spectrum,
    };
    model.radius = (0..controls.nrows())
        .map(|i| model.quad_form(&controls.row(i).transpose()))
        .fold(0.0, f64::max);
    Ok(model)
}

#[derive(Debug, Clone)]
enum PhiSolver {
    Cholesky(Cholesky<f64, Dyn>),
    PseudoInverse(TruncatedSvd),
}

/// Factorization of the pre-period controls used by the control-space route:
/// `S⁻ = U diag(d) Vᵀ` (thin).
#[derive(Debug, Clone)]
struct ControlSpace {
    u: DMatrix<f64>,
    d: DVector<f64>,
    v_t: DMatrix<f64>,
}

impl ControlSpace {
    fn new(s_pre: &DMatrix<f64>) -> Result<Self> {
        let svd = TruncatedSvd::new(s_pre)?;
        Ok(Self {
            u: svd.u,
            d: svd.singular_values,
            v_t: svd.v_t,
        })
    }
}

/// Gram matrix of the pre-period representors.
#[derive(Debug, Clone)]
pub struct RepresentorSystem {
    phi: DMatrix<f64>,
    pre_columns: DMatrix<f64>,
    t0: usize,
    solver: PhiSolver,
    control_space: Option<ControlSpace>,
}

impl RepresentorSystem {
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// The representors: the first `t0` columns of `Σ`.
    pub fn pre_columns(&self) -> &DMatrix<f64> {
        &self.pre_columns
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn uses_pseudo_inverse(&self) -> bool {
        matches!(self.solver, PhiSolver::PseudoInverse(_))
    }

    /// `Φ⁻¹ b`, or the minimum-norm least-squares solution when `Φ` is singular.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.solver {
            PhiSolver::Cholesky(c) => c.solve(b),
            PhiSolver::PseudoInverse(svd) => svd.solve(b),
        }
    }
}

fn build_representors(model: &EllipsoidModel, t0: usize, strict: bool) -> Result<RepresentorSystem> {
    let t = model.t_total();
    if t0 < 1 || t0 > t {
        return Err(Error::BadT0 { t0, t_total: t });
    }
    let pre_columns = model.sigma.columns(0, t0).into_owned();
    let mut phi = pre_columns.transpose() * (&model.q * &pre_columns);
    symmetrize(&mut phi);
    ensure_finite_matrix(&phi, "representor Gram matrix")?;

    let solver = if model.lambda > 0.0 {
        match Cholesky::new(phi.clone()) {
            Some(c) => PhiSolver::Cholesky(c),
            None => PhiSolver::PseudoInverse(TruncatedSvd::new(&phi)?),
        }
    } else {
        let svd = TruncatedSvd::new(&phi)?;
        if svd.rank < t0 {
            if strict {
                return Err(Error::SingularPhi { rank: svd.rank, t0 });
            }
            PhiSolver::PseudoInverse(svd)
        } else {
            match Cholesky::new(phi.clone()) {
                Some(c) => PhiSolver::Cholesky(c),
                None => PhiSolver::PseudoInverse(svd),
            }
        }
    };
    let control_space = if model.is_invertible() {
        Some(ControlSpace::new(&model.controls.columns(0, t0).into_owned())?)
    } else {
        None
    };
    Ok(RepresentorSystem {
        phi,
        pre_columns,
        t0,
        solver,
        control_space,
    })
}

/// Representors for the first `t0` periods.
///
/// Fails with [`Error::SingularPhi`] when `λ = 0` and `Φ` is numerically
/// singular; [`representors_pinv`] accepts that case.
pub fn representors(model: &EllipsoidModel, t0: usize) -> Result<RepresentorSystem> {
    build_representors(model, t0, true)
}

/// Like [`representors`] but solves a singular `Φ` by pseudo-inverse.
pub fn representors_pinv(model: &EllipsoidModel, t0: usize) -> Result<RepresentorSystem> {
    build_representors(model, t0, false)
}

/// Numerical route used to evaluate the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Literal evaluation through `Q`, `Φ` and the representors.
    Representor,
    /// Equivalent evaluation in the span of the control units; requires
    /// [`EllipsoidModel::is_invertible`].
    ControlSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseBand {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub half_widths: DVector<f64>,
    /// `max(0, h − ŝᵀQŝ)`.
    pub slack: f64,
    /// Set when `h < ŝᵀQŝ` and the slack was clamped to zero.
    pub slack_clamped: bool,
    /// Number of coordinates whose residual norm came out negative and was clamped.
    pub clamped_coordinates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EoprEstimate {
    pub s_hat: DVector<f64>,
    pub weights: DVector<f64>,
    /// `ŝᵀQŝ`.
    pub qform: f64,
    pub route: Route,
    pub band: Option<WorstCaseBand>,
}

fn check_pre(reps: &RepresentorSystem, s1_pre: &DVector<f64>) -> Result<()> {
    if s1_pre.len() != reps.t0 {
        return Err(Error::Shape(format!(
            "pre-period has {} values, representors expect {}",
            s1_pre.len(),
            reps.t0
        )));
    }
    ensure_finite_slice(s1_pre.as_slice(), "treated pre-period")
}

/// Chebyshev-center extrapolation of the treated pre-period.
///
/// Uses the control-space route when the model is invertible and the
/// representor route otherwise.
pub fn extrapolate(model: &EllipsoidModel, reps: &RepresentorSystem, s1_pre: &DVector<f64>) -> Result<EoprEstimate> {
    let route = if reps.control_space.is_some() {
        Route::ControlSpace
    } else {
        Route::Representor
    };
    extrapolate_via(route, model, reps, s1_pre)
}

pub fn extrapolate_via(
    route: Route,
    model: &EllipsoidModel,
    reps: &RepresentorSystem,
    s1_pre: &DVector<f64>,
) -> Result<EoprEstimate> {
    check_pre(reps, s1_pre)?;
    let est = match route {
        Route::Representor => {
            let weights = reps.solve(s1_pre);
            let s_hat = &reps.pre_columns * &weights;
            let qform = model.quad_form(&s_hat);
            EoprEstimate {
                s_hat,
                weights,
                qform,
                route,
                band: None,
            }
        }
        Route::ControlSpace => {
            let cs = reps.control_space.as_ref().ok_or_else(|| {
                Error::InvalidArgument("control-space route needs lambda > 0 and a full-rank sigma".into())
            })?;
            control_space_extrapolate(model, cs, s1_pre)
        }
    };
    if est.s_hat.iter().chain(est.weights.iter()).all(|v| v.is_finite()) && est.qform.is_finite() {
        Ok(est)
    } else {
        Err(Error::Numerical("extrapolation produced non-finite values".into()))
    }
}

// With Σ⁻⁻ = S⁻ᵀS⁻ + λI and S⁻ = U D Vᵀ, the weights w = Σ⁻⁻⁻¹ b split into a
// component in the row space of S⁻ and the orthogonal remainder b⊥/λ, and
// ŝ = Σ⁻w = Sᵀω + [λw; 0] with ω = (S⁻S⁻ᵀ + λI)⁻¹ S⁻ b.
fn control_space_extrapolate(model: &EllipsoidModel, cs: &ControlSpace, b: &DVector<f64>) -> EoprEstimate {
    let lambda = model.lambda;
    let t0 = b.len();
    let t = model.t_total();
    let v = cs.v_t.transpose();
    let c = &cs.v_t * b;
    let b_perp = b - &v * &c;

    let denom = cs.d.map(|d| d * d + lambda);
    let omega = &cs.u * c.component_mul(&cs.d).component_div(&denom);
    let fitted = &v * c.component_mul(&cs.d.map(|d| d * d)).component_div(&denom);
    let residual = &v * (&c * lambda).component_div(&denom) + &b_perp;
    let weights = &v * c.component_div(&denom) + &b_perp / lambda;

    let mut s_hat = DVector::zeros(t);
    s_hat.rows_mut(0, t0).copy_from(&(fitted + residual));
    if t > t0 {
        let s_post = model.controls.columns(t0, t - t0);
        s_hat.rows_mut(t0, t - t0).copy_from(&(s_post.transpose() * &omega));
    }
    let qform = c.component_mul(&c).component_div(&denom).sum() + b_perp.norm_squared() / lambda;
    EoprEstimate {
        s_hat,
        weights,
        qform,
        route: Route::ControlSpace,
        band: None,
    }
}

/// Per-coordinate worst-case interval around the Chebyshev center.
///
/// For each time `t` the half-width is `sqrt(h − ŝᵀQŝ)` times the
/// `Q`-norm of the part of the coordinate representor `Σe_t` that is
/// `Q`-orthogonal to the pre-period representors. It vanishes on the
/// pre-period.
pub fn worst_case_band(model: &EllipsoidModel, reps: &RepresentorSystem, est: &EoprEstimate) -> Result<EoprEstimate> {
    worst_case_band_via(est.route, model, reps, est)
}

pub fn worst_case_band_via(
    route: Route,
    model: &EllipsoidModel,
    reps: &RepresentorSystem,
    est: &EoprEstimate,
) -> Result<EoprEstimate> {
    let t = model.t_total();
    if est.s_hat.len() != t {
        return Err(Error::Shape("estimate length does not match model".into()));
    }
    let raw_slack = model.radius - est.qform;
    let slack = raw_slack.max(0.0);
    let t0 = reps.t0;
    let mut clamped = 0;
    let mut residual_sq = vec![0.0; t];
    match route {
        Route::ControlSpace => {
            let cs = reps.control_space.as_ref().ok_or_else(|| {
                Error::InvalidArgument("control-space route needs lambda > 0 and a full-rank sigma".into())
            })?;
            let lambda = model.lambda;
            for (tt, r) in residual_sq.iter_mut().enumerate().skip(t0) {
                let s_t = model.controls.column(tt);
                let proj = cs.u.transpose() * s_t;
                let outside = (s_t - &cs.u * &proj).norm_squared();
                let inside: f64 = proj
                    .iter()
                    .zip(cs.d.iter())
                    .map(|(p, d)| lambda * p * p / (d * d + lambda))
                    .sum();
                *r = lambda + inside + outside;
            }
        }
        Route::Representor => {
            let q_sigma = &model.q * &model.sigma;
            let v_all = reps.pre_columns.transpose() * &q_sigma;
            for (tt, r) in residual_sq.iter_mut().enumerate() {
                let phi_t = model.sigma.column(tt);
                let own = phi_t.dot(&q_sigma.column(tt));
                let v_t = v_all.column(tt).into_owned();
                let explained = v_t.dot(&reps.solve(&v_t));
                let value = own - explained;
                if value < 0.0 {
                    clamped += 1;
                }
                *r = value.max(0.0);
            }
        }
    }
    let half_widths = DVector::from_iterator(t, residual_sq.iter().map(|r| (slack * r).sqrt()));
    if half_widths.iter().any(|h| !h.is_finite()) {
        return Err(Error::Numerical("band half-widths are not finite".into()));
    }
    let mut out = est.clone();
    out.band = Some(WorstCaseBand {
        lower: &est.s_hat - &half_widths,
        upper: &est.s_hat + &half_widths,
        half_widths,
        slack,
        slack_clamped: raw_slack < 0.0,
        clamped_coordinates: clamped,
    });
    Ok(out)
}

/// Treatment effect `τ_t = ŝ_t − observed_t` over the post-period
/// (counterfactual minus observed).
pub fn effect_series(s_hat: &DVector<f64>, treated_observed: &DVector<f64>, t0: usize) -> Result<Vec<f64>> {
    if s_hat.len() != treated_observed.len() {
        return Err(Error::Shape("estimate and observed series differ in length".into()));
    }
    if t0 > s_hat.len() {
        return Err(Error::BadT0 {
            t0,
            t_total: s_hat.len(),
        });
    }
    Ok((t0..s_hat.len()).map(|t| s_hat[t] - treated_observed[t]).collect())
}

/// Model, representors and banded estimate for one panel.
#[derive(Debug, Clone)]
pub struct EoprFit {
    pub model: EllipsoidModel,
    pub representors: RepresentorSystem,
    pub estimate: EoprEstimate,
}

impl EoprFit {
    pub fn band(&self) -> &WorstCaseBand {
        self.estimate.band.as_ref().expect("fit always computes the band")
    }
}

/// Learns the ellipsoid from the panel's controls, extrapolates the treated
/// unit and attaches the worst-case band. Singular `Φ` at `λ = 0` falls back
/// to the pseudo-inverse.
pub fn fit(panel: &PanelData, lambda: f64) -> Result<EoprFit> {
    let model = learn_ellipsoid(panel.controls(), lambda)?;
    let reps = match representors(&model, panel.t0()) {
        Err(Error::SingularPhi { .. }) => representors_pinv(&model, panel.t0())?,
        other => other?,
    };
    let s1_pre = panel.treated().rows(0, panel.t0()).into_owned();
    let est = extrapolate(&model, &reps, &s1_pre)?;
    let estimate = worst_case_band(&model, &reps, &est)?;
    Ok(EoprFit {
        model,
        representors: reps,
        estimate,
    })
}

/// Holdout score of one grid value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaScore {
    pub lambda: f64,
    /// `None` when the fit failed for this value.
    pub holdout_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub scores: Vec<LambdaScore>,
}

/// Picks `λ` by holding out the tail of the pre-period.
///
/// Each candidate is fitted on the first `⌈t0·(1 − holdout_fraction)⌉`
/// periods and scored by RMSE on the rest of the pre-period. The smallest
/// score wins; ties go to the larger `λ`.
pub fn select_lambda(panel: &PanelData, grid: &[f64], holdout_fraction: f64) -> Result<f64> {
    select_lambda_scored(panel, grid, holdout_fraction).map(|s| s.lambda)
}

pub fn select_lambda_scored(panel: &PanelData, grid: &[f64], holdout_fraction: f64) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(bad) = grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("lambda grid values must be > 0, got {bad}")));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let t0 = panel.t0();
    let t_fit = (t0 as f64 * (1.0 - holdout_fraction)).ceil() as usize;
    if grid.len() == 1 {
        return Ok(LambdaSelection {
            lambda: grid[0],
            scores: vec![LambdaScore {
                lambda: grid[0],
                holdout_rmse: None,
            }],
        });
    }
    if t_fit < 1 || t_fit >= t0 {
        return Err(Error::TooShortPre { t0, holdout_fraction });
    }
    let sub = panel.truncated(t0, t_fit)?;
    let scores: Vec<LambdaScore> = grid
        .par_iter()
        .map(|&lambda| {
            let holdout_rmse = fit(&sub, lambda).ok().map(|f| {
                let s_hat = &f.estimate.s_hat;
                let sq: f64 = (t_fit..t0).map(|t| (s_hat[t] - sub.treated()[t]).powi(2)).sum();
                (sq / (t0 - t_fit) as f64).sqrt()
            });
            LambdaScore { lambda, holdout_rmse }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        let Some(rmse) = s.holdout_rmse.filter(|r| r.is_finite()) else {
            continue;
        };
        best = match best {
            None => Some((s.lambda, rmse)),
            Some((bl, br)) => {
                let tie = (rmse - br).abs() <= 1e-12 * br.max(rmse);
                if rmse < br && !tie || tie && s.lambda > bl {
                    Some((s.lambda, rmse))
                } else {
                    Some((bl, br))
                }
            }
        };
    }
    let (lambda, _) = best.ok_or_else(|| Error::Numerical("every lambda in the grid failed".into()))?;
    Ok(LambdaSelection { lambda, scores })
}
