//! Common interface over EOpR and the baselines.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{dsc_fit_with, rsc_fit, sc_fit_with, Method, QpOptions, RscConfig};
use crate::eopr::{self, DEFAULT_HOLDOUT_FRACTION, DEFAULT_LAMBDA_GRID};
use crate::error::Result;
use crate::panel::PanelData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Select { grid: Vec<f64>, holdout_fraction: f64 },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Select {
            grid: DEFAULT_LAMBDA_GRID.to_vec(),
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
        }
    }
}

impl LambdaChoice {
    pub fn resolve(&self, panel: &PanelData) -> Result<f64> {
        match self {
            LambdaChoice::Fixed(l) => Ok(*l),
            LambdaChoice::Select { grid, holdout_fraction } => eopr::select_lambda(panel, grid, *holdout_fraction),
        }
    }
}

/// A method together with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodSpec {
    Eopr { lambda: LambdaChoice },
    Sc { qp: QpOptions },
    Dsc { qp: QpOptions },
    Rsc { config: RscConfig },
}

impl MethodSpec {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Eopr => MethodSpec::Eopr {
                lambda: LambdaChoice::default(),
            },
            Method::Sc => MethodSpec::Sc { qp: QpOptions::default() },
            Method::Dsc => MethodSpec::Dsc { qp: QpOptions::default() },
            Method::Rsc => MethodSpec::Rsc {
                config: RscConfig::default(),
            },
        }
    }

    pub fn method(&self) -> Method {
        match self {
            MethodSpec::Eopr { .. } => Method::Eopr,
            MethodSpec::Sc { .. } => Method::Sc,
            MethodSpec::Dsc { .. } => Method::Dsc,
            MethodSpec::Rsc { .. } => Method::Rsc,
        }
    }
}

/// Estimated untreated trajectory of the treated unit over all `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub method: Method,
    pub s_hat: DVector<f64>,
    /// Worst-case `(lower, upper)` band; EOpR only.
    pub band: Option<(DVector<f64>, DVector<f64>)>,
    /// `λ` actually used; EOpR only.
    pub lambda: Option<f64>,
    pub weights: DVector<f64>,
}

pub fn fit_method(panel: &PanelData, spec: &MethodSpec) -> Result<Counterfactual> {
    match spec {
        MethodSpec::Eopr { lambda } => {
            let lambda = lambda.resolve(panel)?;
            let fit = eopr::fit(panel, lambda)?;
            let band = fit.band();
            Ok(Counterfactual {
                method: Method::Eopr,
                band: Some((band.lower.clone(), band.upper.clone())),
                s_hat: fit.estimate.s_hat,
                lambda: Some(lambda),
                weights: fit.estimate.weights,
            })
        }
        MethodSpec::Sc { qp } => Ok(weighted(sc_fit_with(panel, *qp)?)),
        MethodSpec::Dsc { qp } => Ok(weighted(dsc_fit_with(panel, *qp)?)),
        MethodSpec::Rsc { config } => Ok(weighted(rsc_fit(panel, *config)?)),
    }
}

fn weighted(est: crate::baselines::WeightedEstimate) -> Counterfactual {
    Counterfactual {
        method: est.method,
        s_hat: est.s_hat,
        band: None,
        lambda: None,
        weights: est.weights,
    }
}
