//! Synthetic control by ellipsoidal optimal recovery (EOpR), classical
//! synthetic-control baselines, a simulation generator and placebo/ablation
//! evaluation for panel data.

pub mod baselines;
pub mod eopr;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod linalg;
pub mod panel;
pub mod simulation;

pub use error::{Error, Result};
pub use panel::PanelData;
