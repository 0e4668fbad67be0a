//! Common output shape for the three estimators.

use serde::{Deserialize, Serialize};

/// A covariate effect with its uncertainty. For the Bayesian estimator the
/// point estimate is a posterior median, `se` a posterior standard
/// deviation, and the interval an equal-tail credible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-bin hazard values (per month) with interval bounds, plus covariate
/// effect estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardEstimate {
    /// Baseline hazard per month, one entry per bin.
    pub lambda: Vec<f64>,
    /// Lower interval bound per bin.
    pub lower: Vec<f64>,
    /// Upper interval bound per bin (`inf` on boundary bins).
    pub upper: Vec<f64>,
    /// True where the estimate sits on the boundary of the parameter space
    /// (a zero-event bin in the GLM) and the standard error is infinite.
    pub boundary: Vec<bool>,
    pub beta: Vec<EffectEstimate>,
    pub alpha: Vec<EffectEstimate>,
    /// Coverage level of the intervals, e.g. 0.95.
    pub level: f64,
}
