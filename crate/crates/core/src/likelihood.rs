//! Shared piecewise-exponential likelihood algebra.
//!
//! The exposure multiplier for group `i` in bin `j` combines the partial
//! occupancy of the subjects exiting in the bin with the full occupancy of
//! the survivors,
//!
//! ```text
//! Phi_ij = (tau_ij / omega) * (Delta_ij + Gamma_ij) + N_ij - (Delta_ij + Gamma_ij),
//! ```
//!
//! and `W_ij = omega * Phi_ij` is the total person-time spent in the bin.
//! The grouped log-likelihood
//!
//! ```text
//! sum_j Delta_ij (log(tau_ij lambda_j) + X_i'beta + Z_ij'alpha)
//!   - exp(X_i'beta) sum_j omega lambda_j exp(Z_ij'alpha) Phi_ij
//! ```
//!
//! is equivalent to a Poisson log-likelihood with mean
//! `mu_ij = W_ij lambda_j exp(X_i'beta + Z_ij'alpha)` up to an additive
//! constant that does not depend on the parameters; both forms are
//! implemented here and the equivalence is pinned by tests.

use statrs::function::gamma::ln_gamma;

use crate::cohort::BinnedCohort;
use crate::error::{Error, Result};

/// Effective exposures per group and bin: `phi` is dimensionless
/// person-bins, `w = omega * phi` is person-time in months.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTable {
    pub phi: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

/// Piecewise-constant hazard parameters: per-bin baseline rates (per month)
/// plus log-hazard-ratio covariate effects.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardParams {
    /// Baseline hazard rate per month in each bin; nonnegative.
    pub lambda: Vec<f64>,
    /// Effects of the time-independent covariates.
    pub beta: Vec<f64>,
    /// Effects of the time-varying covariates.
    pub alpha: Vec<f64>,
}

impl HazardParams {
    pub fn baseline(lambda: Vec<f64>) -> Self {
        Self {
            lambda,
            beta: Vec::new(),
            alpha: Vec::new(),
        }
    }

    fn validate(&self, cohort: &BinnedCohort) -> Result<()> {
        if self.lambda.len() != cohort.bins() {
            return Err(Error::Validation(format!(
                "expected {} per-bin hazard rates, got {}",
                cohort.bins(),
                self.lambda.len()
            )));
        }
        if self.beta.len() != cohort.p() || self.alpha.len() != cohort.q() {
            return Err(Error::Validation(format!(
                "effect dimensions (p = {}, q = {}) do not match cohort (p = {}, q = {})",
                self.beta.len(),
                self.alpha.len(),
                cohort.p(),
                cohort.q()
            )));
        }
        if self.lambda.iter().any(|l| !l.is_finite() || *l < 0.0)
            || self.beta.iter().chain(&self.alpha).any(|v| !v.is_finite())
        {
            return Err(Error::Validation(
                "hazard rates must be nonnegative and effects finite".to_string(),
            ));
        }
        Ok(())
    }
}

/// A log-likelihood value. The degenerate case (an observed failure in a
/// bin whose hazard or occupancy is exactly zero) is a legal boundary, so it
/// is reported as a flagged value rather than an error: optimizers and
/// samplers reject it instead of crashing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLik {
    Finite(f64),
    NegInfinite,
}

impl LogLik {
    /// The value as a float, with the degenerate case mapped to `-inf`.
    pub fn value(self) -> f64 {
        match self {
            LogLik::Finite(v) => v,
            LogLik::NegInfinite => f64::NEG_INFINITY,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, LogLik::NegInfinite)
    }
}

/// Evaluates `Phi_ij` and `W_ij` for every cell of the cohort.
pub fn compute_exposures(cohort: &BinnedCohort) -> ExposureTable {
    let omega = cohort.grid().omega();
    let n_groups = cohort.n_groups();
    let bins = cohort.bins();
    let mut phi = vec![vec![0.0; bins]; n_groups];
    let mut w = vec![vec![0.0; bins]; n_groups];
    for i in 0..n_groups {
        for j in 0..bins {
            let exits = (cohort.delta(i, j) + cohort.gamma(i, j)) as f64;
            let p = cohort.tau(i, j) / omega * exits + cohort.n(i, j) as f64 - exits;
            phi[i][j] = p;
            w[i][j] = omega * p;
        }
    }
    ExposureTable { phi, w }
}

pub(crate) fn linear_predictor(cohort: &BinnedCohort, params: &HazardParams, i: usize, j: usize) -> f64 {
    let xb: f64 = cohort
        .x_row(i)
        .iter()
        .zip(&params.beta)
        .map(|(x, b)| x * b)
        .sum();
    let za: f64 = cohort
        .z_row(i, j)
        .iter()
        .zip(&params.alpha)
        .map(|(z, a)| z * a)
        .sum();
    xb + za
}

/// Grouped piecewise-exponential log-likelihood.
pub fn log_likelihood_grouped(cohort: &BinnedCohort, params: &HazardParams) -> Result<LogLik> {
    params.validate(cohort)?;
    let exposures = compute_exposures(cohort);
    let omega = cohort.grid().omega();
    let mut total = 0.0;
    for i in 0..cohort.n_groups() {
        for j in 0..cohort.bins() {
            let delta = cohort.delta(i, j) as f64;
            let eta = linear_predictor(cohort, params, i, j);
            if delta > 0.0 {
                let rate_at_exit = cohort.tau(i, j) * params.lambda[j];
                if rate_at_exit <= 0.0 {
                    return Ok(LogLik::NegInfinite);
                }
                total += delta * (rate_at_exit.ln() + eta);
            }
            total -= omega * params.lambda[j] * eta.exp() * exposures.phi[i][j];
        }
    }
    Ok(LogLik::Finite(total))
}

/// Poisson log-likelihood with mean `mu_ij = W_ij lambda_j exp(eta_ij)`,
/// including the `-log(Delta_ij!)` normalizing terms.
pub fn log_likelihood_poisson(cohort: &BinnedCohort, params: &HazardParams) -> Result<LogLik> {
    params.validate(cohort)?;
    let exposures = compute_exposures(cohort);
    let mut total = 0.0;
    for i in 0..cohort.n_groups() {
        for j in 0..cohort.bins() {
            let y = cohort.delta(i, j) as f64;
            let eta = linear_predictor(cohort, params, i, j);
            let mu = exposures.w[i][j] * params.lambda[j] * eta.exp();
            if y > 0.0 {
                if mu <= 0.0 {
                    return Ok(LogLik::NegInfinite);
                }
                total += y * mu.ln() - ln_gamma(y + 1.0);
            }
            total -= mu;
        }
    }
    Ok(LogLik::Finite(total))
}

/// Cumulative hazard contribution of group `i`:
/// `exp(X_i'beta) * sum_j omega lambda_j exp(Z_ij'alpha) Phi_ij`.
pub fn cumulative_hazard(cohort: &BinnedCohort, params: &HazardParams, group: usize) -> Result<f64> {
    params.validate(cohort)?;
    if group >= cohort.n_groups() {
        return Err(Error::Validation(format!(
            "group index {group} out of range (cohort has {})",
            cohort.n_groups()
        )));
    }
    let exposures = compute_exposures(cohort);
    let omega = cohort.grid().omega();
    let xb: f64 = cohort
        .x_row(group)
        .iter()
        .zip(&params.beta)
        .map(|(x, b)| x * b)
        .sum();
    let inner: f64 = (0..cohort.bins())
        .map(|j| {
            let za: f64 = cohort
                .z_row(group, j)
                .iter()
                .zip(&params.alpha)
                .map(|(z, a)| z * a)
                .sum();
            omega * params.lambda[j] * za.exp() * exposures.phi[group][j]
        })
        .sum();
    Ok(xb.exp() * inner)
}
