//! Piecewise-exponential Poisson GLM with a log-exposure offset.
//!
//! The grouped likelihood is maximized by fitting the Poisson regression
//!
//! ```text
//! log mu_ij = log W_ij + log lambda_j + X_i'beta + Z_ij'alpha
//! ```
//!
//! by iteratively reweighted least squares. The design carries one
//! indicator column per bin (no intercept) plus the covariate columns.
//! Bins with zero observed events put the hazard MLE on the boundary
//! (`lambda_j = 0`, log scale diverging); they are profiled out of the
//! iteration and reported with a boundary flag and infinite standard error
//! rather than failing the fit.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::BinnedCohort;
use crate::error::{Error, Result};
use crate::estimate::{EffectEstimate, HazardEstimate};
use crate::likelihood::{compute_exposures, log_likelihood_poisson, HazardParams};
use crate::linalg::{check_design_rank, weighted_cross, MIN_WEIGHT};

const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 20;
const SCORE_TOL: f64 = 1e-8;
const DEVIANCE_TOL: f64 = 1e-10;

/// A fitted piecewise-exponential Poisson GLM.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Baseline hazard per month in each bin; exactly 0.0 on boundary bins.
    pub lambda: Vec<f64>,
    /// Standard error of `log lambda_j`; infinite on boundary bins.
    pub log_lambda_se: Vec<f64>,
    /// True where the bin saw zero events and the MLE sits on the boundary.
    pub boundary: Vec<bool>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub alpha_se: Vec<f64>,
    /// Covariance of `(log lambda_1..J, beta, alpha)`, `(J+p+q)` square,
    /// from the inverse observed information. Boundary-bin rows and columns
    /// carry an infinite diagonal and zero cross terms.
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Residual deviance of the Poisson regression.
    pub deviance: f64,
    /// Poisson-form log-likelihood at the optimum, constants included.
    pub log_lik: f64,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

/// Per-parameter and per-bin Wald intervals at a given coverage level, on
/// both reporting scales.
#[derive(Debug, Clone)]
pub struct WaldIntervals {
    /// Hazard intervals from the log scale, exponentiated: always positive.
    pub hazard: HazardEstimate,
    /// Delta-method intervals directly on the hazard scale,
    /// `lambda_j -+ z* lambda_j se(log lambda_j)`: the lower bound can go
    /// below zero, which is the known drawback of this scale.
    pub lambda_scale: Vec<(f64, f64)>,
    pub level: f64,
}

/// Fits the model by IWLS. Deterministic: identical input gives an
/// identical fit. Errors on collinear design columns (naming them) and on
/// non-convergence; zero-event bins are boundary-flagged, not errors.
pub fn fit_glm(cohort: &BinnedCohort) -> Result<GlmFit> {
    let j = cohort.bins();
    let (p, q) = (cohort.p(), cohort.q());
    let exposures = compute_exposures(cohort);
    let events = cohort.events_per_bin();

    // A cell with observed events but no person-time has no finite MLE.
    for i in 0..cohort.n_groups() {
        for b in 0..j {
            if cohort.delta(i, b) > 0 && exposures.w[i][b] <= 0.0 {
                return Err(Error::Validation(format!(
                    "group {i} bin {b} has {} events but zero exposure",
                    cohort.delta(i, b)
                )));
            }
        }
    }

    let active_bins: Vec<usize> = (0..j).filter(|&b| events[b] > 0).collect();
    let boundary: Vec<bool> = (0..j).map(|b| events[b] == 0).collect();
    if active_bins.is_empty() {
        // No events anywhere: every bin is on the boundary and the effects
        // are unidentified. Report the degenerate fit rather than failing.
        let mut covariance = vec![vec![0.0; j + p + q]; j + p + q];
        for (r, row) in covariance.iter_mut().enumerate() {
            row[r] = f64::INFINITY;
        }
        return Ok(GlmFit {
            lambda: vec![0.0; j],
            log_lambda_se: vec![f64::INFINITY; j],
            boundary,
            beta: vec![0.0; p],
            alpha: vec![0.0; q],
            beta_se: vec![f64::INFINITY; p],
            alpha_se: vec![f64::INFINITY; q],
            covariance,
            converged: true,
            iterations: 0,
            deviance: 0.0,
            log_lik: 0.0,
            x_names: cohort.x_names().to_vec(),
            z_names: cohort.z_names().to_vec(),
        });
    }

    // Design rows: cells with positive exposure in an active bin. Cells of
    // boundary bins contribute nothing to the likelihood once lambda_j = 0.
    let n_cols = active_bins.len() + p + q;
    let mut names: Vec<String> = active_bins.iter().map(|b| format!("bin{:02}", b + 1)).collect();
    names.extend(cohort.x_names().iter().cloned());
    names.extend(cohort.z_names().iter().cloned());

    let mut design: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    for i in 0..cohort.n_groups() {
        for (col, &b) in active_bins.iter().enumerate() {
            let w = exposures.w[i][b];
            if w <= 0.0 {
                continue;
            }
            let mut row = vec![0.0; n_cols];
            row[col] = 1.0;
            for (s, x) in cohort.x_row(i).iter().enumerate() {
                row[active_bins.len() + s] = *x;
            }
            for (s, z) in cohort.z_row(i, b).iter().enumerate() {
                row[active_bins.len() + p + s] = *z;
            }
            design.extend_from_slice(&row);
            ys.push(cohort.delta(i, b) as f64);
            offsets.push(w.ln());
        }
    }
    let n_rows = ys.len();
    let x = DMatrix::from_row_slice(n_rows, n_cols, &design);
    check_design_rank(&x, &names)?;
    let y = DVector::from_vec(ys);
    let offset = DVector::from_vec(offsets);

    // Start from the event-rate estimate per bin, effects at zero.
    let mut coef = DVector::zeros(n_cols);
    for (col, &b) in active_bins.iter().enumerate() {
        let d = events[b] as f64;
        let w: f64 = (0..cohort.n_groups()).map(|i| exposures.w[i][b]).sum();
        coef[col] = ((d + 0.5) / w).ln();
    }

    let mut eta = &x * &coef + &offset;
    let mut mu = eta.map(f64::exp);
    let mut dev = deviance(&y, &mu);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let target = iwls_solve(&x, &mu, &working_response(&eta, &offset, &y, &mu))?;
        let step = &target - &coef;

        // Step-halving keeps the deviance monotone on sparse data.
        let mut scale = 1.0;
        let mut halvings = 0;
        let (next_coef, next_eta, next_mu, next_dev) = loop {
            let c = &coef + &step * scale;
            let e = &x * &c + &offset;
            let m = e.map(f64::exp);
            let d = deviance(&y, &m);
            if d <= dev + 1e-12 || halvings >= MAX_HALVINGS {
                if d > dev + 1e-8 {
                    return Err(Error::Numerical(format!(
                        "IWLS step-halving failed to reduce the deviance at iteration {iterations}"
                    )));
                }
                break (c, e, m, d);
            }
            scale /= 2.0;
            halvings += 1;
        };

        let dev_change = (dev - next_dev).abs();
        coef = next_coef;
        eta = next_eta;
        mu = next_mu;
        let score_max = (x.transpose() * (&y - &mu)).amax();
        let dev_converged = dev_change < DEVIANCE_TOL * (0.1 + next_dev.abs());
        dev = next_dev;
        if score_max < SCORE_TOL || dev_converged {
            // One polishing Newton step: quadratic convergence turns an
            // already-met tolerance into machine-precision score equations.
            coef = iwls_solve(&x, &mu, &working_response(&eta, &offset, &y, &mu))?;
            eta = &x * &coef + &offset;
            mu = eta.map(f64::exp);
            dev = deviance(&y, &mu);
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "IWLS did not converge within {MAX_ITERATIONS} iterations"
        )));
    }

    // Observed information at the optimum and its inverse.
    let info = weighted_cross(&x, &mu);
    let cov_active = Cholesky::new(info)
        .ok_or_else(|| {
            Error::Numerical("information matrix not positive definite at the optimum".to_string())
        })?
        .inverse();

    // Scatter the reduced fit back onto the full (J + p + q) layout.
    let n_active = active_bins.len();
    let mut lambda = vec![0.0; j];
    let mut log_lambda_se = vec![f64::INFINITY; j];
    let full = j + p + q;
    let mut covariance = vec![vec![0.0; full]; full];
    for b in 0..j {
        if boundary[b] {
            covariance[b][b] = f64::INFINITY;
        }
    }
    let full_index = |reduced: usize| -> usize {
        if reduced < n_active {
            active_bins[reduced]
        } else {
            j + (reduced - n_active)
        }
    };
    for r in 0..n_cols {
        for c in 0..n_cols {
            covariance[full_index(r)][full_index(c)] = cov_active[(r, c)];
        }
    }
    for (col, &b) in active_bins.iter().enumerate() {
        lambda[b] = coef[col].exp();
        log_lambda_se[b] = cov_active[(col, col)].sqrt();
    }
    let beta: Vec<f64> = (0..p).map(|s| coef[n_active + s]).collect();
    let alpha: Vec<f64> = (0..q).map(|s| coef[n_active + p + s]).collect();
    let beta_se: Vec<f64> = (0..p).map(|s| cov_active[(n_active + s, n_active + s)].sqrt()).collect();
    let alpha_se: Vec<f64> = (0..q)
        .map(|s| cov_active[(n_active + p + s, n_active + p + s)].sqrt())
        .collect();

    let params = HazardParams {
        lambda: lambda.clone(),
        beta: beta.clone(),
        alpha: alpha.clone(),
    };
    let log_lik = log_likelihood_poisson(cohort, &params)?.value();

    Ok(GlmFit {
        lambda,
        log_lambda_se,
        boundary,
        beta,
        alpha,
        beta_se,
        alpha_se,
        covariance,
        converged,
        iterations,
        deviance: dev,
        log_lik,
        x_names: cohort.x_names().to_vec(),
        z_names: cohort.z_names().to_vec(),
    })
}

impl GlmFit {
    /// Fitted counts `Yhat_ij = W_ij lambda_j exp(X_i'beta + Z_ij'alpha)`,
    /// for the training cohort or a compatible held-out one.
    pub fn predict_counts(&self, cohort: &BinnedCohort) -> Result<Vec<Vec<f64>>> {
        if cohort.bins() != self.lambda.len()
            || cohort.x_names() != self.x_names.as_slice()
            || cohort.z_names() != self.z_names.as_slice()
        {
            return Err(Error::Validation(
                "cohort bins/covariates do not match the fitted design".to_string(),
            ));
        }
        let exposures = compute_exposures(cohort);
        let mut out = vec![vec![0.0; cohort.bins()]; cohort.n_groups()];
        for i in 0..cohort.n_groups() {
            let xb: f64 = cohort
                .x_row(i)
                .iter()
                .zip(&self.beta)
                .map(|(x, b)| x * b)
                .sum();
            for b in 0..cohort.bins() {
                let za: f64 = cohort
                    .z_row(i, b)
                    .iter()
                    .zip(&self.alpha)
                    .map(|(z, a)| z * a)
                    .sum();
                out[i][b] = exposures.w[i][b] * self.lambda[b] * (xb + za).exp();
            }
        }
        Ok(out)
    }

    /// Normal-theory intervals at coverage `level`, on the exponentiated
    /// log scale (positive) and the delta-method hazard scale (lower bound
    /// may be negative). Boundary bins report `[0, inf)` on both scales.
    pub fn wald_intervals(&self, level: f64) -> Result<WaldIntervals> {
        if !(0.0 < level && level < 1.0) {
            return Err(Error::Config(format!(
                "coverage level must be in (0,1), got {level}"
            )));
        }
        let zstar = Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + level / 2.0);
        let j = self.lambda.len();
        let mut lower = vec![0.0; j];
        let mut upper = vec![f64::INFINITY; j];
        let mut lambda_scale = vec![(0.0, f64::INFINITY); j];
        for b in 0..j {
            if self.boundary[b] {
                continue;
            }
            let l = self.lambda[b];
            let se = self.log_lambda_se[b];
            lower[b] = l * (-zstar * se).exp();
            upper[b] = l * (zstar * se).exp();
            lambda_scale[b] = (l - zstar * l * se, l + zstar * l * se);
        }
        let effect = |name: &String, est: f64, se: f64| EffectEstimate {
            name: name.clone(),
            estimate: est,
            se,
            lower: est - zstar * se,
            upper: est + zstar * se,
        };
        let beta = self
            .x_names
            .iter()
            .zip(self.beta.iter().zip(&self.beta_se))
            .map(|(n, (e, s))| effect(n, *e, *s))
            .collect();
        let alpha = self
            .z_names
            .iter()
            .zip(self.alpha.iter().zip(&self.alpha_se))
            .map(|(n, (e, s))| effect(n, *e, *s))
            .collect();
        Ok(WaldIntervals {
            hazard: HazardEstimate {
                lambda: self.lambda.clone(),
                lower,
                upper,
                boundary: self.boundary.clone(),
                beta,
                alpha,
                level,
            },
            lambda_scale,
            level,
        })
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }
}

fn working_response(
    eta: &DVector<f64>,
    offset: &DVector<f64>,
    y: &DVector<f64>,
    mu: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_iterator(
        eta.len(),
        (0..eta.len()).map(|r| (eta[r] - offset[r]) + (y[r] - mu[r]) / mu[r].max(MIN_WEIGHT)),
    )
}

/// Solves the weighted normal equations `X'WX b = X'Wz` with `W = diag(mu)`.
fn iwls_solve(x: &DMatrix<f64>, mu: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let xtwx = weighted_cross(x, mu);
    let mut xtwz = DVector::zeros(x.ncols());
    for r in 0..x.nrows() {
        let w = mu[r].max(MIN_WEIGHT);
        for c in 0..x.ncols() {
            xtwz[c] += x[(r, c)] * w * z[r];
        }
    }
    let chol = Cholesky::new(xtwx)
        .ok_or_else(|| Error::Numerical("weighted normal equations are singular".to_string()))?;
    Ok(chol.solve(&xtwz))
}

fn deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for r in 0..y.len() {
        if y[r] > 0.0 {
            dev += y[r] * (y[r] / mu[r]).ln() - (y[r] - mu[r]);
        } else {
            dev += mu[r];
        }
    }
    2.0 * dev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinGrid;

    fn two_bin_cohort() -> BinnedCohort {
        let grid = BinGrid::new(2, 7).unwrap();
        // Bin 1: N=100, 3 events, 1 censored; bin 2: everyone exits.
        BinnedCohort::counts_only(
            grid,
            vec![vec![3, 7]],
            vec![vec![1, 89]],
            vec![vec![100, 96]],
            vec![vec![3.0, 3.0]],
        )
        .unwrap()
    }

    #[test]
    fn matches_closed_form_rates() {
        let cohort = two_bin_cohort();
        let fit = fit_glm(&cohort).unwrap();
        // W_1 = 6*(0.5*4 + 96) = 588, W_2 = 6*(0.5*96) = 288.
        let expect = [3.0 / 588.0, 7.0 / 288.0];
        for b in 0..2 {
            let rel = (fit.lambda[b] - expect[b]).abs() / expect[b];
            assert!(rel < 1e-13, "bin {b}: rel err {rel}");
        }
        assert!(fit.converged);
        assert!(!fit.boundary.iter().any(|&f| f));
    }

    #[test]
    fn zero_event_bin_is_boundary_not_error() {
        let grid = BinGrid::new(2, 7).unwrap();
        let cohort = BinnedCohort::counts_only(
            grid,
            vec![vec![5, 0]],
            vec![vec![0, 95]],
            vec![vec![100, 95]],
            vec![vec![3.0, 3.0]],
        )
        .unwrap();
        let fit = fit_glm(&cohort).unwrap();
        assert!(fit.boundary[1]);
        assert_eq!(fit.lambda[1], 0.0);
        assert!(fit.log_lambda_se[1].is_infinite());
        let ci = fit.wald_intervals(0.95).unwrap();
        assert_eq!(ci.hazard.lower[1], 0.0);
        assert!(ci.hazard.upper[1].is_infinite());
        // The non-boundary bin still gets its closed-form rate.
        let expect = 5.0 / (6.0 * 97.5);
        assert!((fit.lambda[0] - expect).abs() / expect < 1e-13);
    }

    #[test]
    fn duplicate_covariate_is_named() {
        let grid = BinGrid::new(2, 7).unwrap();
        let z = vec![vec![vec![1.0, 1.0], vec![-0.5, -0.5]]];
        let cohort = BinnedCohort::new(
            grid,
            vec![vec![3, 7]],
            vec![vec![1, 89]],
            vec![vec![100, 96]],
            vec![vec![3.0, 3.0]],
            vec![Vec::new()],
            z,
            Vec::new(),
            vec!["rain".to_string(), "rain_copy".to_string()],
        )
        .unwrap();
        match fit_glm(&cohort) {
            Err(Error::RankDeficient { columns }) => {
                assert!(columns.contains(&"rain_copy".to_string()), "{columns:?}");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn fitted_counts_match_observed_totals() {
        let cohort = two_bin_cohort();
        let fit = fit_glm(&cohort).unwrap();
        let yhat = fit.predict_counts(&cohort).unwrap();
        let total: f64 = yhat.iter().flatten().sum();
        assert!((total - 10.0).abs() < 1e-8, "total {total}");
    }

    #[test]
    fn refitting_is_bitwise_deterministic() {
        let cohort = two_bin_cohort();
        let a = fit_glm(&cohort).unwrap();
        let b = fit_glm(&cohort).unwrap();
        for bin in 0..2 {
            assert_eq!(a.lambda[bin].to_bits(), b.lambda[bin].to_bits());
            assert_eq!(a.log_lambda_se[bin].to_bits(), b.log_lambda_se[bin].to_bits());
        }
    }
}
