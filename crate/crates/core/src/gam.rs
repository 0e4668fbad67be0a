//! Poisson GAM: smooth cyclic baseline plus linear covariate effects.
//!
//! The log mean replaces the per-bin baseline of the GLM with a smooth
//! periodic function evaluated at the bin midpoint,
//!
//! ```text
//! log mu_ij = log W_ij + g(t_j) + X_i'beta + Z_ij'alpha,
//! ```
//!
//! where `g` is a cyclic cubic regression spline. Fitting maximizes the
//! Poisson log-likelihood minus the curvature penalty
//! `(lambda/2) * integral g''(t)^2 dt` by penalized IWLS; the smoothing
//! parameter is chosen by GCV over a fixed logarithmic grid. Bin-level
//! hazards are reported as bin averages of `exp(g)` (the hazard scale), by
//! composite Simpson quadrature, with delta-method intervals.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::cohort::BinnedCohort;
use crate::cyclic::{build_cyclic_basis, CyclicSplineBasis};
use crate::error::{Error, Result};
use crate::estimate::{EffectEstimate, HazardEstimate};
use crate::grid::{BinGrid, SEASON_MONTHS};
use crate::likelihood::compute_exposures;
use crate::linalg::{check_design_rank, weighted_cross, MIN_WEIGHT};

const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 20;
const SCORE_TOL: f64 = 1e-8;
const DEVIANCE_TOL: f64 = 1e-10;
/// Simpson nodes per bin for the hazard-scale bin averages.
const QUADRATURE_NODES: usize = 17;

/// One evaluated point of the GCV sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvPoint {
    pub lambda: f64,
    pub gcv: f64,
    pub edf: f64,
    pub converged: bool,
}

/// A fitted Poisson GAM.
#[derive(Debug, Clone)]
pub struct GamFit {
    basis: CyclicSplineBasis,
    /// Knot values of the smooth log-baseline `g`.
    pub spline_coefficients: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Selected curvature penalty weight.
    pub smoothing_parameter: f64,
    /// Effective degrees of freedom `tr((X'WX + lambda S)^{-1} X'WX)`.
    pub edf: f64,
    /// Bayesian posterior covariance `(X'WX + lambda S)^{-1}` over
    /// `(spline coefficients, beta, alpha)`.
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Poisson log-likelihood at the fit, constants included.
    pub log_lik: f64,
    /// GCV value at the selected smoothing parameter.
    pub gcv: f64,
    /// The full sweep, for diagnostics and the grid-minimum invariant.
    pub gcv_table: Vec<GcvPoint>,
    /// Set when the GCV minimum sits on an end of the search grid.
    pub smoothing_at_grid_boundary: bool,
    /// Set when the cohort had no events at all: the log-baseline diverges
    /// and the reported hazard is identically zero.
    pub boundary: bool,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

/// The 30 log-spaced smoothing weights in `[1e-4, 1e6]` searched by GCV.
pub fn gcv_grid() -> Vec<f64> {
    let (lo, hi) = (1e-4f64.ln(), 1e6f64.ln());
    (0..30)
        .map(|i| (lo + (hi - lo) * i as f64 / 29.0).exp())
        .collect()
}

/// Fits the GAM with basis dimension `k`, selecting the smoothing
/// parameter by GCV over [`gcv_grid`].
pub fn fit_gam(cohort: &BinnedCohort, k: usize) -> Result<GamFit> {
    let design = GamDesign::build(cohort, k)?;
    if design.all_zero_events {
        return Ok(design.boundary_fit());
    }
    let grid = gcv_grid();
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, PirlsState)> = None;
    for (idx, &lambda) in grid.iter().enumerate() {
        match design.pirls(lambda) {
            Ok(state) => {
                table.push(GcvPoint {
                    lambda,
                    gcv: state.gcv,
                    edf: state.edf,
                    converged: true,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => state.gcv < b.gcv,
                };
                if better {
                    best = Some((idx, state));
                }
            }
            Err(_) => table.push(GcvPoint {
                lambda,
                gcv: f64::INFINITY,
                edf: f64::NAN,
                converged: false,
            }),
        }
    }
    let (best_idx, state) = best.ok_or_else(|| {
        Error::Numerical("penalized IWLS failed at every smoothing value on the grid".to_string())
    })?;
    let at_boundary = best_idx == 0 || best_idx == grid.len() - 1;
    Ok(design.finish(state, table, at_boundary))
}

/// Fits the GAM at one fixed smoothing weight (no GCV search).
pub fn fit_gam_at(cohort: &BinnedCohort, k: usize, lambda: f64) -> Result<GamFit> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!(
            "smoothing parameter must be finite and nonnegative, got {lambda}"
        )));
    }
    let design = GamDesign::build(cohort, k)?;
    if design.all_zero_events {
        return Ok(design.boundary_fit());
    }
    let state = design.pirls(lambda)?;
    let table = vec![GcvPoint {
        lambda,
        gcv: state.gcv,
        edf: state.edf,
        converged: true,
    }];
    Ok(design.finish(state, table, false))
}

impl GamFit {
    pub fn basis(&self) -> &CyclicSplineBasis {
        &self.basis
    }

    /// Smooth log-baseline evaluated at `t` months into the season.
    pub fn g(&self, t: f64) -> f64 {
        self.basis
            .design_row(t)
            .iter()
            .zip(&self.spline_coefficients)
            .map(|(r, c)| r * c)
            .sum()
    }

    /// Fitted counts `Yhat_ij = W_ij exp(g(t_j)) exp(X_i'beta + Z_ij'alpha)`
    /// with `t_j` the bin midpoint, matching the fitting model.
    pub fn predict_counts(&self, cohort: &BinnedCohort) -> Result<Vec<Vec<f64>>> {
        if cohort.x_names() != self.x_names.as_slice()
            || cohort.z_names() != self.z_names.as_slice()
        {
            return Err(Error::Validation(
                "cohort covariates do not match the fitted design".to_string(),
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
                let g = self.g(cohort.grid().bin_mid(b));
                out[i][b] = exposures.w[i][b] * (g + xb + za).exp();
            }
        }
        Ok(out)
    }

    /// Bin-level hazard: per bin, the average of `exp(g)` by composite
    /// Simpson quadrature, with pointwise delta-method intervals (reported
    /// on the log scale, so the bounds stay positive).
    pub fn extract_hazard(&self, grid: &BinGrid, level: f64) -> Result<HazardEstimate> {
        if !(0.0 < level && level < 1.0) {
            return Err(Error::Config(format!(
                "coverage level must be in (0,1), got {level}"
            )));
        }
        let zstar = Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + level / 2.0);
        let j = grid.j();
        let k = self.basis.k();
        if self.boundary {
            return Ok(HazardEstimate {
                lambda: vec![0.0; j],
                lower: vec![0.0; j],
                upper: vec![f64::INFINITY; j],
                boundary: vec![true; j],
                beta: Vec::new(),
                alpha: Vec::new(),
                level,
            });
        }
        let coef = DVector::from_column_slice(&self.spline_coefficients);
        let mut lambda = vec![0.0; j];
        let mut lower = vec![0.0; j];
        let mut upper = vec![0.0; j];
        for b in 0..j {
            let (value, grad) = self.bin_average(grid, b, &coef);
            // Delta method through the spline block of the covariance.
            let mut var = 0.0;
            for r in 0..k {
                for c in 0..k {
                    var += grad[r] * self.covariance[r][c] * grad[c];
                }
            }
            let se = var.max(0.0).sqrt();
            let se_log = se / value;
            lambda[b] = value;
            lower[b] = value * (-zstar * se_log).exp();
            upper[b] = value * (zstar * se_log).exp();
        }
        let effect = |name: &String, est: f64, idx: usize| {
            let se = self.covariance[idx][idx].max(0.0).sqrt();
            EffectEstimate {
                name: name.clone(),
                estimate: est,
                se,
                lower: est - zstar * se,
                upper: est + zstar * se,
            }
        };
        let beta = self
            .x_names
            .iter()
            .enumerate()
            .map(|(s, n)| effect(n, self.beta[s], k + s))
            .collect();
        let alpha = self
            .z_names
            .iter()
            .enumerate()
            .map(|(s, n)| effect(n, self.alpha[s], k + self.beta.len() + s))
            .collect();
        Ok(HazardEstimate {
            lambda,
            lower,
            upper,
            boundary: vec![false; j],
            beta,
            alpha,
            level,
        })
    }

    /// Average of `exp(g)` over bin `b` and its gradient with respect to
    /// the spline coefficients.
    fn bin_average(&self, grid: &BinGrid, b: usize, coef: &DVector<f64>) -> (f64, DVector<f64>) {
        let omega = grid.omega();
        let start = grid.bin_start(b);
        let h = omega / (QUADRATURE_NODES - 1) as f64;
        let mut integral = 0.0;
        let mut grad = DVector::zeros(self.basis.k());
        for s in 0..QUADRATURE_NODES {
            let weight = if s == 0 || s == QUADRATURE_NODES - 1 {
                1.0
            } else if s % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 3.0;
            let row = self.basis.design_row(start + s as f64 * h);
            let val = row.dot(coef).exp();
            integral += weight * val;
            grad += row * (weight * val);
        }
        (integral / omega, grad / omega)
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }
}

/// Assembled design shared by every smoothing value of one fit.
struct GamDesign {
    basis: CyclicSplineBasis,
    x: DMatrix<f64>,
    y: DVector<f64>,
    offset: DVector<f64>,
    penalty: DMatrix<f64>,
    k: usize,
    p: usize,
    q: usize,
    init_const: f64,
    all_zero_events: bool,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

/// Converged penalized-IWLS state at one smoothing value.
struct PirlsState {
    lambda: f64,
    coef: DVector<f64>,
    covariance: DMatrix<f64>,
    edf: f64,
    deviance: f64,
    log_lik: f64,
    gcv: f64,
    iterations: usize,
}

impl GamDesign {
    fn build(cohort: &BinnedCohort, k: usize) -> Result<Self> {
        // Binned data carry only `J` distinct time points, so more knots
        // than bins cannot be identified.
        if k > cohort.bins() {
            return Err(Error::Config(format!(
                "basis dimension {k} exceeds the number of bins {}",
                cohort.bins()
            )));
        }
        let basis = build_cyclic_basis(k, SEASON_MONTHS)?;
        let exposures = compute_exposures(cohort);
        let (p, q) = (cohort.p(), cohort.q());
        let n_cols = k + p + q;
        let mut rows: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut offsets: Vec<f64> = Vec::new();
        for i in 0..cohort.n_groups() {
            for b in 0..cohort.bins() {
                let w = exposures.w[i][b];
                if w <= 0.0 {
                    if cohort.delta(i, b) > 0 {
                        return Err(Error::Validation(format!(
                            "group {i} bin {b} has events but zero exposure"
                        )));
                    }
                    continue;
                }
                let spline = basis.design_row(cohort.grid().bin_mid(b));
                rows.extend(spline.iter());
                rows.extend(cohort.x_row(i));
                rows.extend(cohort.z_row(i, b));
                ys.push(cohort.delta(i, b) as f64);
                offsets.push(w.ln());
            }
        }
        if ys.is_empty() {
            return Err(Error::Validation(
                "cohort has no cells with positive exposure".to_string(),
            ));
        }
        let n_rows = ys.len();
        let x = DMatrix::from_row_slice(n_rows, n_cols, &rows);

        // Identifiability screen: the spline spans constants, so the
        // covariates must be independent of the constant column and of
        // each other.
        let mut screen = DMatrix::zeros(n_rows, 1 + p + q);
        let mut screen_names = vec!["baseline constant".to_string()];
        screen_names.extend(cohort.x_names().iter().cloned());
        screen_names.extend(cohort.z_names().iter().cloned());
        for r in 0..n_rows {
            screen[(r, 0)] = 1.0;
            for c in 0..(p + q) {
                screen[(r, 1 + c)] = x[(r, k + c)];
            }
        }
        check_design_rank(&screen, &screen_names)?;

        let total_events: f64 = ys.iter().sum();
        let total_w: f64 = offsets.iter().map(|o| o.exp()).sum();
        let init_const = ((total_events + 0.5) / total_w).ln();

        let mut penalty = DMatrix::zeros(n_cols, n_cols);
        penalty.view_mut((0, 0), (k, k)).copy_from(basis.penalty());

        Ok(Self {
            basis,
            x,
            y: DVector::from_vec(ys),
            offset: DVector::from_vec(offsets),
            penalty,
            k,
            p,
            q,
            init_const,
            all_zero_events: total_events == 0.0,
            x_names: cohort.x_names().to_vec(),
            z_names: cohort.z_names().to_vec(),
        })
    }

    /// Degenerate no-events fit: the log-baseline diverges to -inf.
    fn boundary_fit(&self) -> GamFit {
        let n_cols = self.k + self.p + self.q;
        GamFit {
            basis: self.basis.clone(),
            spline_coefficients: vec![f64::NEG_INFINITY; self.k],
            beta: vec![0.0; self.p],
            alpha: vec![0.0; self.q],
            smoothing_parameter: 0.0,
            edf: 0.0,
            covariance: vec![vec![0.0; n_cols]; n_cols],
            converged: true,
            iterations: 0,
            deviance: 0.0,
            log_lik: 0.0,
            gcv: 0.0,
            gcv_table: Vec::new(),
            smoothing_at_grid_boundary: false,
            boundary: true,
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
        }
    }

    /// Penalized IWLS at one fixed smoothing weight, from a cold start.
    fn pirls(&self, lambda: f64) -> Result<PirlsState> {
        let n_cols = self.x.ncols();
        let mut coef = DVector::zeros(n_cols);
        for c in 0..self.k {
            coef[c] = self.init_const;
        }
        let mut eta = &self.x * &coef + &self.offset;
        let mut mu = eta.map(f64::exp);
        let mut pdev = self.penalized_deviance(&mu, &coef, lambda);
        let mut iterations = 0;
        let mut converged = false;

        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let target = self.solve(&mu, &eta, lambda)?;
            let step = &target - &coef;

            let mut scale = 1.0;
            let mut halvings = 0;
            let mut stalled = false;
            let (next_coef, next_eta, next_mu, next_pdev) = loop {
                let c = &coef + &step * scale;
                let e = &self.x * &c + &self.offset;
                let m = e.map(f64::exp);
                let d = self.penalized_deviance(&m, &c, lambda);
                if d <= pdev + 1e-12 {
                    break (c, e, m, d);
                }
                if halvings >= MAX_HALVINGS {
                    stalled = true;
                    break (coef.clone(), eta.clone(), mu.clone(), pdev);
                }
                scale /= 2.0;
                halvings += 1;
            };
            if stalled {
                // No decrease is achievable along the Newton direction at
                // any scale: the penalized deviance has reached its
                // numerical floor. This happens at very large smoothing
                // parameters, where the exact step is zero and the computed
                // one is rounding noise amplified through the stiff penalty
                // directions. The current iterate is the optimum to working
                // precision; a polish step would only re-inject that noise.
                converged = true;
                break;
            }

            let change = (pdev - next_pdev).abs();
            coef = next_coef;
            eta = next_eta;
            mu = next_mu;
            let score = self.x.transpose() * (&self.y - &mu) - &self.penalty * &coef * lambda;
            let dev_converged = change < DEVIANCE_TOL * (0.1 + next_pdev.abs());
            pdev = next_pdev;
            if score.amax() < SCORE_TOL || dev_converged {
                // Polishing Newton step, as in the unpenalized fit.
                coef = self.solve(&mu, &eta, lambda)?;
                eta = &self.x * &coef + &self.offset;
                mu = eta.map(f64::exp);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "penalized IWLS did not converge within {MAX_ITERATIONS} iterations at lambda = {lambda:e}"
            )));
        }

        let info = weighted_cross(&self.x, &mu);
        let penalized = &info + &self.penalty * lambda;
        let chol = Cholesky::new(penalized).ok_or_else(|| {
            Error::Numerical("penalized information not positive definite".to_string())
        })?;
        let covariance = chol.inverse();
        let edf = (&covariance * &info).trace();
        let n = self.y.len() as f64;
        let deviance = self.deviance(&mu);
        let gcv = n * deviance / (n - edf).powi(2);
        let log_lik = (0..self.y.len())
            .map(|r| {
                let y = self.y[r];
                if y > 0.0 {
                    y * mu[r].ln() - mu[r] - ln_gamma(y + 1.0)
                } else {
                    -mu[r]
                }
            })
            .sum();
        Ok(PirlsState {
            lambda,
            coef,
            covariance,
            edf,
            deviance,
            log_lik,
            gcv,
            iterations,
        })
    }

    fn finish(
        &self,
        state: PirlsState,
        table: Vec<GcvPoint>,
        smoothing_at_grid_boundary: bool,
    ) -> GamFit {
        let n_cols = self.x.ncols();
        let mut covariance = vec![vec![0.0; n_cols]; n_cols];
        for r in 0..n_cols {
            for c in 0..n_cols {
                covariance[r][c] = state.covariance[(r, c)];
            }
        }
        GamFit {
            basis: self.basis.clone(),
            spline_coefficients: state.coef.iter().take(self.k).copied().collect(),
            beta: (0..self.p).map(|s| state.coef[self.k + s]).collect(),
            alpha: (0..self.q).map(|s| state.coef[self.k + self.p + s]).collect(),
            smoothing_parameter: state.lambda,
            edf: state.edf,
            covariance,
            converged: true,
            iterations: state.iterations,
            deviance: state.deviance,
            log_lik: state.log_lik,
            gcv: state.gcv,
            gcv_table: table,
            smoothing_at_grid_boundary,
            boundary: false,
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
        }
    }

    fn solve(&self, mu: &DVector<f64>, eta: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let n_cols = self.x.ncols();
        let mut xtwz = DVector::zeros(n_cols);
        for r in 0..self.x.nrows() {
            let w = mu[r].max(MIN_WEIGHT);
            let z = (eta[r] - self.offset[r]) + (self.y[r] - mu[r]) / w;
            for c in 0..n_cols {
                xtwz[c] += self.x[(r, c)] * w * z;
            }
        }
        let lhs = weighted_cross(&self.x, mu) + &self.penalty * lambda;
        let chol = Cholesky::new(lhs).ok_or_else(|| {
            Error::Numerical("penalized normal equations are singular".to_string())
        })?;
        Ok(chol.solve(&xtwz))
    }

    fn deviance(&self, mu: &DVector<f64>) -> f64 {
        let mut dev = 0.0;
        for r in 0..self.y.len() {
            let y = self.y[r];
            if y > 0.0 {
                dev += y * (y / mu[r]).ln() - (y - mu[r]);
            } else {
                dev += mu[r];
            }
        }
        2.0 * dev
    }

    fn penalized_deviance(&self, mu: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
        self.deviance(mu) + lambda * (&self.penalty * coef).dot(coef)
    }
}
