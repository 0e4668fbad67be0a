//! Natural cubic smoothing spline with GCV-selected penalty.
//!
//! Used by the ingestion pipeline to carry monthly covariate readings onto
//! arbitrary mid-bin time points. The fit minimizes
//! `sum_i (y_i - f(x_i))^2 + lambda * integral f''(t)^2 dt` over natural
//! cubic splines with knots at the data points; in the value/second-derivative
//! parameterization the solution is `fhat = (I + lambda K)^{-1} y` with
//! `K = Q R^{-1} Q'`, and the fitted curve is evaluated from `fhat` and the
//! interior second derivatives `R^{-1} Q' fhat`. Outside the data range the
//! natural spline continues linearly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smoothing-parameter grid searched by GCV.
const LAMBDA_GRID: (f64, f64, usize) = (1e-6, 1e4, 40);

/// A fitted natural cubic smoothing spline.
#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    x: Vec<f64>,
    fitted: Vec<f64>,
    /// Second derivatives at the interior knots (zero at both ends).
    gamma2: Vec<f64>,
    lambda: f64,
}

impl SmoothingSpline {
    /// Fits with the smoothing parameter chosen by generalized
    /// cross-validation over a logarithmic grid.
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        validate_inputs(x, y)?;
        let n = x.len() as f64;
        let (lo, hi, steps) = LAMBDA_GRID;
        let mut best: Option<(f64, Self)> = None;
        for s in 0..steps {
            let frac = s as f64 / (steps - 1) as f64;
            let lambda = lo * (hi / lo).powf(frac);
            let (spline, trace_a) = fit_at(x, y, lambda)?;
            let rss: f64 = spline
                .fitted
                .iter()
                .zip(y)
                .map(|(f, yi)| (f - yi) * (f - yi))
                .sum();
            let denom = (n - trace_a).max(1e-10);
            let gcv = n * rss / (denom * denom);
            if best.as_ref().map_or(true, |(g, _)| gcv < *g) {
                best = Some((gcv, spline));
            }
        }
        Ok(best.expect("grid is nonempty").1)
    }

    /// Fits with a fixed smoothing parameter.
    pub fn fit_with_lambda(x: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        validate_inputs(x, y)?;
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!(
                "smoothing parameter must be nonnegative, got {lambda}"
            )));
        }
        Ok(fit_at(x, y, lambda)?.0)
    }

    /// The selected smoothing parameter.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Evaluates the fitted curve; linear (natural) extrapolation outside
    /// the data range.
    pub fn evaluate(&self, t: f64) -> f64 {
        let n = self.x.len();
        let x = &self.x;
        if t <= x[0] {
            return self.fitted[0] + self.boundary_slope_left() * (t - x[0]);
        }
        if t >= x[n - 1] {
            return self.fitted[n - 1] + self.boundary_slope_right() * (t - x[n - 1]);
        }
        // Find the interval with x[i] <= t < x[i+1].
        let i = match x.binary_search_by(|xi| xi.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let h = x[i + 1] - x[i];
        let u = t - x[i];
        let v = x[i + 1] - t;
        let (g_l, g_r) = (self.gamma2[i], self.gamma2[i + 1]);
        (u * self.fitted[i + 1] + v * self.fitted[i]) / h
            - u * v / 6.0 * ((1.0 + u / h) * g_r + (1.0 + v / h) * g_l)
    }

    fn boundary_slope_left(&self) -> f64 {
        let h = self.x[1] - self.x[0];
        (self.fitted[1] - self.fitted[0]) / h - h / 6.0 * (self.gamma2[1] + 2.0 * self.gamma2[0])
    }

    fn boundary_slope_right(&self) -> f64 {
        let n = self.x.len();
        let h = self.x[n - 1] - self.x[n - 2];
        (self.fitted[n - 1] - self.fitted[n - 2]) / h
            + h / 6.0 * (2.0 * self.gamma2[n - 1] + self.gamma2[n - 2])
    }
}

fn validate_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "x and y lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Validation(
            "smoothing spline needs at least 3 points".to_string(),
        ));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "smoothing spline abscissae must be strictly increasing".to_string(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "smoothing spline inputs must be finite".to_string(),
        ));
    }
    Ok(())
}

/// Solves the penalized system at a fixed `lambda`; returns the spline and
/// the trace of the smoother matrix (for GCV).
fn fit_at(x: &[f64], y: &[f64], lambda: f64) -> Result<(SmoothingSpline, f64)> {
    let n = x.len();
    let m = n - 2; // interior knots
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

    // Q is n x m, R is m x m tridiagonal (Green-Silverman banding).
    let mut q = DMatrix::zeros(n, m);
    let mut r = DMatrix::zeros(m, m);
    for jj in 0..m {
        q[(jj, jj)] = 1.0 / h[jj];
        q[(jj + 1, jj)] = -1.0 / h[jj] - 1.0 / h[jj + 1];
        q[(jj + 2, jj)] = 1.0 / h[jj + 1];
        r[(jj, jj)] = (h[jj] + h[jj + 1]) / 3.0;
        if jj + 1 < m {
            r[(jj, jj + 1)] = h[jj + 1] / 6.0;
            r[(jj + 1, jj)] = h[jj + 1] / 6.0;
        }
    }
    let r_chol = nalgebra::Cholesky::new(r.clone())
        .ok_or_else(|| Error::Numerical("smoothing-spline R matrix not positive definite".into()))?;
    let k = &q * r_chol.solve(&q.transpose()); // K = Q R^{-1} Q'
    let a_inv = DMatrix::identity(n, n) + lambda * &k;
    let a_chol = nalgebra::Cholesky::new(a_inv)
        .ok_or_else(|| Error::Numerical("smoothing-spline system not positive definite".into()))?;

    let yv = DVector::from_column_slice(y);
    let fitted = a_chol.solve(&yv);
    // trace of A = (I + lambda K)^{-1}
    let a = a_chol.solve(&DMatrix::identity(n, n));
    let trace_a = a.trace();

    // Interior second derivatives gamma = R^{-1} Q' fhat, natural ends zero.
    let g_int = r_chol.solve(&(q.transpose() * &fitted));
    let mut gamma2 = vec![0.0; n];
    for jj in 0..m {
        gamma2[jj + 1] = g_int[jj];
    }

    Ok((
        SmoothingSpline {
            x: x.to_vec(),
            fitted: fitted.iter().copied().collect(),
            gamma2,
            lambda,
        },
        trace_a,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_data_exactly() {
        let x: Vec<f64> = (0..12).map(|m| m as f64 + 0.5).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 - 0.25 * t).collect();
        let spline = SmoothingSpline::fit(&x, &y).unwrap();
        for t in [0.2, 1.0, 5.75, 11.9, 12.5, -0.5] {
            let expect = 3.0 - 0.25 * t;
            assert!(
                (spline.evaluate(t) - expect).abs() < 1e-8,
                "linear reproduction failed at t = {t}"
            );
        }
    }

    #[test]
    fn interpolates_at_zero_lambda() {
        let x = [0.0, 1.0, 2.0, 3.5, 4.0];
        let y = [1.0, -0.5, 2.0, 0.0, 1.5];
        let spline = SmoothingSpline::fit_with_lambda(&x, &y, 0.0).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((spline.evaluate(*xi) - yi).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_unsorted_abscissae() {
        let err = SmoothingSpline::fit(&[0.0, 2.0, 1.0], &[0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
