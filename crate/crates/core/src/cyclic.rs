//! Cyclic cubic regression spline basis on a fixed period.
//!
//! The basis is parameterized by the function values at `K` equally spaced
//! knots on `[0, period)`; the curve is the periodic cubic interpolant of
//! those values. Writing `beta` for the knot values and `delta` for the knot
//! second derivatives, continuity of the first and second derivatives at
//! every knot (including the wrap-around knot) gives a cyclic tridiagonal
//! system `B delta = D beta`, so `delta = F beta` with `F = B^{-1} D`, and
//! every evaluation is linear in `beta`. The curvature penalty
//! `integral g''(t)^2 dt = beta' S beta` with `S = D' B^{-1} D` is exact —
//! between knots `g''` is linear, so the integral is the tridiagonal
//! quadratic form `delta' B delta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cyclic cubic regression spline basis with `k` knots.
#[derive(Debug, Clone)]
pub struct CyclicSplineBasis {
    k: usize,
    period: f64,
    h: f64,
    /// Maps knot values to knot second derivatives: `delta = F beta`.
    f: DMatrix<f64>,
    /// Curvature penalty `S = D' B^{-1} D`; symmetric PSD with the constant
    /// vector in its null space.
    penalty: DMatrix<f64>,
}

/// Builds the basis with `k >= 4` equally spaced knots on `[0, period)`.
pub fn build_cyclic_basis(k: usize, period: f64) -> Result<CyclicSplineBasis> {
    if k < 4 {
        return Err(Error::Config(format!(
            "cyclic spline basis needs at least 4 knots, got {k}"
        )));
    }
    if !period.is_finite() || period <= 0.0 {
        return Err(Error::Config(format!("period must be positive, got {period}")));
    }
    let h = period / k as f64;
    let mut b = DMatrix::zeros(k, k);
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        let prev = (i + k - 1) % k;
        let next = (i + 1) % k;
        b[(i, i)] = 2.0 * h / 3.0;
        b[(i, prev)] += h / 6.0;
        b[(i, next)] += h / 6.0;
        d[(i, i)] = -2.0 / h;
        d[(i, prev)] += 1.0 / h;
        d[(i, next)] += 1.0 / h;
    }
    let b_inv = b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("cyclic spline B matrix is singular".into()))?;
    let f = &b_inv * &d;
    let mut penalty = d.transpose() * &b_inv * &d;
    // Symmetrize away the last-ulp asymmetry from the explicit inverse.
    penalty = (&penalty + penalty.transpose()) * 0.5;
    Ok(CyclicSplineBasis {
        k,
        period,
        h,
        f,
        penalty,
    })
}

impl CyclicSplineBasis {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.k).map(|i| i as f64 * self.h).collect()
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Locates `t` within the period. An exact multiple of the period is
    /// kept in the final interval (rather than wrapped to zero) so that
    /// evaluations at `t = period` genuinely exercise the wrap-around
    /// continuity instead of trivially re-reading the first knot.
    fn local(&self, t: f64) -> (usize, f64) {
        let mut u = t.rem_euclid(self.period);
        if u == 0.0 && t != 0.0 {
            u = self.period;
        }
        let i = ((u / self.h).floor() as usize).min(self.k - 1);
        (i, u)
    }

    /// Row vector `r` with `g(t) = r . beta`.
    pub fn design_row(&self, t: f64) -> DVector<f64> {
        let (i, u) = self.local(t);
        let next = (i + 1) % self.k;
        let x_l = i as f64 * self.h;
        let x_r = (i + 1) as f64 * self.h;
        let a_minus = (x_r - u) / self.h;
        let a_plus = (u - x_l) / self.h;
        let c_minus = ((x_r - u).powi(3) / self.h - self.h * (x_r - u)) / 6.0;
        let c_plus = ((u - x_l).powi(3) / self.h - self.h * (u - x_l)) / 6.0;
        let mut row = DVector::zeros(self.k);
        row[i] += a_minus;
        row[next] += a_plus;
        for c in 0..self.k {
            row[c] += c_minus * self.f[(i, c)] + c_plus * self.f[(next, c)];
        }
        row
    }

    /// Row vector for the first derivative: `g'(t) = r . beta`.
    pub fn deriv1_row(&self, t: f64) -> DVector<f64> {
        let (i, u) = self.local(t);
        let next = (i + 1) % self.k;
        let x_l = i as f64 * self.h;
        let x_r = (i + 1) as f64 * self.h;
        let da_minus = -1.0 / self.h;
        let da_plus = 1.0 / self.h;
        let dc_minus = (-3.0 * (x_r - u) * (x_r - u) / self.h + self.h) / 6.0;
        let dc_plus = (3.0 * (u - x_l) * (u - x_l) / self.h - self.h) / 6.0;
        let mut row = DVector::zeros(self.k);
        row[i] += da_minus;
        row[next] += da_plus;
        for c in 0..self.k {
            row[c] += dc_minus * self.f[(i, c)] + dc_plus * self.f[(next, c)];
        }
        row
    }

    /// Row vector for the second derivative: `g''(t) = r . beta`.
    pub fn deriv2_row(&self, t: f64) -> DVector<f64> {
        let (i, u) = self.local(t);
        let next = (i + 1) % self.k;
        let x_l = i as f64 * self.h;
        let x_r = (i + 1) as f64 * self.h;
        let w_l = (x_r - u) / self.h;
        let w_r = (u - x_l) / self.h;
        let mut row = DVector::zeros(self.k);
        for c in 0..self.k {
            row[c] = w_l * self.f[(i, c)] + w_r * self.f[(next, c)];
        }
        row
    }
}
