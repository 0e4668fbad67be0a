//! Grouped survival data on a fixed seasonal grid.
//!
//! A [`BinnedCohort`] is the single input shape every estimator consumes:
//! per group (seasonal year) and bin, the observed failure count `delta`,
//! the right-censored count `gamma`, the at-risk count `n` at bin start, and
//! the mean within-bin occupancy `tau` of the subjects exiting in that bin,
//! plus time-independent covariates `x` (per group) and time-varying
//! covariates `z` (per group and bin).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinGrid;

/// Standardization applied to one covariate column: `standardized =
/// (raw - mean) / sd`. Recorded so effects can be reported on either scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateTransform {
    pub mean: f64,
    pub sd: f64,
}

/// Grouped failure/censoring counts, at-risk counts, exposures, and
/// covariates on a fixed seasonal grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCohort {
    grid: BinGrid,
    delta: Vec<Vec<u64>>,
    gamma: Vec<Vec<u64>>,
    n: Vec<Vec<u64>>,
    tau: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    z: Vec<Vec<Vec<f64>>>,
    x_names: Vec<String>,
    z_names: Vec<String>,
    z_transforms: Vec<CovariateTransform>,
    group_labels: Vec<String>,
}

impl BinnedCohort {
    /// Full constructor; validates every documented invariant.
    ///
    /// * all count/occupancy tables are `n_groups x J`;
    /// * `0 <= tau <= omega`;
    /// * `delta + gamma <= n` cell-wise;
    /// * within a group, the at-risk accounting identity
    ///   `n[j] - (delta[j] + gamma[j]) + entrants = n[j+1]` must be
    ///   satisfiable with nonnegative entrants;
    /// * covariate tables are `n_groups x p` and `n_groups x J x q` with
    ///   finite entries.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: BinGrid,
        delta: Vec<Vec<u64>>,
        gamma: Vec<Vec<u64>>,
        n: Vec<Vec<u64>>,
        tau: Vec<Vec<f64>>,
        x: Vec<Vec<f64>>,
        z: Vec<Vec<Vec<f64>>>,
        x_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self> {
        let n_groups = delta.len();
        if n_groups == 0 {
            return Err(Error::Validation("cohort has no groups".to_string()));
        }
        let j = grid.j();
        let check_dims = |name: &str, table: &Vec<Vec<u64>>| -> Result<()> {
            if table.len() != n_groups || table.iter().any(|row| row.len() != j) {
                return Err(Error::Validation(format!(
                    "{name} table must be {n_groups} groups x {j} bins"
                )));
            }
            Ok(())
        };
        check_dims("delta", &delta)?;
        check_dims("gamma", &gamma)?;
        check_dims("n", &n)?;
        if tau.len() != n_groups || tau.iter().any(|row| row.len() != j) {
            return Err(Error::Validation(format!(
                "tau table must be {n_groups} groups x {j} bins"
            )));
        }

        let omega = grid.omega();
        for i in 0..n_groups {
            for b in 0..j {
                let t = tau[i][b];
                if !t.is_finite() || t < 0.0 || t > omega + 1e-12 {
                    return Err(Error::Validation(format!(
                        "tau[{i}][{b}] = {t} outside [0, omega = {omega}]"
                    )));
                }
                let exits = delta[i][b] + gamma[i][b];
                if exits > n[i][b] {
                    return Err(Error::Validation(format!(
                        "delta[{i}][{b}] + gamma[{i}][{b}] = {exits} exceeds at-risk n = {}",
                        n[i][b]
                    )));
                }
                if b + 1 < j && n[i][b + 1] + exits < n[i][b] {
                    return Err(Error::Validation(format!(
                        "at-risk accounting fails in group {i} bin {b}: \
                         n[{b}+1] = {} implies negative entrants",
                        n[i][b + 1]
                    )));
                }
            }
        }

        let p = x_names.len();
        if x.len() != n_groups || x.iter().any(|row| row.len() != p) {
            return Err(Error::Validation(format!(
                "x table must be {n_groups} groups x {p} covariates"
            )));
        }
        let q = z_names.len();
        if z.len() != n_groups
            || z.iter()
                .any(|g| g.len() != j || g.iter().any(|row| row.len() != q))
        {
            return Err(Error::Validation(format!(
                "z table must be {n_groups} groups x {j} bins x {q} covariates"
            )));
        }
        let finite = |v: f64| v.is_finite();
        if x.iter().flatten().any(|v| !finite(*v))
            || z.iter().flatten().flatten().any(|v| !finite(*v))
        {
            return Err(Error::Validation(
                "covariate values must be finite".to_string(),
            ));
        }

        let group_labels = (0..n_groups).map(|i| format!("group{i}")).collect();
        Ok(Self {
            grid,
            delta,
            gamma,
            n,
            tau,
            x,
            z,
            x_names,
            z_names,
            z_transforms: Vec::new(),
            group_labels,
        })
    }

    /// Convenience constructor for cohorts without covariates.
    pub fn counts_only(
        grid: BinGrid,
        delta: Vec<Vec<u64>>,
        gamma: Vec<Vec<u64>>,
        n: Vec<Vec<u64>>,
        tau: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_groups = delta.len();
        let j = grid.j();
        Self::new(
            grid,
            delta,
            gamma,
            n,
            tau,
            vec![Vec::new(); n_groups],
            vec![vec![Vec::new(); j]; n_groups],
            Vec::new(),
            Vec::new(),
        )
    }

    pub(crate) fn set_z_transforms(&mut self, transforms: Vec<CovariateTransform>) {
        self.z_transforms = transforms;
    }

    pub(crate) fn set_group_labels(&mut self, labels: Vec<String>) {
        assert_eq!(labels.len(), self.n_groups());
        self.group_labels = labels;
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn n_groups(&self) -> usize {
        self.delta.len()
    }

    /// Number of bins per seasonal year (alias of `grid().j()`).
    pub fn bins(&self) -> usize {
        self.grid.j()
    }

    /// Number of time-independent covariates.
    pub fn p(&self) -> usize {
        self.x_names.len()
    }

    /// Number of time-varying covariates.
    pub fn q(&self) -> usize {
        self.z_names.len()
    }

    pub fn delta(&self, i: usize, j: usize) -> u64 {
        self.delta[i][j]
    }

    pub fn gamma(&self, i: usize, j: usize) -> u64 {
        self.gamma[i][j]
    }

    pub fn n(&self, i: usize, j: usize) -> u64 {
        self.n[i][j]
    }

    pub fn tau(&self, i: usize, j: usize) -> f64 {
        self.tau[i][j]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn z_row(&self, i: usize, j: usize) -> &[f64] {
        &self.z[i][j]
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    /// Standardization transforms for the `z` columns; empty when the
    /// covariates were supplied on their raw scale.
    pub fn z_transforms(&self) -> &[CovariateTransform] {
        &self.z_transforms
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    /// Total observed failures over all groups and bins.
    pub fn total_events(&self) -> u64 {
        self.delta.iter().flatten().sum()
    }

    /// Failures summed over groups, per bin.
    pub fn events_per_bin(&self) -> Vec<u64> {
        let j = self.bins();
        let mut out = vec![0u64; j];
        for row in &self.delta {
            for (b, d) in row.iter().enumerate() {
                out[b] += d;
            }
        }
        out
    }
}
