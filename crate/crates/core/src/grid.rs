//! The seasonal bin grid: one 12-month seasonal year split into equal bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one seasonal year, in months. All internal time units are
/// months; the data grid is monthly and the bin width is exact in months.
pub const SEASON_MONTHS: f64 = 12.0;

/// Partition of one seasonal year into `j` equal bins of width `omega`
/// months, starting at calendar month `season_start_month` (1–12).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    j: usize,
    omega: f64,
    season_start_month: u32,
}

impl BinGrid {
    /// Builds a grid with `j` bins per seasonal year. `j` must be at least 2
    /// and divide the year so that `omega * j` recovers 12 months exactly.
    pub fn new(j: usize, season_start_month: u32) -> Result<Self> {
        if j < 2 {
            return Err(Error::Config(format!(
                "bin count J must be at least 2, got {j}"
            )));
        }
        if !(1..=12).contains(&season_start_month) {
            return Err(Error::Config(format!(
                "season start month must be in 1..=12, got {season_start_month}"
            )));
        }
        let omega = SEASON_MONTHS / j as f64;
        if (omega * j as f64 - SEASON_MONTHS).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "bin width omega = 12/J must satisfy omega*J = 12 months exactly; J = {j} does not"
            )));
        }
        Ok(Self {
            j,
            omega,
            season_start_month,
        })
    }

    /// Builds the dyadic grid `j = 2^m` required by the multi-resolution
    /// hazard model.
    pub fn dyadic(m: u32, season_start_month: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config(
                "tree depth M must be at least 1".to_string(),
            ));
        }
        Self::new(1usize << m, season_start_month)
    }

    /// Number of bins per seasonal year.
    pub fn j(&self) -> usize {
        self.j
    }

    /// Bin width in months.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Calendar month (1–12) at which the seasonal year begins.
    pub fn season_start_month(&self) -> u32 {
        self.season_start_month
    }

    /// Tree depth `m` with `j = 2^m`, if the grid is dyadic.
    pub fn tree_depth(&self) -> Option<u32> {
        self.j.is_power_of_two().then(|| self.j.trailing_zeros())
    }

    /// Start of bin `bin` in months from the season start.
    pub fn bin_start(&self, bin: usize) -> f64 {
        bin as f64 * self.omega
    }

    /// Midpoint of bin `bin` in months from the season start.
    pub fn bin_mid(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.omega
    }

    /// The `j + 1` bin edges spanning `[0, 12]` months.
    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.j).map(|b| b as f64 * self.omega).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(BinGrid::new(1, 7).is_err());
        assert!(BinGrid::new(12, 0).is_err());
        assert!(BinGrid::new(12, 13).is_err());
    }

    #[test]
    fn dyadic_depth_round_trips() {
        let grid = BinGrid::dyadic(4, 7).unwrap();
        assert_eq!(grid.j(), 16);
        assert_eq!(grid.tree_depth(), Some(4));
        assert_eq!(BinGrid::new(12, 7).unwrap().tree_depth(), None);
    }

    #[test]
    fn edges_cover_the_season() {
        let grid = BinGrid::new(16, 7).unwrap();
        let edges = grid.bin_edges();
        assert_eq!(edges.len(), 17);
        assert_eq!(edges[0], 0.0);
        assert!((edges[16] - 12.0).abs() < 1e-12);
        assert!((grid.bin_mid(0) - 0.375).abs() < 1e-12);
    }
}
