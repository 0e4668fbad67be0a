//! Small shared pieces of weighted-least-squares linear algebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Weight floor keeping IWLS working-response divisions finite while a
/// diverging iterate waits for step-halving to pull it back.
pub(crate) const MIN_WEIGHT: f64 = 1e-290;

/// `X' diag(w) X`, symmetric by construction.
pub(crate) fn weighted_cross(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let n_cols = x.ncols();
    let mut xtwx = DMatrix::zeros(n_cols, n_cols);
    for r in 0..x.nrows() {
        let wr = w[r].max(MIN_WEIGHT);
        for c1 in 0..n_cols {
            let xw = x[(r, c1)] * wr;
            for c2 in c1..n_cols {
                xtwx[(c1, c2)] += xw * x[(r, c2)];
            }
        }
    }
    for c1 in 0..n_cols {
        for c2 in (c1 + 1)..n_cols {
            xtwx[(c2, c1)] = xtwx[(c1, c2)];
        }
    }
    xtwx
}

/// Modified Gram-Schmidt rank screen; errors with the names of columns that
/// are (numerically) linear combinations of earlier ones.
pub(crate) fn check_design_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut flagged: Vec<String> = Vec::new();
    for c in 0..x.ncols() {
        let col = x.column(c).into_owned();
        let orig = col.norm();
        let mut v = col;
        // Two orthogonalization passes for numerical stability.
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        if v.norm() <= orig.max(1.0) * 1e-10 {
            flagged.push(names[c].clone());
        } else {
            let norm = v.norm();
            basis.push(v / norm);
        }
    }
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { columns: flagged })
    }
}
