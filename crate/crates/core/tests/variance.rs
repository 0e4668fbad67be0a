//! Closed-form two-bin variance comparison, checked against an independent
//! finite-difference Laplace oracle and for its qualitative shape.

mod util;

use seahaz::variance::{
    figure_h_grid, g_difference, var_glm, var_mrh_laplace, TwoBinScenario,
};

#[test]
fn laplace_variance_matches_the_finite_difference_oracle() {
    // Equal at-risk counts: the closed form is algebraically exact against
    // the delta-method reference, so only finite-difference truncation
    // separates the two. The dense 27-point grid runs in the acceptance
    // gate.
    for &(h, r, n, a, k) in &[
        (0.01, 0.5, 1e4, 1.5, 1.0),
        (0.10, 0.3, 5e3, 2.0, 1.0),
        (0.25, 0.7, 1e5, 2.0, 0.8),
        (0.05, 0.5, 1e3, 3.0, 1.2),
        (0.30, 0.2, 2e4, 2.0, 1.0),
        (1e-4, 0.5, 1e5, 2.0, 1.0),
    ] {
        let scenario = TwoBinScenario { h, r, n1: n, n2: n, a, k };
        let (v1, v2) = var_mrh_laplace(&scenario).unwrap();
        let fd1 = util::var_d1_fd(h, r, n, n, a, k);
        let fd2 = util::var_d1_fd(h, 1.0 - r, n, n, a, k);
        assert!(
            (v1 - fd1).abs() / fd1 < 0.01,
            "H={h} R={r}: closed form {v1:e} vs FD {fd1:e}"
        );
        assert!(
            (v2 - fd2).abs() / fd2 < 0.01,
            "H={h} R={r} mirror: {v2:e} vs {fd2:e}"
        );
    }
}

#[test]
fn unequal_cohorts_stay_within_a_few_percent_of_the_reference() {
    // Off the equal-count axis the printed expression is an approximation;
    // it tracks the delta-method reference to within fifteen percent for
    // count imbalances up to about a quarter.
    for &(h, r, n1, n2, a, k) in &[
        (0.10, 0.3, 5e3, 4e3, 2.0, 1.0),
        (0.25, 0.7, 1e5, 9e4, 2.0, 0.8),
        (0.05, 0.4, 2e4, 1.5e4, 1.5, 1.0),
    ] {
        let scenario = TwoBinScenario { h, r, n1, n2, a, k };
        let (v1, _) = var_mrh_laplace(&scenario).unwrap();
        let fd1 = util::var_d1_fd(h, r, n1, n2, a, k);
        assert!(
            (v1 - fd1).abs() / fd1 < 0.15,
            "H={h} R={r}: closed form {v1:e} vs FD {fd1:e}"
        );
    }
}

#[test]
fn bayes_beats_glm_at_low_hazard_and_the_gap_closes() {
    // Over the figure sweep the MRH variance is smaller for every split at
    // low H, and the advantage shrinks as H grows.
    let grid = figure_h_grid();
    for r in [0.2, 0.5, 0.8] {
        let scenario = TwoBinScenario::figure_default(0.1, r);
        let curve = g_difference(&scenario, &grid).unwrap();
        for p in &curve {
            if p.h <= 0.15 {
                assert!(p.g1 < 0.0, "R={r} H={}: g1 = {}", p.h, p.g1);
            }
        }
        // Advantage relative to the GLM variance shrinks monotonically in
        // H over the low range.
        let rel: Vec<f64> = curve
            .iter()
            .map(|p| p.g1 / p.var_glm1)
            .collect();
        assert!(rel.first().unwrap() < &-0.1, "large gain at tiny H");
        assert!(
            rel.last().unwrap() > rel.first().unwrap(),
            "gap does not close over the sweep"
        );
    }
}

#[test]
fn censoring_percentage_is_reported_alongside() {
    let scenario = TwoBinScenario::figure_default(0.1, 0.5);
    let curve = g_difference(&scenario, &[0.01, 0.1, 0.3]).unwrap();
    for p in &curve {
        assert!((p.censor_pct - 100.0 * (-p.h).exp()).abs() < 1e-12);
    }
    assert!(curve[0].censor_pct > 99.0);
    assert!(curve[2].censor_pct < 75.0);
}

#[test]
fn variances_scale_inversely_with_cohort_size() {
    let small = TwoBinScenario {
        h: 0.08,
        r: 0.4,
        n1: 1e3,
        n2: 1e3,
        a: 2.0,
        k: 1.0,
    };
    let big = TwoBinScenario {
        n1: 1e6,
        n2: 1e6,
        ..small
    };
    let (g_small, _) = var_glm(&small).unwrap();
    let (g_big, _) = var_glm(&big).unwrap();
    assert!((g_small / g_big - 1e3).abs() < 1e-6 * 1e3);
    // The Bayesian variance also shrinks, though the prior keeps the exact
    // ratio slightly below the GLM's.
    let (m_small, _) = var_mrh_laplace(&small).unwrap();
    let (m_big, _) = var_mrh_laplace(&big).unwrap();
    let ratio = m_small / m_big;
    assert!(ratio > 0.9e3 && ratio < 1.1e3, "ratio {ratio}");
}

#[test]
fn invalid_scenarios_are_rejected() {
    let ok = TwoBinScenario::figure_default(0.1, 0.5);
    for bad in [
        TwoBinScenario { h: 0.0, ..ok },
        TwoBinScenario { h: f64::NAN, ..ok },
        TwoBinScenario { r: 0.0, ..ok },
        TwoBinScenario { r: 1.0, ..ok },
        TwoBinScenario { n1: 0.0, ..ok },
        TwoBinScenario { a: 0.0, ..ok },
        TwoBinScenario { k: -1.0, ..ok },
    ] {
        assert!(var_glm(&bad).is_err() || var_mrh_laplace(&bad).is_err());
    }
}

#[test]
fn figure_grid_covers_the_documented_range() {
    let grid = figure_h_grid();
    assert_eq!(grid.len(), 100);
    assert!((grid[0] - 1e-4).abs() < 1e-12);
    assert!((grid[99] - 0.30).abs() < 1e-12);
    assert!(grid.windows(2).all(|w| w[1] > w[0]));
}
