//! GAM fitting on the shipped sample and on synthetic cohorts: periodicity,
//! smoothing selection, and agreement with the piecewise-constant fit in the
//! appropriate limits.

#[allow(dead_code)]
mod util;

use seahaz::gam::{fit_gam, fit_gam_at, gcv_grid};
use seahaz::glm::fit_glm;
use seahaz::ingest::{build_binned_cohort, CovariateSpec, RawMonthlySeries, TauRule};
use seahaz::sim::{generate_dataset, SimulationConfig};
use seahaz::BinGrid;

fn sample_cohort(j: usize) -> seahaz::BinnedCohort {
    let raw = RawMonthlySeries::from_csv_path(util::sample_csv()).unwrap();
    let grid = BinGrid::new(j, 7).unwrap();
    build_binned_cohort(&raw, grid, &CovariateSpec::default(), TauRule::MidBin).unwrap()
}

#[test]
fn sample_fit_is_periodic_and_smooth() {
    let cohort = sample_cohort(16);
    let fit = fit_gam(&cohort, 10).unwrap();
    assert!(fit.converged);
    assert!(!fit.boundary);
    // Periodicity of the smooth and its first derivative at the seam,
    // via second-order one-sided difference stencils.
    assert!((fit.g(0.0) - fit.g(12.0)).abs() < 1e-10);
    let eps = 1e-4;
    let d_start = (-3.0 * fit.g(0.0) + 4.0 * fit.g(eps) - fit.g(2.0 * eps)) / (2.0 * eps);
    let d_end =
        (3.0 * fit.g(12.0) - 4.0 * fit.g(12.0 - eps) + fit.g(12.0 - 2.0 * eps)) / (2.0 * eps);
    assert!(
        (d_start - d_end).abs() < 1e-5,
        "seam slopes {d_start} vs {d_end}"
    );
    // The seasonal shape survives smoothing: the fitted hazard peaks in the
    // second half of the season (Jan-Mar are months 6-9 of a July start).
    let est = fit.extract_hazard(cohort.grid(), 0.95).unwrap();
    let peak = est
        .lambda
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(b, _)| b)
        .unwrap();
    assert!((8..=12).contains(&peak), "peak bin {peak}");
    for b in 0..16 {
        assert!(est.lower[b] <= est.lambda[b] && est.lambda[b] <= est.upper[b]);
        assert!(est.lower[b] >= 0.0);
    }
}

#[test]
fn gcv_selection_tracks_the_grid_and_flags_boundary_minima() {
    let cohort = sample_cohort(16);
    let fit = fit_gam(&cohort, 10).unwrap();
    let table = &fit.gcv_table;
    assert_eq!(table.len(), gcv_grid().len());
    let best = table
        .iter()
        .filter(|p| p.converged)
        .map(|p| p.gcv)
        .fold(f64::INFINITY, f64::min);
    assert!((fit.gcv - best).abs() <= 1e-12 * (1.0 + best.abs()));
    // On this sparse sample (about two events per cell) GCV favors the
    // rough end of the grid, and the fit says so.
    assert_eq!(fit.smoothing_parameter, gcv_grid()[0]);
    assert!(fit.smoothing_at_grid_boundary);
    // Effective degrees of freedom trend downward as smoothing grows; the
    // working weights are re-estimated per grid point, so allow wobble on
    // top of the fixed-weight monotonicity.
    let converged: Vec<&seahaz::gam::GcvPoint> = table.iter().filter(|p| p.converged).collect();
    let mut last_edf = f64::INFINITY;
    for p in &converged {
        assert!(p.edf <= last_edf + 0.5, "edf not monotone at {}", p.lambda);
        last_edf = p.edf.min(last_edf);
    }
    // In the heavy-smoothing limit only the constant direction and the six
    // covariate columns remain: edf tends to 7.
    let heaviest = converged.last().unwrap();
    assert!(
        (heaviest.edf - 7.0).abs() < 0.01,
        "limiting edf {}",
        heaviest.edf
    );
}

#[test]
fn heavy_smoothing_approaches_the_pooled_constant_rate() {
    // As the curvature penalty grows the cyclic smooth flattens onto the
    // constant log-rate, which the GLM recovers exactly on a one-bin pooled
    // view of the same data.
    let config = SimulationConfig {
        n_replicates: 1,
        years: 4,
        ..SimulationConfig::default()
    };
    let cohort = generate_dataset(&config, 3).unwrap();
    let fit = fit_gam_at(&cohort, 10, 1e9).unwrap();
    let total_events: f64 = cohort.total_events() as f64;
    let exposures = seahaz::likelihood::compute_exposures(&cohort);
    let mut total_w = 0.0;
    for i in 0..cohort.n_groups() {
        for b in 0..cohort.bins() {
            let za: f64 = cohort
                .z_row(i, b)
                .iter()
                .zip(&fit.alpha)
                .map(|(z, a)| z * a)
                .sum();
            total_w += exposures.w[i][b] * za.exp();
        }
    }
    let pooled_rate = total_events / total_w;
    // g is essentially constant; its level matches the pooled rate.
    for b in 0..cohort.bins() {
        let t = cohort.grid().bin_mid(b);
        let rel = (fit.g(t).exp() - pooled_rate).abs() / pooled_rate;
        assert!(rel < 1e-3, "bin {b}: {} vs {pooled_rate}", fit.g(t).exp());
    }
}

#[test]
fn light_smoothing_tracks_the_glm_bin_rates() {
    // With a rich basis and almost no penalty, mid-bin hazards approach the
    // per-bin ML rates wherever events are plentiful.
    let config = SimulationConfig {
        n_replicates: 1,
        years: 20,
        yearly_incidence: 0.002,
        ..SimulationConfig::default()
    };
    let cohort = generate_dataset(&config, 1).unwrap();
    let gam = fit_gam_at(&cohort, 16, 1e-4).unwrap();
    let glm = fit_glm(&cohort).unwrap();
    let est = gam.extract_hazard(cohort.grid(), 0.95).unwrap();
    for b in 0..cohort.bins() {
        if glm.boundary[b] {
            continue;
        }
        let rel = (est.lambda[b] - glm.lambda[b]).abs() / glm.lambda[b];
        assert!(
            rel < 0.25,
            "bin {b}: gam {} vs glm {}",
            est.lambda[b],
            glm.lambda[b]
        );
    }
}

#[test]
fn covariate_effects_match_the_glm_closely() {
    let config = SimulationConfig {
        n_replicates: 1,
        years: 20,
        yearly_incidence: 0.002,
        ..SimulationConfig::default()
    };
    let cohort = generate_dataset(&config, 2).unwrap();
    let gam = fit_gam(&cohort, 12).unwrap();
    let glm = fit_glm(&cohort).unwrap();
    for k in 0..2 {
        // The seasonal carrier in z is nearly collinear with the baseline
        // shape, and the two models resolve that ridge differently (penalty
        // vs saturated dummies), so agreement is to a fraction of one
        // standard error rather than exact.
        assert!(
            (gam.alpha[k] - glm.alpha[k]).abs() < 0.05,
            "alpha[{k}]: {} vs {}",
            gam.alpha[k],
            glm.alpha[k]
        );
    }
}

#[test]
fn fitted_counts_preserve_the_event_total() {
    // The intercept direction lies in the cyclic basis span, so the score
    // equation forces fitted counts to sum to observed counts.
    let cohort = sample_cohort(12);
    let fit = fit_gam(&cohort, 8).unwrap();
    let mu = fit.predict_counts(&cohort).unwrap();
    let total: f64 = mu.iter().flatten().sum();
    assert!(
        (total - 364.0).abs() < 1e-6 * 364.0,
        "fitted total {total}"
    );
}

#[test]
fn basis_dimension_bounds_are_enforced() {
    let cohort = sample_cohort(12);
    assert!(fit_gam(&cohort, 3).is_err());
    assert!(fit_gam(&cohort, 200).is_err());
    assert!(fit_gam_at(&cohort, 8, f64::NAN).is_err());
    assert!(fit_gam_at(&cohort, 8, -1.0).is_err());
}
