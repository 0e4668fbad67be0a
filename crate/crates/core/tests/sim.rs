//! End-to-end checks of the simulation study driver: dataset generation,
//! the three-way estimator comparison, and the summary bookkeeping.

use seahaz::sim::{generate_dataset, run_comparison, seasonal_truth, SimulationConfig};

/// A configuration small enough to run in seconds but still exercising every
/// estimator: three replicates, a short chain, and the default cohort shape.
fn small_config() -> SimulationConfig {
    SimulationConfig {
        n_replicates: 3,
        years: 4,
        mcmc_iterations: 1200,
        mcmc_burn_in: 300,
        mcmc_thin: 3,
        ..SimulationConfig::default()
    }
}

#[test]
fn generated_cohorts_have_the_documented_shape() {
    let config = small_config();
    let cohort = generate_dataset(&config, 0).unwrap();

    assert_eq!(cohort.n_groups(), config.years);
    assert_eq!(cohort.bins(), config.bins_per_year);
    assert_eq!(cohort.z_names(), &["z1".to_string(), "z2".to_string()]);

    let omega = 12.0 / config.bins_per_year as f64;
    for g in 0..cohort.n_groups() {
        for b in 0..cohort.bins() {
            assert_eq!(cohort.n(g, b), config.at_risk_per_bin);
            assert!((cohort.tau(g, b) - omega / 2.0).abs() < 1e-12);
        }
    }

    // Same replicate index reproduces the dataset; different indices differ.
    let again = generate_dataset(&config, 0).unwrap();
    assert_eq!(cohort, again);
    let other = generate_dataset(&config, 1).unwrap();
    assert_ne!(cohort, other);
}

#[test]
fn truth_curve_integrates_to_the_yearly_incidence() {
    let config = small_config();
    let d = seasonal_truth(config.bins_per_year, config.yearly_incidence, config.hazard_floor);

    assert_eq!(d.len(), config.bins_per_year);
    let total: f64 = d.iter().sum();
    let expected = -(1.0 - config.yearly_incidence).ln();
    assert!((total - expected).abs() < 1e-12);
    assert!(d.iter().all(|&v| v > 0.0));

    // The curve is genuinely seasonal: peak at least an order of magnitude
    // above the off-season floor.
    let peak = d.iter().cloned().fold(f64::MIN, f64::max);
    let floor = d.iter().cloned().fold(f64::MAX, f64::min);
    assert!(peak / floor > 10.0);
}

#[test]
fn comparison_report_is_internally_consistent() {
    let config = small_config();
    let report = run_comparison(&config).unwrap();
    let j = config.bins_per_year;

    // The reported truth is the hazard rate per month: increments over the
    // bin width.
    let d = seasonal_truth(j, config.yearly_incidence, config.hazard_floor);
    assert_eq!(report.truth.len(), j);
    for b in 0..j {
        assert!((report.truth[b] - d[b] / report.omega).abs() < 1e-15);
    }

    for est in [&report.glm, &report.gam, &report.mrh] {
        assert_eq!(est.mean.len(), j, "{}: per-bin mean", est.name);
        assert_eq!(est.replicates_used + est.failures, config.n_replicates);
        assert!(est.replicates_used > 0, "{}: no successful fits", est.name);

        for b in 0..j {
            // rmse^2 = bias^2 + variance, so the RMSE can never fall below
            // the absolute bias.
            assert!(
                est.rmse[b] + 1e-12 >= est.bias[b].abs(),
                "{}: rmse {} < |bias| {} in bin {b}",
                est.name,
                est.rmse[b],
                est.bias[b]
            );
            assert!(est.sd[b] >= 0.0);
            assert!(est.q025[b] <= est.q975[b]);
        }

        // Integrated summaries match their per-bin definitions.
        let int_bias: f64 = est.bias.iter().map(|b| report.omega * b.abs()).sum();
        let int_rmse: f64 = est.rmse.iter().map(|r| report.omega * r).sum();
        assert!((est.integrated_abs_bias - int_bias).abs() < 1e-12);
        assert!((est.integrated_rmse - int_rmse).abs() < 1e-12);
    }

    // Coverage is a proportion over per-bin cells of successful MRH fits.
    assert!(report.mrh_coverage >= 0.0 && report.mrh_coverage <= 1.0);
    assert_eq!(
        report.coverage_cells,
        report.mrh.replicates_used * j,
        "one coverage cell per bin per successful replicate"
    );
    assert_eq!(report.credible_level, config.credible_level);
    assert_eq!(report.n_replicates, config.n_replicates);

    // Administrative censoring dominates events at these rates.
    assert!(
        report.censor_fraction > 0.9,
        "censor fraction {} unexpectedly small",
        report.censor_fraction
    );
}

#[test]
fn comparison_is_reproducible_for_a_fixed_seed() {
    let config = small_config();
    let first = run_comparison(&config).unwrap();
    let second = run_comparison(&config).unwrap();
    assert_eq!(first, second);

    let reseeded = run_comparison(&SimulationConfig {
        rng_seed: config.rng_seed + 1,
        ..config
    })
    .unwrap();
    assert_ne!(first, reseeded);
}

#[test]
fn estimates_track_the_truth_at_moderate_sample_sizes() {
    // Four years of 150k at risk yields roughly a hundred events per
    // replicate. The baseline-at-covariate-zero estimand wanders by tens of
    // percent per replicate at that event count (the seasonal carrier in z
    // is nearly collinear with the baseline shape), so this is a scale
    // check, not an accuracy check: a factor of two still cleanly separates
    // correct output from unit mistakes such as per-bin increments (16x) or
    // per-year rates (12x).
    let config = small_config();
    let report = run_comparison(&config).unwrap();
    let integrated_truth: f64 = report.truth.iter().map(|t| report.omega * t).sum();

    for est in [&report.glm, &report.gam, &report.mrh] {
        let integrated_mean: f64 = est.mean.iter().map(|m| report.omega * m).sum();
        let ratio = integrated_mean / integrated_truth;
        assert!(
            ratio > 0.5 && ratio < 2.0,
            "{}: integrated mean {} vs truth {}",
            est.name,
            integrated_mean,
            integrated_truth
        );
        assert!(
            est.integrated_rmse < integrated_truth,
            "{}: integrated rmse {} vs truth {}",
            est.name,
            est.integrated_rmse,
            integrated_truth
        );
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut config = small_config();
    config.bins_per_year = 12; // not a power of two: MRH tree cannot split it
    assert!(config.validate().is_err());

    let mut config = small_config();
    config.n_replicates = 0;
    assert!(config.validate().is_err());

    let mut config = small_config();
    config.yearly_incidence = 0.0;
    assert!(config.validate().is_err());

    let mut config = small_config();
    config.mcmc_burn_in = config.mcmc_iterations;
    assert!(config.validate().is_err());
}
