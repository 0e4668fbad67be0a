//! Seasonal hazard estimation for grouped event-count data.
//!
//! Fits seasonal hazard rates to grouped failure counts with right
//! censoring, a changing at-risk population, and time-varying covariates.
//! Three estimators share one data model ([`BinnedCohort`]):
//!
//! * [`glm`] — piecewise-exponential Poisson GLM with a person-time offset,
//!   fitted by iteratively reweighted least squares;
//! * [`mrh`] — Bayesian multi-resolution hazard model with a dyadic
//!   split-parameter prior on the hazard increments, fitted by MCMC;
//! * [`gam`] — Poisson GAM with a penalized cyclic cubic spline baseline.
//!
//! Supporting modules: [`likelihood`] holds the shared piecewise-exponential
//! exposure and likelihood algebra, [`variance`] the closed-form two-bin
//! efficiency comparison between the GLM and MRH estimators, [`sim`] the
//! replicated simulation study, and [`ingest`] the monthly-CSV-to-cohort
//! transforms (population interpolation, covariate lagging, spline
//! resampling).

pub mod cohort;
pub mod cyclic;
pub mod error;
pub mod estimate;
pub mod gam;
pub mod glm;
pub mod grid;
pub mod ingest;
pub mod likelihood;
mod linalg;
pub mod mrh;
pub mod sim;
pub mod smooth;
pub mod variance;

pub use cohort::BinnedCohort;
pub use error::{Error, Result};
pub use estimate::{EffectEstimate, HazardEstimate};
pub use grid::BinGrid;
pub use likelihood::HazardParams;
