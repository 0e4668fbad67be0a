//! Bayesian multi-resolution hazard model.
//!
//! The seasonal baseline hazard is parameterized by the total cumulative
//! hazard `H` and a dyadic tree of split parameters: at level `m`
//! (`1..=M`, with `J = 2^M` bins), `R[m][p]` is the fraction of parent
//! node `p`'s cumulative hazard assigned to its left child. The hazard
//! increment of leaf `j` is `d_j = H * F_j`, `F_j` the product of `R` or
//! `1 - R` factors along the root-to-leaf path, so `sum_j d_j = H` by
//! construction.
//!
//! The sampler cycles full conditionals: `H` is conjugate gamma and drawn
//! exactly; each `R[m][p]` gets a Metropolis-Hastings update with a Beta
//! proposal centered at the current value; covariate effects get Gaussian
//! random-walk updates with normal priors; the hyperparameters `a`
//! (zero-truncated-Poisson prior, discrete +-1 walk), `b` and `k`
//! (exponential priors, Gaussian walks), and the split centers
//! `gamma[m][p]` (Beta prior, Beta proposals) are each optionally sampled.
//! Proposal scales adapt toward a 0.35 acceptance rate during burn-in only
//! and are frozen afterwards, so the retained chain targets the exact
//! posterior.
//!
//! The exponential factor of the effect conditionals uses the exposure
//! multiplier `Phi_ij` throughout, keeping every conditional consistent
//! with the one likelihood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::cohort::BinnedCohort;
use crate::error::{Error, Result};
use crate::estimate::{EffectEstimate, HazardEstimate};
use crate::likelihood::compute_exposures;

/// Target acceptance rate for the adapted Metropolis blocks.
const TARGET_ACCEPTANCE: f64 = 0.35;
/// Robbins-Monro decay exponent for the burn-in adaptation.
const ADAPT_DECAY: f64 = 0.6;

/// The multi-resolution tree state: total hazard, split parameters, and
/// the prior constants that shape the splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrhTree {
    /// Tree depth; the season has `2^m` bins.
    pub m: u32,
    /// Cumulative baseline hazard over the season.
    pub h: f64,
    /// Split parameters: `r[m-1][p]` is the left-child fraction of parent
    /// `p` at level `m`, for `m = 1..=M`, `p = 0..2^(m-1)`.
    pub r: Vec<Vec<f64>>,
    /// Prior shape (positive integer under the zero-truncated Poisson
    /// hyperprior).
    pub a: u64,
    /// Prior scale of the gamma prior on `h`.
    pub b: f64,
    /// Correlation-decay constant in the split priors.
    pub k: f64,
    /// Split-center parameters, same shape as `r`; the prior mean of
    /// `r[m-1][p]` is `gamma[m-1][p]`.
    pub gamma: Vec<Vec<f64>>,
}

impl MrhTree {
    /// A tree with all splits and centers at 1/2 (the uniform hazard).
    pub fn uniform(m: u32, h: f64, a: u64, b: f64, k: f64) -> Result<Self> {
        let tree = Self {
            m,
            h,
            r: level_shape(m, 0.5),
            a,
            b,
            k,
            gamma: level_shape(m, 0.5),
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Validation("tree depth must be at least 1".to_string()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Validation(format!(
                "cumulative hazard must be positive and finite, got {}",
                self.h
            )));
        }
        if self.a == 0 || self.b <= 0.0 || self.k <= 0.0 {
            return Err(Error::Validation(
                "prior constants must satisfy a >= 1, b > 0, k > 0".to_string(),
            ));
        }
        for (table, name) in [(&self.r, "split"), (&self.gamma, "split-center")] {
            if table.len() != self.m as usize {
                return Err(Error::Validation(format!(
                    "{name} table must have {} levels",
                    self.m
                )));
            }
            for (level, row) in table.iter().enumerate() {
                if row.len() != 1usize << level {
                    return Err(Error::Validation(format!(
                        "{name} level {} must have {} entries",
                        level + 1,
                        1usize << level
                    )));
                }
                if row.iter().any(|v| !(0.0 < *v && *v < 1.0)) {
                    return Err(Error::Validation(format!(
                        "{name} parameters must lie strictly in (0,1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of bins `J = 2^m`.
    pub fn bins(&self) -> usize {
        1usize << self.m
    }
}

fn level_shape(m: u32, fill: f64) -> Vec<Vec<f64>> {
    (0..m).map(|level| vec![fill; 1usize << level]).collect()
}

/// Hazard increments `d_j = H * F_j`: the product of split factors along
/// each root-to-leaf path. `sum_j d_j = H` up to rounding.
pub fn hazard_increments(tree: &MrhTree) -> Vec<f64> {
    let m = tree.m;
    let j = tree.bins();
    let mut d = vec![tree.h; j];
    for leaf in 0..j {
        for level in 1..=m {
            let node = leaf >> (m - level);
            let parent = node >> 1;
            let r = tree.r[(level - 1) as usize][parent];
            d[leaf] *= if node % 2 == 0 { r } else { 1.0 - r };
        }
    }
    d
}

/// Nelson-Aalen estimate of the seasonal cumulative hazard, pooled over
/// groups: `Hhat(t_j) = sum_{l<=j} (sum_i Delta_il) / (sum_i N_il)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NelsonAalen {
    /// Cumulative hazard at the end of each bin.
    pub cumulative: Vec<f64>,
    /// Bins whose pooled at-risk count was zero; they contribute nothing
    /// and the estimate should be read with care.
    pub zero_risk_bins: Vec<usize>,
}

impl NelsonAalen {
    /// The full-season estimate, used to center the `H` prior.
    pub fn seasonal(&self) -> f64 {
        *self.cumulative.last().expect("at least one bin")
    }
}

pub fn nelson_aalen(cohort: &BinnedCohort) -> NelsonAalen {
    let j = cohort.bins();
    let mut cumulative = Vec::with_capacity(j);
    let mut zero_risk_bins = Vec::new();
    let mut total = 0.0;
    for b in 0..j {
        let events: u64 = (0..cohort.n_groups()).map(|i| cohort.delta(i, b)).sum();
        let at_risk: u64 = (0..cohort.n_groups()).map(|i| cohort.n(i, b)).sum();
        if at_risk == 0 {
            zero_risk_bins.push(b);
        } else {
            total += events as f64 / at_risk as f64;
        }
        cumulative.push(total);
    }
    NelsonAalen {
        cumulative,
        zero_risk_bins,
    }
}

/// Update order of one MCMC sweep. The posterior is invariant to the
/// order; two orders are provided so that invariance can be tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepOrder {
    /// `H`, splits root-down, effects, hyperparameters.
    Standard,
    /// Hyperparameters, effects, splits leaf-up, `H`.
    Reversed,
}

/// Sampler configuration. `mu_b = None` derives the prior scale from the
/// Nelson-Aalen seasonal estimate so that `E[H] = E[a] * mu_b` matches it;
/// `init_b = None` starts `b` at that prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub rng_seed: u64,
    /// Tree depth `M`; the cohort must have `2^M` bins.
    pub tree_depth: u32,
    /// Prior standard deviation of each time-independent effect.
    pub sigma_beta: f64,
    /// Prior standard deviation of each time-varying effect.
    pub sigma_alpha: f64,
    /// Mean of the zero-truncated Poisson hyperprior on `a`.
    pub mu_a: f64,
    /// Mean of the exponential hyperprior on `b`.
    pub mu_b: Option<f64>,
    /// Mean of the exponential hyperprior on `k`.
    pub mu_k: f64,
    /// Beta hyperprior shapes on each split center.
    pub gamma_u: f64,
    pub gamma_w: f64,
    pub sample_a: bool,
    pub sample_b: bool,
    pub sample_k: bool,
    pub sample_gamma: bool,
    pub init_a: u64,
    pub init_b: Option<f64>,
    pub init_k: f64,
    pub init_gamma: f64,
    pub sweep_order: SweepOrder,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: 500,
            thin: 10,
            rng_seed: 1,
            tree_depth: 4,
            sigma_beta: 10.0,
            sigma_alpha: 10.0,
            mu_a: 1.0,
            mu_b: None,
            mu_k: 1.0,
            gamma_u: 1.0,
            gamma_w: 1.0,
            sample_a: true,
            sample_b: true,
            sample_k: true,
            sample_gamma: true,
            init_a: 1,
            init_b: None,
            init_k: 1.0,
            init_gamma: 0.5,
            sweep_order: SweepOrder::Standard,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".to_string()));
        }
        if self.tree_depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".to_string()));
        }
        if self.sigma_beta <= 0.0 || self.sigma_alpha <= 0.0 {
            return Err(Error::Config("effect prior SDs must be positive".to_string()));
        }
        if self.mu_a <= 0.0 || self.mu_k <= 0.0 || self.gamma_u <= 0.0 || self.gamma_w <= 0.0 {
            return Err(Error::Config(
                "hyperprior constants mu_a, mu_k, u, w must be positive".to_string(),
            ));
        }
        if let Some(mu_b) = self.mu_b {
            if mu_b <= 0.0 {
                return Err(Error::Config("mu_b must be positive".to_string()));
            }
        }
        if let Some(b) = self.init_b {
            if b <= 0.0 {
                return Err(Error::Config("init_b must be positive".to_string()));
            }
        }
        if self.init_a == 0 || self.init_k <= 0.0 {
            return Err(Error::Config("init_a >= 1 and init_k > 0 required".to_string()));
        }
        if !(0.0 < self.init_gamma && self.init_gamma < 1.0) {
            return Err(Error::Config("init_gamma must lie in (0,1)".to_string()));
        }
        Ok(())
    }

    /// Mean of the zero-truncated Poisson hyperprior on `a`.
    pub fn expected_a(&self) -> f64 {
        self.mu_a / (1.0 - (-self.mu_a).exp())
    }
}

/// One retained draw of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub h: f64,
    /// Split parameters flattened level by level (root first).
    pub r: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub a: u64,
    pub b: f64,
    pub k: f64,
    /// Split centers flattened level by level.
    pub gamma: Vec<f64>,
    /// Hazard increments per bin.
    pub d: Vec<f64>,
}

/// Post-burn-in acceptance fractions per block; `None` for blocks that
/// were never sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub r: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub k: Option<f64>,
    pub gamma: Option<f64>,
}

/// The retained posterior sample with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub draws: Vec<Draw>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub rng_seed: u64,
    pub tree_depth: u32,
    /// Bin width of the fitted cohort, months.
    pub omega: f64,
    pub acceptance: AcceptanceRates,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

impl PosteriorChain {
    /// Column labels for the flattened split parameters: `r_m_p`.
    pub fn r_labels(&self) -> Vec<String> {
        split_labels("r", self.tree_depth)
    }

    /// Column labels for the flattened split centers: `gamma_m_p`.
    pub fn gamma_labels(&self) -> Vec<String> {
        split_labels("gamma", self.tree_depth)
    }
}

/// Labels `{prefix}_m_p` in the level-by-level flattening order.
pub fn split_labels(prefix: &str, tree_depth: u32) -> Vec<String> {
    let mut out = Vec::new();
    for level in 1..=tree_depth {
        for p in 0..(1usize << (level - 1)) {
            out.push(format!("{prefix}_{level}_{p}"));
        }
    }
    out
}

/// Adaptive scale for one Metropolis block.
#[derive(Debug, Clone)]
struct AdaptiveScale {
    value: f64,
    trials: u64,
    lo: f64,
    hi: f64,
    /// Beta-proposal concentrations shrink steps as they grow, so they
    /// adapt in the opposite direction from random-walk SDs.
    inverted: bool,
}

impl AdaptiveScale {
    fn walk_sd(value: f64) -> Self {
        Self {
            value,
            trials: 0,
            lo: 1e-8,
            hi: 1e3,
            inverted: false,
        }
    }

    fn concentration(value: f64) -> Self {
        Self {
            value,
            trials: 0,
            lo: 2.0,
            hi: 1e7,
            inverted: true,
        }
    }

    fn adapt(&mut self, accepted: bool) {
        self.trials += 1;
        let rate = (self.trials as f64).powf(-ADAPT_DECAY);
        let push = rate * ((accepted as u8) as f64 - TARGET_ACCEPTANCE);
        let signed = if self.inverted { -push } else { push };
        self.value = (self.value.ln() + signed).exp().clamp(self.lo, self.hi);
    }
}

/// Acceptance bookkeeping for one block.
#[derive(Debug, Clone, Default)]
struct Counter {
    trials: u64,
    accepts: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.trials += 1;
        self.accepts += accepted as u64;
    }

    fn rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.accepts as f64 / self.trials as f64)
    }
}

/// The full sampler state. Public stepping methods expose each conditional
/// update so the pieces can be validated in isolation; [`run_chain`] drives
/// complete sweeps.
pub struct MrhSampler<'a> {
    cohort: &'a BinnedCohort,
    config: McmcConfig,
    pub tree: MrhTree,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    mu_b: f64,
    /// Hazard increments, refreshed from the tree each sweep.
    d: Vec<f64>,
    /// Exposure multipliers `Phi_ij`.
    phi: Vec<Vec<f64>>,
    /// Cached `exp(X_i'beta + Z_ij'alpha)` per cell.
    eta_exp: Vec<Vec<f64>>,
    /// Cached `sum_i exp(eta_ij) Phi_ij` per bin.
    e_bin: Vec<f64>,
    /// Pooled events per bin.
    events_bin: Vec<f64>,
    total_events: f64,
    /// Sufficient statistics `sum_ij Delta_ij x_is` / `sum_ij Delta_ij z_ijs`.
    score_beta: Vec<f64>,
    score_alpha: Vec<f64>,
    rng: ChaCha8Rng,
    sweep_index: usize,
    adapting: bool,
    scale_r: Vec<AdaptiveScale>,
    scale_gamma: Vec<AdaptiveScale>,
    scale_beta: Vec<AdaptiveScale>,
    scale_alpha: Vec<AdaptiveScale>,
    scale_b: AdaptiveScale,
    scale_k: AdaptiveScale,
    count_r: Counter,
    count_gamma: Counter,
    count_beta: Counter,
    count_alpha: Counter,
    count_a: Counter,
    count_b: Counter,
    count_k: Counter,
}

impl<'a> MrhSampler<'a> {
    pub fn new(cohort: &'a BinnedCohort, config: McmcConfig) -> Result<Self> {
        config.validate()?;
        let j = cohort.bins();
        if j != 1usize << config.tree_depth {
            return Err(Error::Config(format!(
                "tree depth {} needs {} bins, cohort has {j}",
                config.tree_depth,
                1usize << config.tree_depth
            )));
        }
        let na = nelson_aalen(cohort);
        let seasonal = na.seasonal();
        let mu_b = match config.mu_b {
            Some(v) => v,
            None if seasonal > 0.0 => seasonal / config.expected_a(),
            None => {
                return Err(Error::Config(
                    "cannot derive the prior scale from a cohort with no events; set mu_b"
                        .to_string(),
                ))
            }
        };
        let b_init = config.init_b.unwrap_or(mu_b);
        let h_init = if seasonal > 0.0 {
            seasonal
        } else {
            config.init_a as f64 * b_init
        };
        let mut tree = MrhTree::uniform(
            config.tree_depth,
            h_init,
            config.init_a,
            b_init,
            config.init_k,
        )?;
        tree.gamma = level_shape(config.tree_depth, config.init_gamma);

        let exposures = compute_exposures(cohort);
        let n = cohort.n_groups();
        let eta_exp = vec![vec![1.0; j]; n];
        let mut e_bin = vec![0.0; j];
        for b in 0..j {
            e_bin[b] = (0..n).map(|i| exposures.phi[i][b]).sum();
        }
        let events_bin: Vec<f64> = cohort.events_per_bin().iter().map(|&e| e as f64).collect();
        let total_events: f64 = events_bin.iter().sum();
        let score_beta: Vec<f64> = (0..cohort.p())
            .map(|s| {
                (0..n)
                    .map(|i| {
                        let x = cohort.x_row(i)[s];
                        (0..j).map(|b| cohort.delta(i, b) as f64 * x).sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        let score_alpha: Vec<f64> = (0..cohort.q())
            .map(|s| {
                (0..n)
                    .map(|i| {
                        (0..j)
                            .map(|b| cohort.delta(i, b) as f64 * cohort.z_row(i, b)[s])
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect();

        let d = hazard_increments(&tree);
        let m = config.tree_depth as usize;
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let scale_b = AdaptiveScale::walk_sd((b_init / 2.0).max(1e-8));
        let scale_k = AdaptiveScale::walk_sd(config.init_k / 4.0);
        Ok(Self {
            cohort,
            tree,
            beta: vec![0.0; cohort.p()],
            alpha: vec![0.0; cohort.q()],
            mu_b,
            d,
            phi: exposures.phi,
            eta_exp,
            e_bin,
            events_bin,
            total_events,
            score_beta,
            score_alpha,
            rng,
            sweep_index: 0,
            adapting: true,
            scale_r: (0..m).map(|_| AdaptiveScale::concentration(40.0)).collect(),
            scale_gamma: (0..m).map(|_| AdaptiveScale::concentration(40.0)).collect(),
            scale_beta: (0..cohort.p()).map(|_| AdaptiveScale::walk_sd(0.2)).collect(),
            scale_alpha: (0..cohort.q()).map(|_| AdaptiveScale::walk_sd(0.2)).collect(),
            scale_b,
            scale_k,
            count_r: Counter::default(),
            count_gamma: Counter::default(),
            count_beta: Counter::default(),
            count_alpha: Counter::default(),
            count_a: Counter::default(),
            count_b: Counter::default(),
            count_k: Counter::default(),
            config,
        })
    }

    /// Current hazard increments.
    pub fn increments(&self) -> &[f64] {
        &self.d
    }

    /// Exact conjugate draw of `H`:
    /// `Gamma(a + total events, rate = 1/b + sum_j F_j E_j)` with
    /// `E_j = sum_i exp(eta_ij) Phi_ij`.
    pub fn gibbs_step_h(&mut self) -> Result<f64> {
        let shape = self.tree.a as f64 + self.total_events;
        let exposure: f64 = (0..self.d.len())
            .map(|b| self.d[b] / self.tree.h * self.e_bin[b])
            .sum();
        let rate = 1.0 / self.tree.b + exposure;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::ChainInvariant {
                sweep: self.sweep_index,
                message: format!(
                    "nonpositive gamma rate {rate} for H (a = {}, b = {}, H = {})",
                    self.tree.a, self.tree.b, self.tree.h
                ),
            });
        }
        let draw = GammaDist::new(shape, 1.0 / rate)
            .map_err(|e| Error::Numerical(format!("gamma draw for H: {e}")))?
            .sample(&mut self.rng);
        let ratio = draw / self.tree.h;
        for v in &mut self.d {
            *v *= ratio;
        }
        self.tree.h = draw;
        Ok(draw)
    }

    /// One Metropolis-Hastings update of `R[level][p]` (`level` is 1-based).
    /// Returns the accept flag.
    pub fn mh_step_r(&mut self, level: u32, p: usize) -> bool {
        let idx = (level - 1) as usize;
        let current = self.tree.r[idx][p];
        let kappa = self.scale_r[idx].value;
        let proposal = match self.propose_beta(current, kappa) {
            Some(v) => v,
            None => {
                self.finish_r_trial(idx, false);
                return false;
            }
        };

        let m = self.tree.m;
        let width = 1usize << (m - level);
        let left = (2 * p) * width..(2 * p + 1) * width;
        let right = (2 * p + 1) * width..(2 * p + 2) * width;
        let d_l: f64 = left.clone().map(|j| self.events_bin[j]).sum();
        let d_r: f64 = right.clone().map(|j| self.events_bin[j]).sum();
        let s_l: f64 = left.clone().map(|j| self.d[j] * self.e_bin[j]).sum::<f64>() / current;
        let s_r: f64 =
            right.clone().map(|j| self.d[j] * self.e_bin[j]).sum::<f64>() / (1.0 - current);

        let km = self.tree.k.powi(level as i32);
        let shape1 = 2.0 * self.tree.gamma[idx][p] * km * self.tree.a as f64;
        let shape2 = 2.0 * (1.0 - self.tree.gamma[idx][p]) * km * self.tree.a as f64;
        let target = |x: f64| {
            (shape1 - 1.0 + d_l) * x.ln() + (shape2 - 1.0 + d_r) * (1.0 - x).ln()
                - x * s_l
                - (1.0 - x) * s_r
        };
        let log_accept = target(proposal) - target(current)
            + beta_proposal_logpdf(current, proposal, kappa)
            - beta_proposal_logpdf(proposal, current, kappa);
        let accepted = self.metropolis_accept(log_accept);
        if accepted {
            let ratio_l = proposal / current;
            let ratio_r = (1.0 - proposal) / (1.0 - current);
            for j in left {
                self.d[j] *= ratio_l;
            }
            for j in right {
                self.d[j] *= ratio_r;
            }
            self.tree.r[idx][p] = proposal;
        }
        self.finish_r_trial(idx, accepted);
        accepted
    }

    fn finish_r_trial(&mut self, level_idx: usize, accepted: bool) {
        if self.adapting {
            self.scale_r[level_idx].adapt(accepted);
        } else {
            self.count_r.record(accepted);
        }
    }

    /// One Gaussian random-walk update of a covariate effect. `None` steps
    /// a time-independent effect (`beta[s]`), `Some` a time-varying one.
    pub fn mh_step_effect(&mut self, time_varying: bool, s: usize) -> bool {
        let (current, sigma_prior, scale, score) = if time_varying {
            (
                self.alpha[s],
                self.config.sigma_alpha,
                self.scale_alpha[s].value,
                self.score_alpha[s],
            )
        } else {
            (
                self.beta[s],
                self.config.sigma_beta,
                self.scale_beta[s].value,
                self.score_beta[s],
            )
        };
        let step = NormalDist::new(0.0, scale)
            .expect("positive proposal sd")
            .sample(&mut self.rng);
        let proposal = current + step;
        let delta = proposal - current;

        // Cumulative-hazard term with the shifted effect.
        let n = self.cohort.n_groups();
        let j = self.cohort.bins();
        let mut s_new = 0.0;
        for i in 0..n {
            let xi = if time_varying {
                0.0
            } else {
                self.cohort.x_row(i)[s]
            };
            for b in 0..j {
                let covariate = if time_varying {
                    self.cohort.z_row(i, b)[s]
                } else {
                    xi
                };
                s_new += self.d[b] * self.phi[i][b] * self.eta_exp[i][b] * (delta * covariate).exp();
            }
        }
        let s_old: f64 = (0..j).map(|b| self.d[b] * self.e_bin[b]).sum();
        let log_accept = score * delta - (s_new - s_old)
            - (proposal * proposal - current * current) / (2.0 * sigma_prior * sigma_prior);
        let accepted = self.metropolis_accept(log_accept);
        if accepted {
            for i in 0..n {
                for b in 0..j {
                    let covariate = if time_varying {
                        self.cohort.z_row(i, b)[s]
                    } else {
                        self.cohort.x_row(i)[s]
                    };
                    self.eta_exp[i][b] *= (delta * covariate).exp();
                }
            }
            for b in 0..j {
                self.e_bin[b] = (0..n).map(|i| self.eta_exp[i][b] * self.phi[i][b]).sum();
            }
            if time_varying {
                self.alpha[s] = proposal;
            } else {
                self.beta[s] = proposal;
            }
        }
        if self.adapting {
            if time_varying {
                self.scale_alpha[s].adapt(accepted);
            } else {
                self.scale_beta[s].adapt(accepted);
            }
        } else if time_varying {
            self.count_alpha.record(accepted);
        } else {
            self.count_beta.record(accepted);
        }
        accepted
    }

    /// Discrete +-1 Metropolis update of the prior shape `a` under its
    /// zero-truncated Poisson hyperprior.
    pub fn mh_step_a(&mut self) -> bool {
        let current = self.tree.a;
        let proposal = if self.rng.gen::<bool>() {
            current + 1
        } else {
            current.wrapping_sub(1)
        };
        let accepted = if proposal == 0 || current == u64::MAX {
            false
        } else {
            let log_accept = self.log_target_a(proposal) - self.log_target_a(current);
            self.metropolis_accept(log_accept)
        };
        if accepted {
            self.tree.a = proposal;
        }
        self.count_a.record(accepted);
        accepted
    }

    fn log_target_a(&self, a: u64) -> f64 {
        let af = a as f64;
        let mut total = af * self.config.mu_a.ln() - ln_gamma(af + 1.0);
        total += gamma_logpdf(self.tree.h, af, self.tree.b);
        total += self.split_prior_loglik(af, self.tree.k);
        total
    }

    /// Gaussian random-walk update of the prior scale `b` under its
    /// exponential hyperprior.
    pub fn mh_step_b(&mut self) -> bool {
        let current = self.tree.b;
        let step = NormalDist::new(0.0, self.scale_b.value)
            .expect("positive proposal sd")
            .sample(&mut self.rng);
        let proposal = current + step;
        let accepted = if proposal <= 0.0 {
            false
        } else {
            let target = |b: f64| {
                -(self.tree.a as f64) * b.ln() - self.tree.h / b - b / self.mu_b
            };
            self.metropolis_accept(target(proposal) - target(current))
        };
        if accepted {
            self.tree.b = proposal;
        }
        if self.adapting {
            self.scale_b.adapt(accepted);
        } else {
            self.count_b.record(accepted);
        }
        accepted
    }

    /// Gaussian random-walk update of the correlation-decay `k` under its
    /// exponential hyperprior.
    pub fn mh_step_k(&mut self) -> bool {
        let current = self.tree.k;
        let step = NormalDist::new(0.0, self.scale_k.value)
            .expect("positive proposal sd")
            .sample(&mut self.rng);
        let proposal = current + step;
        let accepted = if proposal <= 0.0 {
            false
        } else {
            let a = self.tree.a as f64;
            let target = |k: f64| self.split_prior_loglik(a, k) - k / self.config.mu_k;
            self.metropolis_accept(target(proposal) - target(current))
        };
        if accepted {
            self.tree.k = proposal;
        }
        if self.adapting {
            self.scale_k.adapt(accepted);
        } else {
            self.count_k.record(accepted);
        }
        accepted
    }

    /// Beta-proposal Metropolis-Hastings update of one split center
    /// `gamma[level][p]` under its Beta(u, w) hyperprior.
    pub fn mh_step_gamma(&mut self, level: u32, p: usize) -> bool {
        let idx = (level - 1) as usize;
        let current = self.tree.gamma[idx][p];
        let kappa = self.scale_gamma[idx].value;
        let proposal = match self.propose_beta(current, kappa) {
            Some(v) => v,
            None => {
                self.finish_gamma_trial(idx, false);
                return false;
            }
        };
        let r = self.tree.r[idx][p];
        let km = self.tree.k.powi(level as i32);
        let a = self.tree.a as f64;
        let (u, w) = (self.config.gamma_u, self.config.gamma_w);
        let target = |g: f64| {
            beta_logpdf(r, 2.0 * g * km * a, 2.0 * (1.0 - g) * km * a)
                + (u - 1.0) * g.ln()
                + (w - 1.0) * (1.0 - g).ln()
        };
        let log_accept = target(proposal) - target(current)
            + beta_proposal_logpdf(current, proposal, kappa)
            - beta_proposal_logpdf(proposal, current, kappa);
        let accepted = self.metropolis_accept(log_accept);
        if accepted {
            self.tree.gamma[idx][p] = proposal;
        }
        self.finish_gamma_trial(idx, accepted);
        accepted
    }

    fn finish_gamma_trial(&mut self, level_idx: usize, accepted: bool) {
        if self.adapting {
            self.scale_gamma[level_idx].adapt(accepted);
        } else {
            self.count_gamma.record(accepted);
        }
    }

    /// Runs the hyperparameter updates whose sampling flags are set.
    pub fn hyper_steps(&mut self) {
        if self.config.sample_a {
            self.mh_step_a();
        }
        if self.config.sample_b {
            self.mh_step_b();
        }
        if self.config.sample_k {
            self.mh_step_k();
        }
        if self.config.sample_gamma {
            for level in 1..=self.tree.m {
                for p in 0..(1usize << (level - 1)) {
                    self.mh_step_gamma(level, p);
                }
            }
        }
    }

    /// One full sweep in the configured order, followed by an exact
    /// refresh of the increments and an invariant check.
    pub fn sweep(&mut self) -> Result<()> {
        self.sweep_index += 1;
        self.adapting = self.sweep_index <= self.config.burn_in;
        match self.config.sweep_order {
            SweepOrder::Standard => {
                self.gibbs_step_h()?;
                for level in 1..=self.tree.m {
                    for p in 0..(1usize << (level - 1)) {
                        self.mh_step_r(level, p);
                    }
                }
                for s in 0..self.cohort.p() {
                    self.mh_step_effect(false, s);
                }
                for s in 0..self.cohort.q() {
                    self.mh_step_effect(true, s);
                }
                self.hyper_steps();
            }
            SweepOrder::Reversed => {
                self.hyper_steps();
                for s in (0..self.cohort.q()).rev() {
                    self.mh_step_effect(true, s);
                }
                for s in (0..self.cohort.p()).rev() {
                    self.mh_step_effect(false, s);
                }
                for level in (1..=self.tree.m).rev() {
                    for p in (0..(1usize << (level - 1))).rev() {
                        self.mh_step_r(level, p);
                    }
                }
                self.gibbs_step_h()?;
            }
        }
        // Refresh the increments from the tree so that sum(d) = H holds at
        // machine precision on every recorded state, then check invariants.
        self.d = hazard_increments(&self.tree);
        self.check_invariants()
    }

    fn check_invariants(&self) -> Result<()> {
        let ok = self.tree.h > 0.0
            && self.tree.h.is_finite()
            && self.tree.b > 0.0
            && self.tree.k > 0.0
            && self.tree.a >= 1
            && self
                .tree
                .r
                .iter()
                .chain(self.tree.gamma.iter())
                .flatten()
                .all(|v| 0.0 < *v && *v < 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::ChainInvariant {
                sweep: self.sweep_index,
                message: format!(
                    "state left the parameter space: H = {}, a = {}, b = {}, k = {}, r = {:?}",
                    self.tree.h, self.tree.a, self.tree.b, self.tree.k, self.tree.r
                ),
            })
        }
    }

    fn snapshot(&self) -> Draw {
        Draw {
            h: self.tree.h,
            r: self.tree.r.iter().flatten().copied().collect(),
            beta: self.beta.clone(),
            alpha: self.alpha.clone(),
            a: self.tree.a,
            b: self.tree.b,
            k: self.tree.k,
            gamma: self.tree.gamma.iter().flatten().copied().collect(),
            d: self.d.clone(),
        }
    }

    fn acceptance(&self) -> AcceptanceRates {
        AcceptanceRates {
            r: self.count_r.rate(),
            beta: self.count_beta.rate(),
            alpha: self.count_alpha.rate(),
            a: self.count_a.rate(),
            b: self.count_b.rate(),
            k: self.count_k.rate(),
            gamma: self.count_gamma.rate(),
        }
    }

    fn propose_beta(&mut self, center: f64, kappa: f64) -> Option<f64> {
        let dist = BetaDist::new(kappa * center, kappa * (1.0 - center)).ok()?;
        let draw = dist.sample(&mut self.rng);
        (draw > 0.0 && draw < 1.0 && draw.is_finite()).then_some(draw)
    }

    fn metropolis_accept(&mut self, log_accept: f64) -> bool {
        if !log_accept.is_finite() {
            return false;
        }
        log_accept >= 0.0 || self.rng.gen::<f64>().ln() < log_accept
    }

    /// Joint log-density of all split parameters under their Beta priors.
    fn split_prior_loglik(&self, a: f64, k: f64) -> f64 {
        let mut total = 0.0;
        for level in 1..=self.tree.m {
            let km = k.powi(level as i32);
            let idx = (level - 1) as usize;
            for p in 0..(1usize << (level - 1)) {
                let g = self.tree.gamma[idx][p];
                total += beta_logpdf(
                    self.tree.r[idx][p],
                    2.0 * g * km * a,
                    2.0 * (1.0 - g) * km * a,
                );
            }
        }
        total
    }
}

/// Runs a complete chain: burn-in, thinning, acceptance bookkeeping.
/// Reproducible from `config.rng_seed`.
pub fn run_chain(cohort: &BinnedCohort, config: &McmcConfig) -> Result<PosteriorChain> {
    let mut sampler = MrhSampler::new(cohort, config.clone())?;
    let mut draws =
        Vec::with_capacity((config.iterations - config.burn_in) / config.thin);
    for s in 1..=config.iterations {
        sampler.sweep()?;
        if s > config.burn_in && (s - config.burn_in) % config.thin == 0 {
            draws.push(sampler.snapshot());
        }
    }
    Ok(PosteriorChain {
        draws,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        rng_seed: config.rng_seed,
        tree_depth: config.tree_depth,
        omega: cohort.grid().omega(),
        acceptance: sampler.acceptance(),
        x_names: cohort.x_names().to_vec(),
        z_names: cohort.z_names().to_vec(),
    })
}

/// Posterior summary: per-bin hazard rates (medians of `d_j / omega` with
/// equal-tail credible intervals), effect summaries, and effective sample
/// sizes for the key parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub hazard: HazardEstimate,
    /// Summary of the seasonal cumulative hazard `H`.
    pub h: EffectEstimate,
    /// Effective sample sizes, labeled.
    pub ess: Vec<(String, f64)>,
    /// Set when fewer than 100 retained draws back the summaries.
    pub low_draws: bool,
}

pub fn summarize_posterior(chain: &PosteriorChain, level: f64) -> Result<PosteriorSummary> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!(
            "coverage level must be in (0,1), got {level}"
        )));
    }
    if chain.draws.is_empty() {
        return Err(Error::Validation("chain has no retained draws".to_string()));
    }
    let n = chain.draws.len();
    let low_draws = n < 100;
    let j = chain.draws[0].d.len();
    let tail = (1.0 - level) / 2.0;

    let mut lambda = vec![0.0; j];
    let mut lower = vec![0.0; j];
    let mut upper = vec![0.0; j];
    let mut ess = Vec::new();
    for b in 0..j {
        let series: Vec<f64> = chain.draws.iter().map(|dr| dr.d[b] / chain.omega).collect();
        lambda[b] = quantile(&series, 0.5);
        lower[b] = quantile(&series, tail);
        upper[b] = quantile(&series, 1.0 - tail);
        ess.push((format!("d_{}", b + 1), effective_sample_size(&series)));
    }
    let summarize = |name: &str, series: Vec<f64>, ess: &mut Vec<(String, f64)>| {
        ess.push((name.to_string(), effective_sample_size(&series)));
        EffectEstimate {
            name: name.to_string(),
            estimate: quantile(&series, 0.5),
            se: sample_sd(&series),
            lower: quantile(&series, tail),
            upper: quantile(&series, 1.0 - tail),
        }
    };
    let h = summarize(
        "H",
        chain.draws.iter().map(|dr| dr.h).collect(),
        &mut ess,
    );
    let beta = chain
        .x_names
        .iter()
        .enumerate()
        .map(|(s, name)| summarize(name, chain.draws.iter().map(|dr| dr.beta[s]).collect(), &mut ess))
        .collect();
    let alpha = chain
        .z_names
        .iter()
        .enumerate()
        .map(|(s, name)| summarize(name, chain.draws.iter().map(|dr| dr.alpha[s]).collect(), &mut ess))
        .collect();

    Ok(PosteriorSummary {
        hazard: HazardEstimate {
            lambda,
            lower,
            upper,
            boundary: vec![false; j],
            beta,
            alpha,
            level,
        },
        h,
        ess,
        low_draws,
    })
}

/// Equal-tail sample quantile with linear interpolation between order
/// statistics.
pub fn quantile(series: &[f64], p: f64) -> f64 {
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sample standard deviation (n - 1 denominator).
pub(crate) fn sample_sd(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n;
    (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Effective sample size by the initial-positive-sequence rule on paired
/// autocovariances. A constant series reports its full length.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let autocov = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|t| (series[t] - mean) * (series[t + lag] - mean))
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut iat = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = autocov(lag) + autocov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        iat += 2.0 * pair / c0;
        lag += 2;
    }
    (n as f64 / iat).min(n as f64)
}

fn beta_logpdf(x: f64, shape1: f64, shape2: f64) -> f64 {
    if !(0.0 < x && x < 1.0) || shape1 <= 0.0 || shape2 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape1 - 1.0) * x.ln() + (shape2 - 1.0) * (1.0 - x).ln() - ln_beta(shape1, shape2)
}

/// Log-density of the Beta proposal centered at `center` with
/// concentration `kappa`, evaluated at `x`.
fn beta_proposal_logpdf(x: f64, center: f64, kappa: f64) -> f64 {
    beta_logpdf(x, kappa * center, kappa * (1.0 - center))
}

fn gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 || shape <= 0.0 || scale <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -shape * scale.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - x / scale
}
