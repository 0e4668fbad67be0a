//! Monthly CSV records to a binned cohort.
//!
//! Input schema (one row per calendar month, header required, `NA` for
//! missing):
//!
//! ```text
//! year,month,cases,tmax_c,tmin_c,humidity3pm_pct,dust_pct,co_g_per_day,pneumonia,population
//! ```
//!
//! `population` may be absent on most rows; the rows that carry it act as
//! anchors for piecewise-linear interpolation of the at-risk population.
//! The transforms here turn those rows into `BinnedCohort` groups, one per
//! seasonal year:
//!
//! * at-risk counts from linear interpolation between population anchors;
//! * covariates shifted by their documented lags, with the first `lag`
//!   months marked unavailable;
//! * monthly covariate readings carried onto mid-bin time points by a cubic
//!   smoothing spline, then standardized over the fitting window;
//! * monthly case counts apportioned to bins by largest-remainder assignment
//!   over month/bin overlap (exact passthrough when bins are months);
//! * population decreases attributed to censoring, increases to new
//!   entrants, and all end-of-season survivors censored in the final bin
//!   with full-bin occupancy.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::cohort::{BinnedCohort, CovariateTransform};
use crate::error::{Error, Result};
use crate::grid::BinGrid;
use crate::smooth::SmoothingSpline;

/// The covariate columns of the input schema, in file order.
pub const COVARIATE_COLUMNS: [&str; 6] = [
    "tmax_c",
    "tmin_c",
    "humidity3pm_pct",
    "dust_pct",
    "co_g_per_day",
    "pneumonia",
];

const HEADER: [&str; 10] = [
    "year",
    "month",
    "cases",
    "tmax_c",
    "tmin_c",
    "humidity3pm_pct",
    "dust_pct",
    "co_g_per_day",
    "pneumonia",
    "population",
];

/// Raw monthly series parsed from the CSV schema. Month indices are
/// consecutive with no gaps; covariate cells may be missing (`NA`).
#[derive(Debug, Clone)]
pub struct RawMonthlySeries {
    /// Index of the first month, counted as `year * 12 + (month - 1)`.
    start: i64,
    cases: Vec<u64>,
    covariates: BTreeMap<String, Vec<Option<f64>>>,
    population: Vec<Option<f64>>,
}

impl RawMonthlySeries {
    /// Parses the documented CSV schema from a reader.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv.headers().map_err(|e| Error::Csv(e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != HEADER {
            return Err(Error::Csv(format!(
                "expected header {:?}, got {:?}",
                HEADER.join(","),
                got.join(",")
            )));
        }

        let mut months: Vec<i64> = Vec::new();
        let mut cases: Vec<u64> = Vec::new();
        let mut covariates: BTreeMap<String, Vec<Option<f64>>> = COVARIATE_COLUMNS
            .iter()
            .map(|c| (c.to_string(), Vec::new()))
            .collect();
        let mut population: Vec<Option<f64>> = Vec::new();

        for (row_idx, record) in csv.records().enumerate() {
            let record = record.map_err(|e| Error::Csv(e.to_string()))?;
            let line = row_idx + 2; // 1-based, after the header
            let field = |i: usize| -> &str { record.get(i).unwrap_or("") };
            let year: i64 = field(0)
                .parse()
                .map_err(|_| Error::Csv(format!("line {line}: bad year {:?}", field(0))))?;
            let month: i64 = field(1)
                .parse()
                .map_err(|_| Error::Csv(format!("line {line}: bad month {:?}", field(1))))?;
            if !(1..=12).contains(&month) {
                return Err(Error::Csv(format!("line {line}: month {month} outside 1..=12")));
            }
            months.push(year * 12 + (month - 1));
            let case_count: u64 = field(2)
                .parse()
                .map_err(|_| Error::Csv(format!("line {line}: bad cases {:?}", field(2))))?;
            cases.push(case_count);
            for (k, col) in COVARIATE_COLUMNS.iter().enumerate() {
                let cell = parse_optional(field(3 + k))
                    .map_err(|_| Error::Csv(format!("line {line}: bad {col} {:?}", field(3 + k))))?;
                covariates.get_mut(*col).expect("fixed schema").push(cell);
            }
            let pop = parse_optional(field(9))
                .map_err(|_| Error::Csv(format!("line {line}: bad population {:?}", field(9))))?;
            if let Some(p) = pop {
                if p <= 0.0 {
                    return Err(Error::Csv(format!("line {line}: population must be positive")));
                }
            }
            population.push(pop);
        }

        if months.is_empty() {
            return Err(Error::Csv("no data rows".to_string()));
        }
        for (idx, pair) in months.windows(2).enumerate() {
            if pair[1] != pair[0] + 1 {
                return Err(Error::Validation(format!(
                    "month indices must be consecutive with no gaps; break after {}",
                    label_for(months[idx])
                )));
            }
        }
        Ok(Self {
            start: months[0],
            cases,
            covariates,
            population,
        })
    }

    /// Parses the documented CSV schema from a file.
    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file)
    }

    pub fn months(&self) -> usize {
        self.cases.len()
    }

    /// `(month_index, population)` pairs for the rows carrying a value.
    pub fn population_anchors(&self) -> Vec<(i64, f64)> {
        self.population
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|v| (self.start + i as i64, v)))
            .collect()
    }

    pub fn cases(&self) -> &[u64] {
        &self.cases
    }

    pub fn covariate(&self, name: &str) -> Option<&[Option<f64>]> {
        self.covariates.get(name).map(|v| v.as_slice())
    }

    pub fn start_month(&self) -> i64 {
        self.start
    }
}

fn parse_optional(cell: &str) -> std::result::Result<Option<f64>, ()> {
    if cell == "NA" || cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|_| ())
}

fn label_for(month_index: i64) -> String {
    let year = month_index.div_euclid(12);
    let month = month_index.rem_euclid(12) + 1;
    format!("{year:04}-{month:02}")
}

/// One covariate to carry into the cohort, with its lag in months.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSelection {
    pub column: String,
    pub lag: usize,
}

/// Which covariates enter the model. The default reproduces the analysis
/// set: maximum temperature and dust unlagged; minimum temperature,
/// humidity, and carbon monoxide lagged one month; pneumonia counts lagged
/// two months.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    pub selections: Vec<CovariateSelection>,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        let lags = [
            ("tmax_c", 0),
            ("tmin_c", 1),
            ("humidity3pm_pct", 1),
            ("dust_pct", 0),
            ("co_g_per_day", 1),
            ("pneumonia", 2),
        ];
        Self {
            selections: lags
                .iter()
                .map(|(column, lag)| CovariateSelection {
                    column: column.to_string(),
                    lag: *lag,
                })
                .collect(),
        }
    }
}

impl CovariateSpec {
    pub fn none() -> Self {
        Self {
            selections: Vec::new(),
        }
    }
}

/// Within-bin occupancy assigned to subjects exiting during a bin. Subjects
/// censored administratively at the season end always occupy the full final
/// bin, whichever rule is chosen here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRule {
    /// Exits occupy half the bin (mid-bin exit); the default.
    MidBin,
    /// Exits occupy the whole bin; for sensitivity runs.
    EndOfBin,
}

impl TauRule {
    fn occupancy(self, omega: f64) -> f64 {
        match self {
            TauRule::MidBin => omega / 2.0,
            TauRule::EndOfBin => omega,
        }
    }
}

/// Piecewise-linear interpolation of population anchors, rounded to the
/// nearest integer, for every month in `months`. Anchor months reproduce
/// their anchor values exactly. Queries outside the anchor hull are an
/// error unless `allow_extrapolation` is set.
pub fn interpolate_population(
    anchors: &[(i64, f64)],
    months: std::ops::RangeInclusive<i64>,
    allow_extrapolation: bool,
) -> Result<Vec<u64>> {
    let interp = PopulationCurve::new(anchors)?;
    months
        .map(|m| {
            let v = interp.at(m as f64, allow_extrapolation)?;
            Ok(v.round().max(0.0) as u64)
        })
        .collect()
}

/// Continuous-time view of the population anchors (time in months).
struct PopulationCurve {
    anchors: Vec<(f64, f64)>,
}

impl PopulationCurve {
    fn new(anchors: &[(i64, f64)]) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::Config(format!(
                "population interpolation needs at least 2 anchors, got {}",
                anchors.len()
            )));
        }
        if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation(
                "population anchor months must be strictly increasing".to_string(),
            ));
        }
        Ok(Self {
            anchors: anchors.iter().map(|(m, p)| (*m as f64, *p)).collect(),
        })
    }

    fn at(&self, t: f64, allow_extrapolation: bool) -> Result<f64> {
        let first = self.anchors[0];
        let last = *self.anchors.last().expect("at least two anchors");
        if (t < first.0 || t > last.0) && !allow_extrapolation {
            return Err(Error::Validation(format!(
                "month {t} outside the population anchor range [{}, {}] \
                 and extrapolation was not requested",
                first.0, last.0
            )));
        }
        // Segment lookup; clamp to the end segments when extrapolating.
        let seg = self
            .anchors
            .windows(2)
            .position(|w| t <= w[1].0)
            .unwrap_or(self.anchors.len() - 2);
        let (x0, y0) = self.anchors[seg];
        let (x1, y1) = self.anchors[seg + 1];
        Ok(y0 + (y1 - y0) * (t - x0) / (x1 - x0))
    }
}

/// Shifts a monthly series back by `lag` months: `output[t] = input[t - lag]`,
/// with the first `lag` entries marked unavailable.
pub fn lag_covariate(series: &[Option<f64>], lag: usize) -> Result<Vec<Option<f64>>> {
    if lag >= series.len() {
        return Err(Error::Validation(format!(
            "lag {lag} is not smaller than the series length {}",
            series.len()
        )));
    }
    let mut out = vec![None; lag];
    out.extend_from_slice(&series[..series.len() - lag]);
    Ok(out)
}

/// Carries 12 monthly values (one seasonal year, mid-month readings) onto
/// the `J` mid-bin time points with a GCV-smoothed cubic spline.
pub fn resample_covariate_to_bins(series: &[f64], grid: &BinGrid) -> Result<Vec<f64>> {
    if series.len() != 12 {
        return Err(Error::Validation(format!(
            "per-season covariate resampling needs 12 monthly values, got {}",
            series.len()
        )));
    }
    let x: Vec<f64> = (0..12).map(|m| m as f64 + 0.5).collect();
    let spline = SmoothingSpline::fit(&x, series)?;
    Ok((0..grid.j()).map(|b| spline.evaluate(grid.bin_mid(b))).collect())
}

/// Apportions integer counts from one month across the bins it overlaps, by
/// largest remainder over the overlap fractions. Deterministic, preserves
/// the total, breaks ties toward the lower bin index.
fn apportion_month(count: u64, month_local: usize, grid: &BinGrid) -> Vec<(usize, u64)> {
    let omega = grid.omega();
    let (m0, m1) = (month_local as f64, month_local as f64 + 1.0);
    let mut shares: Vec<(usize, f64)> = Vec::new();
    for b in 0..grid.j() {
        let (b0, b1) = (b as f64 * omega, (b + 1) as f64 * omega);
        let overlap = (m1.min(b1) - m0.max(b0)).max(0.0);
        if overlap > 1e-12 {
            shares.push((b, overlap));
        }
    }
    let mut assigned: Vec<(usize, u64)> = Vec::with_capacity(shares.len());
    let mut remainders: Vec<(f64, usize, usize)> = Vec::with_capacity(shares.len());
    let mut used = 0u64;
    for (slot, (b, frac)) in shares.iter().enumerate() {
        let quota = count as f64 * frac;
        let base = quota.floor() as u64;
        used += base;
        assigned.push((*b, base));
        remainders.push((quota - base as f64, *b, slot));
    }
    let mut leftover = count - used;
    remainders.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    for (_, _, slot) in remainders {
        if leftover == 0 {
            break;
        }
        assigned[slot].1 += 1;
        leftover -= 1;
    }
    assigned
}

/// Assembles the preprocessing into the grouped data model: one cohort
/// group per complete seasonal year with available (post-lag) covariates.
pub fn build_binned_cohort(
    raw: &RawMonthlySeries,
    grid: BinGrid,
    spec: &CovariateSpec,
    tau_rule: TauRule,
) -> Result<BinnedCohort> {
    let j = grid.j();
    let omega = grid.omega();
    let n_months = raw.months();

    // Lag the selected covariates on the full monthly timeline.
    let mut lagged: Vec<(String, Vec<Option<f64>>)> = Vec::with_capacity(spec.selections.len());
    for sel in &spec.selections {
        let series = raw.covariate(&sel.column).ok_or_else(|| {
            Error::Config(format!("unknown covariate column {:?}", sel.column))
        })?;
        lagged.push((sel.column.clone(), lag_covariate(series, sel.lag)?));
    }
    let max_lag = spec.selections.iter().map(|s| s.lag).max().unwrap_or(0);

    // Seasons: 12-month windows starting at the configured calendar month,
    // fully inside the data range and clear of the lag-unavailable prefix.
    let season_start_offset = (0..n_months)
        .find(|&m| {
            (raw.start_month() + m as i64).rem_euclid(12) + 1 == grid.season_start_month() as i64
        })
        .ok_or_else(|| Error::Validation("no season start month in the data".to_string()))?;
    let mut season_starts: Vec<usize> = Vec::new();
    let mut s = season_start_offset;
    while s + 12 <= n_months {
        if s >= max_lag {
            season_starts.push(s);
        }
        s += 12;
    }
    if season_starts.is_empty() {
        return Err(Error::Validation(
            "no complete seasonal year with available covariates".to_string(),
        ));
    }

    // Any missing covariate cell inside a used season is a data defect (the
    // lag-unavailable prefix was already excluded above).
    for &start in &season_starts {
        for (name, series) in &lagged {
            for m in start..start + 12 {
                if series[m].is_none() {
                    return Err(Error::Validation(format!(
                        "covariate {name} is missing for month {}",
                        label_for(raw.start_month() + m as i64)
                    )));
                }
            }
        }
    }

    let pop = PopulationCurve::new(&raw.population_anchors())?;
    let n_groups = season_starts.len();
    let mut delta = vec![vec![0u64; j]; n_groups];
    let mut gamma = vec![vec![0u64; j]; n_groups];
    let mut n_at_risk = vec![vec![0u64; j]; n_groups];
    let mut tau = vec![vec![0.0f64; j]; n_groups];
    let mut z = vec![vec![Vec::new(); j]; n_groups];
    let mut labels = Vec::with_capacity(n_groups);

    for (i, &start) in season_starts.iter().enumerate() {
        let t0 = start as f64; // season start, months from the series start
        labels.push(format!(
            "{}-{}",
            label_for(raw.start_month() + start as i64),
            label_for(raw.start_month() + start as i64 + 11)
        ));

        // Events: monthly cases apportioned onto the bin grid.
        for m_local in 0..12 {
            let count = raw.cases()[start + m_local];
            for (b, c) in apportion_month(count, m_local, &grid) {
                delta[i][b] += c;
            }
        }

        // At-risk counts at bin starts (rounded interpolated population),
        // plus the season-end population for the final accounting step.
        let origin = raw.start_month() as f64;
        let mut edges = Vec::with_capacity(j + 1);
        for b in 0..=j {
            let t = origin + t0 + b as f64 * omega;
            edges.push(pop.at(t, false)?.round().max(0.0) as i64);
        }
        for b in 0..j {
            let at_risk = edges[b];
            let d = delta[i][b] as i64;
            if d > at_risk {
                return Err(Error::Validation(format!(
                    "season {}: events in bin {b} ({d}) exceed the at-risk population ({at_risk})",
                    labels[i]
                )));
            }
            // n[b] - (delta + gamma) + entrants = n[b+1]; decreases beyond
            // the observed events become censoring, increases entrants.
            let shortfall = at_risk - d - edges[b + 1];
            let pop_censored = shortfall.max(0) as u64;
            n_at_risk[i][b] = at_risk as u64;
            gamma[i][b] = pop_censored;

            let exits_mid = delta[i][b] + pop_censored;
            let end_censored = if b == j - 1 {
                // Administrative close-out: every survivor is censored in
                // the final bin with full-bin occupancy.
                let survivors = at_risk as u64 - exits_mid;
                gamma[i][b] += survivors;
                survivors
            } else {
                0
            };
            let exits_total = exits_mid + end_censored;
            tau[i][b] = if exits_total == 0 {
                tau_rule.occupancy(omega)
            } else {
                (tau_rule.occupancy(omega) * exits_mid as f64 + omega * end_censored as f64)
                    / exits_total as f64
            };
        }

        // Covariates: spline-resample each season's 12 monthly readings to
        // the mid-bin time points.
        let mut per_bin: Vec<Vec<f64>> = Vec::with_capacity(lagged.len());
        for (_, series) in &lagged {
            let monthly: Vec<f64> = (start..start + 12)
                .map(|m| series[m].expect("validated above"))
                .collect();
            per_bin.push(resample_covariate_to_bins(&monthly, &grid)?);
        }
        for b in 0..j {
            z[i][b] = per_bin.iter().map(|col| col[b]).collect();
        }
    }

    // Standardize each covariate over the fitting window, recording the
    // transform so effects can be reported on either scale.
    let q = spec.selections.len();
    let mut transforms = Vec::with_capacity(q);
    let cells = (n_groups * j) as f64;
    for s_idx in 0..q {
        let mean: f64 = z.iter().flatten().map(|row| row[s_idx]).sum::<f64>() / cells;
        let var: f64 = z
            .iter()
            .flatten()
            .map(|row| (row[s_idx] - mean).powi(2))
            .sum::<f64>()
            / (cells - 1.0);
        let sd = var.sqrt();
        if sd < 1e-12 {
            return Err(Error::Validation(format!(
                "covariate {} is constant over the fitting window and cannot be standardized",
                spec.selections[s_idx].column
            )));
        }
        for row in z.iter_mut().flatten() {
            row[s_idx] = (row[s_idx] - mean) / sd;
        }
        transforms.push(CovariateTransform { mean, sd });
    }

    let z_names: Vec<String> = spec
        .selections
        .iter()
        .map(|sel| {
            if sel.lag == 0 {
                sel.column.clone()
            } else {
                format!("{}_lag{}", sel.column, sel.lag)
            }
        })
        .collect();

    let mut cohort = BinnedCohort::new(
        grid,
        delta,
        gamma,
        n_at_risk,
        tau,
        vec![Vec::new(); n_groups],
        z,
        Vec::new(),
        z_names,
    )?;
    cohort.set_z_transforms(transforms);
    cohort.set_group_labels(labels);
    Ok(cohort)
}
