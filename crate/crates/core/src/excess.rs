//! Observed-versus-forecast comparison: per-group excess-death
//! distributions, significance flags against the ensemble bands, index
//! tracking in score space, and the COVID-death adjustment.

use std::collections::BTreeMap;
use std::io;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::panel::{CovidWeekly, RatePanel};
use crate::pca::{project_week, PcaDecomposition};
use crate::residual::ResidualModel;
use crate::series::SeriesKey;
use crate::simulate::{group_death_quantiles, theoretical_pc1_interval, ForecastEnsemble};
use crate::trend::TrendModel;
use crate::week::WeekIndex;

/// A named union of series indices.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub name: String,
    pub series_indices: Vec<usize>,
}

/// One group covering the whole panel.
pub fn group_all(series: &[SeriesKey]) -> Vec<GroupSpec> {
    vec![GroupSpec { name: "all".into(), series_indices: (0..series.len()).collect() }]
}

/// One group per country, in series order.
pub fn groups_by_country(series: &[SeriesKey]) -> Vec<GroupSpec> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, key) in series.iter().enumerate() {
        if !map.contains_key(&key.country) {
            order.push(key.country.clone());
        }
        map.entry(key.country.clone()).or_default().push(i);
    }
    order
        .into_iter()
        .map(|c| {
            let idx = map.remove(&c).expect("inserted above");
            GroupSpec { name: c, series_indices: idx }
        })
        .collect()
}

/// One group per sex x age stratum across all countries.
pub fn groups_by_sex_age(series: &[SeriesKey]) -> Vec<GroupSpec> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, key) in series.iter().enumerate() {
        let name = format!("{}_{}", key.sex.code(), key.age_group.code());
        if !map.contains_key(&name) {
            order.push(name.clone());
        }
        map.entry(name).or_default().push(i);
    }
    order
        .into_iter()
        .map(|name| {
            let idx = map.remove(&name).expect("inserted above");
            GroupSpec { name, series_indices: idx }
        })
        .collect()
}

/// High-side three-way reading of one week: above the 95% upper bound,
/// above only the 75% one, or neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcessLabel {
    Significant,
    Inconclusive,
    None,
}

#[derive(Debug, Clone)]
pub struct ExcessRow {
    pub week: WeekIndex,
    pub group: String,
    pub observed_deaths: f64,
    pub expected_median: f64,
    pub lo75: f64,
    pub hi75: f64,
    pub lo95: f64,
    pub hi95: f64,
    /// Equal-tailed bounds at the report level.
    pub expected_lower: f64,
    pub expected_upper: f64,
    pub excess_median: f64,
    /// observed - expected_upper.
    pub excess_lower: f64,
    /// observed - expected_lower.
    pub excess_upper: f64,
    pub significant_high: bool,
    pub significant_low: bool,
    pub label: ExcessLabel,
}

impl ExcessRow {
    pub fn flag_str(&self) -> &'static str {
        if self.significant_high {
            "significant_high"
        } else if self.significant_low {
            "significant_low"
        } else if self.label == ExcessLabel::Inconclusive {
            "inconclusive"
        } else {
            "none"
        }
    }
}

/// Rows are ordered group-major, weeks ascending within each group.
#[derive(Debug, Clone)]
pub struct ExcessReport {
    pub level: f64,
    pub weeks: Vec<WeekIndex>,
    pub group_names: Vec<String>,
    pub rows: Vec<ExcessRow>,
}

fn observed_deaths_matrix(panel: &RatePanel) -> ndarray::Array2<f64> {
    match &panel.deaths {
        Some(d) => d.clone(),
        None => &panel.rates * &panel.exposures,
    }
}

/// Compares observed deaths against the ensemble per group. Observed
/// weeks must all lie inside the ensemble horizon; group trajectories are
/// summed per trajectory before taking quantiles.
pub fn excess_report(
    observed: &RatePanel,
    ensemble: &ForecastEnsemble,
    groups: &[GroupSpec],
    level: f64,
) -> Result<ExcessReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Data(format!("report level {level} outside (0,1)")));
    }
    if groups.is_empty() {
        return Err(Error::Data("at least one group is required".into()));
    }
    let n_series = ensemble.n_series();
    if observed.series.len() != n_series {
        return Err(Error::Data(format!(
            "observed panel has {} series but the ensemble has {n_series}",
            observed.series.len()
        )));
    }
    for g in groups {
        for &s in &g.series_indices {
            if s >= n_series {
                return Err(Error::Data(format!(
                    "group {} references unknown series index {s}",
                    g.name
                )));
            }
        }
    }
    let horizon_by_offset: BTreeMap<i64, usize> = ensemble
        .horizon_weeks
        .iter()
        .enumerate()
        .map(|(t, w)| (w.offset, t))
        .collect();
    let aligned: Vec<(usize, usize)> = observed
        .weeks
        .iter()
        .enumerate()
        .filter_map(|(wi, w)| horizon_by_offset.get(&w.offset).map(|t| (wi, *t)))
        .collect();
    if aligned.is_empty() {
        return Err(Error::Data("observed weeks do not overlap the forecast horizon".into()));
    }
    if aligned.len() != observed.weeks.len() {
        return Err(Error::Data(format!(
            "only {} of {} observed weeks fall inside the forecast horizon",
            aligned.len(),
            observed.weeks.len()
        )));
    }

    // quantile levels: fixed 75/95 bands, the median, and the report level
    let a = (1.0 - level) / 2.0;
    let mut levels = vec![0.025, 0.125, 0.5, 0.875, 0.975, a, 1.0 - a];
    levels.sort_unstable_by(f64::total_cmp);
    levels.dedup();
    let pos = |p: f64| levels.iter().position(|l| *l == p).expect("inserted above");
    let (i_lo95, i_lo75, i_med, i_hi75, i_hi95) =
        (pos(0.025), pos(0.125), pos(0.5), pos(0.875), pos(0.975));
    let (i_lo, i_hi) = (pos(a), pos(1.0 - a));

    let deaths = observed_deaths_matrix(observed);
    let mut rows = Vec::with_capacity(groups.len() * aligned.len());
    for g in groups {
        let q = group_death_quantiles(ensemble, &g.series_indices, &levels)?;
        for &(wi, t) in &aligned {
            let obs: f64 = g.series_indices.iter().map(|&s| deaths[(wi, s)]).sum();
            let expected_median = q[(t, i_med)];
            let expected_lower = q[(t, i_lo)];
            let expected_upper = q[(t, i_hi)];
            let hi95 = q[(t, i_hi95)];
            let hi75 = q[(t, i_hi75)];
            let significant_high = obs > expected_upper;
            let significant_low = obs < expected_lower;
            let label = if obs > hi95 {
                ExcessLabel::Significant
            } else if obs > hi75 {
                ExcessLabel::Inconclusive
            } else {
                ExcessLabel::None
            };
            rows.push(ExcessRow {
                week: observed.weeks[wi],
                group: g.name.clone(),
                observed_deaths: obs,
                expected_median,
                lo75: q[(t, i_lo75)],
                hi75,
                lo95: q[(t, i_lo95)],
                hi95,
                expected_lower,
                expected_upper,
                excess_median: obs - expected_median,
                excess_lower: obs - expected_upper,
                excess_upper: obs - expected_lower,
                significant_high,
                significant_low,
                label,
            });
        }
    }
    Ok(ExcessReport {
        level,
        weeks: aligned.iter().map(|&(wi, _)| observed.weeks[wi]).collect(),
        group_names: groups.iter().map(|g| g.name.clone()).collect(),
        rows,
    })
}

/// One week of index tracking: the observed panel row projected onto
/// component 1 against the closed-form forecast band.
#[derive(Debug, Clone)]
pub struct Pc1TrackRow {
    pub week: WeekIndex,
    pub observed_index: f64,
    pub forecast_median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Lower index means higher mortality, so the alarm side is below.
    pub below_lower: bool,
}

/// Projects observed logit rows onto the decomposition and compares
/// component 1 against its band. `observed_weeks` pairs with the rows and
/// aligns them inside the forecast horizon, which starts right after the
/// trend's baseline.
pub fn pc1_tracking(
    pca: &PcaDecomposition,
    observed_logit_rows: ArrayView2<f64>,
    observed_weeks: &[WeekIndex],
    pc1_trend: &TrendModel,
    pc1_residual: &ResidualModel,
    level: f64,
) -> Result<Vec<Pc1TrackRow>> {
    let n = observed_logit_rows.nrows();
    if n == 0 {
        return Err(Error::Data("no observed rows to track".into()));
    }
    if observed_weeks.len() != n {
        return Err(Error::Data(format!(
            "{} observed weeks for {n} rows",
            observed_weeks.len()
        )));
    }
    if observed_logit_rows.ncols() != pca.n_series() {
        return Err(Error::Data(format!(
            "observed rows have {} series but the decomposition has {}",
            observed_logit_rows.ncols(),
            pca.n_series()
        )));
    }
    let first = pc1_trend
        .baseline_weeks
        .last()
        .ok_or_else(|| Error::Data("trend model has no baseline weeks".into()))?
        .offset
        + 1;
    let mut positions = Vec::with_capacity(n);
    for w in observed_weeks {
        if w.offset < first {
            return Err(Error::Data(format!(
                "observed week year {} week {} precedes the forecast start",
                w.year, w.week
            )));
        }
        positions.push((w.offset - first) as usize);
    }
    let horizon = positions.iter().max().expect("non-empty") + 1;
    let band = theoretical_pc1_interval(pc1_trend, pc1_residual, horizon, level)?;
    let mut out = Vec::with_capacity(n);
    for (i, &t) in positions.iter().enumerate() {
        let scores = project_week(pca, observed_logit_rows.row(i))?;
        let observed_index = scores[0];
        out.push(Pc1TrackRow {
            week: observed_weeks[i],
            observed_index,
            forecast_median: band.median[t],
            lower: band.lower[t],
            upper: band.upper[t],
            below_lower: observed_index < band.lower[t],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AdjustedRow {
    pub week: WeekIndex,
    pub group: String,
    pub covid_deaths: f64,
    pub adjusted_median: f64,
    pub adjusted_lower: f64,
    pub adjusted_upper: f64,
    /// Adjusted excess band strictly above zero.
    pub significant_high: bool,
    /// Adjusted excess band strictly below zero.
    pub significant_low: bool,
}

#[derive(Debug, Clone)]
pub struct AdjustedReport {
    pub rows: Vec<AdjustedRow>,
    pub warnings: Vec<String>,
}

/// The countries a group spans, provided the group is a union of whole
/// country blocks; partial coverage of any country is an error.
fn group_countries(g: &GroupSpec, series: &[SeriesKey]) -> Result<Vec<String>> {
    let mut per_country: BTreeMap<&str, usize> = BTreeMap::new();
    for key in series {
        *per_country.entry(key.country.as_str()).or_default() += 1;
    }
    let mut covered: BTreeMap<&str, usize> = BTreeMap::new();
    for &s in &g.series_indices {
        let key = series
            .get(s)
            .ok_or_else(|| Error::Data(format!("group {} series index {s} out of range", g.name)))?;
        *covered.entry(key.country.as_str()).or_default() += 1;
    }
    let mut out = Vec::new();
    for (country, n) in covered {
        if per_country[country] != n {
            return Err(Error::Data(format!(
                "group {} covers {n} of {} series for {country}; cannot attribute national COVID deaths",
                g.name, per_country[country]
            )));
        }
        out.push(country.to_string());
    }
    Ok(out)
}

/// Subtracts weekly COVID deaths from each excess quantile and reflags
/// against zero. Groups must be unions of whole countries; COVID weeks
/// missing from `covid` count as zero and produce a warning.
pub fn covid_adjusted_report(
    report: &ExcessReport,
    groups: &[GroupSpec],
    series: &[SeriesKey],
    covid: &CovidWeekly,
) -> Result<AdjustedReport> {
    let group_map: BTreeMap<&str, &GroupSpec> =
        groups.iter().map(|g| (g.name.as_str(), g)).collect();
    let mut countries_per_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for name in &report.group_names {
        let g = group_map
            .get(name.as_str())
            .ok_or_else(|| Error::Data(format!("group {name} missing from grouping")))?;
        let countries = group_countries(g, series)?;
        let mut idx = Vec::with_capacity(countries.len());
        for c in countries {
            let j = covid
                .countries
                .iter()
                .position(|cc| *cc == c)
                .ok_or_else(|| Error::Data(format!("no COVID data for country {c}")))?;
            idx.push(j);
        }
        countries_per_group.insert(name.as_str(), idx);
    }
    let covid_by_offset: BTreeMap<i64, usize> =
        covid.weeks.iter().enumerate().map(|(i, w)| (w.offset, i)).collect();
    let mut warnings = Vec::new();
    let mut missing: Vec<String> = Vec::new();
    let mut rows = Vec::with_capacity(report.rows.len());
    for r in &report.rows {
        let country_cols = &countries_per_group[r.group.as_str()];
        let cd = match covid_by_offset.get(&r.week.offset) {
            Some(&i) => country_cols.iter().map(|&j| covid.deaths[(i, j)]).sum(),
            None => {
                let tag = format!("{}-{:02}", r.week.year, r.week.week);
                if !missing.contains(&tag) {
                    missing.push(tag);
                }
                0.0
            }
        };
        let adjusted_median = r.excess_median - cd;
        let adjusted_lower = r.excess_lower - cd;
        let adjusted_upper = r.excess_upper - cd;
        rows.push(AdjustedRow {
            week: r.week,
            group: r.group.clone(),
            covid_deaths: cd,
            adjusted_median,
            adjusted_lower,
            adjusted_upper,
            significant_high: adjusted_lower > 0.0,
            significant_low: adjusted_upper < 0.0,
        });
    }
    if !missing.is_empty() {
        warnings.push(format!(
            "no COVID data for {} week(s) ({}); treated as zero",
            missing.len(),
            missing.join(", ")
        ));
    }
    Ok(AdjustedReport { rows, warnings })
}

/// Writes the flat report CSV; adjusted columns stay empty when no
/// adjustment was computed.
pub fn write_report_csv<W: io::Write>(
    report: &ExcessReport,
    adjusted: Option<&AdjustedReport>,
    mut w: W,
) -> Result<()> {
    let io_err = |e: io::Error| Error::Data(format!("report write: {e}"));
    writeln!(
        w,
        "week,group,observed,expected_median,lo75,hi75,lo95,hi95,excess_median,covid_deaths,adjusted_median,flag"
    )
    .map_err(io_err)?;
    if let Some(adj) = adjusted {
        if adj.rows.len() != report.rows.len() {
            return Err(Error::Data(format!(
                "adjusted report has {} rows, excess report {}",
                adj.rows.len(),
                report.rows.len()
            )));
        }
    }
    for (i, r) in report.rows.iter().enumerate() {
        let (covid, adj_median) = match adjusted {
            Some(adj) => {
                let a = &adj.rows[i];
                (format!("{}", a.covid_deaths), format!("{}", a.adjusted_median))
            }
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{}-{:02},{},{},{},{},{},{},{},{},{},{},{}",
            r.week.year,
            r.week.week,
            r.group,
            r.observed_deaths,
            r.expected_median,
            r.lo75,
            r.hi75,
            r.lo95,
            r.hi95,
            r.excess_median,
            covid,
            adj_median,
            r.flag_str()
        )
        .map_err(io_err)?;
    }
    Ok(())
}
