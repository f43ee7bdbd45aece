//! Weekly mortality-rate panels: CSV ingest/export, age-band aggregation,
//! daily cause-specific death counts and their weekly totals.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::io::Write as _;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::series::{AgeGroup, SeriesKey, Sex};
use crate::week::{iso_week_folded, WeekCalendar, WeekIndex};

/// Country codes of the 19-country reference configuration in canonical
/// (code-lexicographic) order; 19 countries x 2 sexes x 4 ages = 152 series.
pub const REFERENCE_COUNTRIES: [&str; 19] = [
    "AUT", "BEL", "CHE", "ESP", "EST", "FIN", "FRA", "GBR_SCO", "HUN", "ISR",
    "LTU", "LVA", "NLD", "NOR", "POL", "PRT", "SVK", "SVN", "SWE",
];

/// Complete rectangular panel of weekly mortality rates.
///
/// Weeks are consecutive, series are in canonical order, and every cell is
/// present with a rate strictly inside (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RatePanel {
    pub weeks: Vec<WeekIndex>,
    pub series: Vec<SeriesKey>,
    /// n_weeks x n_series.
    pub rates: Array2<f64>,
    /// n_weeks x n_series person-time exposures, >= 0.
    pub exposures: Array2<f64>,
    /// Observed death counts when supplied; otherwise derived on demand.
    pub deaths: Option<Array2<f64>>,
}

impl RatePanel {
    pub fn new(
        weeks: Vec<WeekIndex>,
        series: Vec<SeriesKey>,
        rates: Array2<f64>,
        exposures: Array2<f64>,
        deaths: Option<Array2<f64>>,
    ) -> Result<Self> {
        if weeks.is_empty() || series.is_empty() {
            return Err(Error::Data("panel must have at least one week and one series".into()));
        }
        for pair in weeks.windows(2) {
            if pair[1].offset != pair[0].offset + 1 {
                return Err(Error::Data(format!(
                    "panel weeks not consecutive: year {} week {} followed by year {} week {}",
                    pair[0].year, pair[0].week, pair[1].year, pair[1].week
                )));
            }
        }
        for pair in series.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Data(format!(
                    "series not in canonical order: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        let dim = (weeks.len(), series.len());
        for (name, m) in [("rates", &rates), ("exposures", &exposures)] {
            if m.dim() != dim {
                return Err(Error::Data(format!(
                    "{name} shape {:?} does not match {} weeks x {} series",
                    m.shape(),
                    dim.0,
                    dim.1
                )));
            }
        }
        if let Some(d) = &deaths {
            if d.dim() != dim {
                return Err(Error::Data(format!(
                    "deaths shape {:?} does not match {} weeks x {} series",
                    d.shape(),
                    dim.0,
                    dim.1
                )));
            }
        }
        let panel = RatePanel { weeks, series, rates, exposures, deaths };
        panel.validate_cells()?;
        Ok(panel)
    }

    fn validate_cells(&self) -> Result<()> {
        for ((i, j), &r) in self.rates.indexed_iter() {
            if !(r > 0.0 && r < 1.0) {
                return Err(self.cell_error(i, j, format!("rate {r} not in (0,1)")));
            }
            let e = self.exposures[(i, j)];
            if !(e.is_finite() && e >= 0.0) {
                return Err(self.cell_error(i, j, format!("exposure {e} invalid")));
            }
            if let Some(deaths) = &self.deaths {
                let d = deaths[(i, j)];
                if !(d.is_finite() && d >= 0.0) {
                    return Err(self.cell_error(i, j, format!("death count {d} invalid")));
                }
                let implied = r * e;
                if (d - implied).abs() / d.max(1.0) > 0.05 {
                    return Err(self.cell_error(
                        i,
                        j,
                        format!("deaths {d} inconsistent with rate x exposure = {implied:.3}"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn cell_error(&self, i: usize, j: usize, msg: String) -> Error {
        Error::Data(format!(
            "{msg} at (year {} week {}, {})",
            self.weeks[i].year, self.weeks[i].week, self.series[j]
        ))
    }

    pub fn n_weeks(&self) -> usize {
        self.rates.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.rates.ncols()
    }

    /// Observed deaths when present, otherwise rate x exposure.
    pub fn death_counts(&self) -> Array2<f64> {
        match &self.deaths {
            Some(d) => d.clone(),
            None => &self.rates * &self.exposures,
        }
    }

    pub fn series_index(&self, key: &SeriesKey) -> Option<usize> {
        self.series.binary_search(key).ok()
    }

    /// Distinct country codes in canonical order.
    pub fn countries(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.series {
            if out.last().map(|c| c != &s.country).unwrap_or(true) {
                out.push(s.country.clone());
            }
        }
        out
    }

    /// Sub-panel covering week offsets `start..=end` (inclusive).
    pub fn slice_weeks(&self, start: i64, end: i64) -> Result<RatePanel> {
        let first = self.weeks[0].offset;
        let last = self.weeks[self.n_weeks() - 1].offset;
        if start > end || start < first || end > last {
            return Err(Error::Data(format!(
                "requested week offsets {start}..={end} outside panel range {first}..={last}"
            )));
        }
        let a = (start - first) as usize;
        let b = (end - first) as usize + 1;
        RatePanel::new(
            self.weeks[a..b].to_vec(),
            self.series.clone(),
            self.rates.slice(ndarray::s![a..b, ..]).to_owned(),
            self.exposures.slice(ndarray::s![a..b, ..]).to_owned(),
            self.deaths.as_ref().map(|d| d.slice(ndarray::s![a..b, ..]).to_owned()),
        )
    }

    /// Writes the fixed CSV schema. Rates are printed with 12 significant
    /// digits; exposures and deaths with shortest round-trip text.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut w = io::BufWriter::new(w);
        let res: io::Result<()> = (|| {
            if self.deaths.is_some() {
                writeln!(w, "year,week,country,sex,age_group,rate,exposure,deaths")?;
            } else {
                writeln!(w, "year,week,country,sex,age_group,rate,exposure")?;
            }
            for (i, week) in self.weeks.iter().enumerate() {
                for (j, key) in self.series.iter().enumerate() {
                    write!(
                        w,
                        "{},{},{},{},{},{:.11e},{}",
                        week.year,
                        week.week,
                        key.country,
                        key.sex.code(),
                        key.age_group.code(),
                        self.rates[(i, j)],
                        self.exposures[(i, j)]
                    )?;
                    if let Some(d) = &self.deaths {
                        write!(w, ",{}", d[(i, j)])?;
                    }
                    writeln!(w)?;
                }
            }
            w.flush()
        })();
        res.map_err(|e| Error::Data(format!("csv write failed: {e}")))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Panel ingest options.
#[derive(Debug, Clone, Default)]
pub struct PanelConfig {
    pub calendar: WeekCalendar,
    /// Minimum panel length after trimming; 0 disables the check. Fitting
    /// paths pass 104 (two full years).
    pub min_weeks_per_series: usize,
}

/// Parse result together with row-drop accounting.
#[derive(Debug)]
pub struct ParsedPanel {
    pub panel: RatePanel,
    /// Week-53 rows excluded by the 52-week grid rule.
    pub dropped_week53: usize,
    /// Rows outside the common week range of all series (ragged edges).
    pub trimmed_edges: usize,
}

struct Grid<T> {
    weeks: Vec<WeekIndex>,
    series: Vec<SeriesKey>,
    /// cells[j][i] for series j, week position i.
    cells: Vec<Vec<T>>,
    trimmed: usize,
}

/// Trims every series to the common offset range and enforces a complete
/// rectangular grid on it.
fn assemble_grid<T: Copy>(
    map: BTreeMap<SeriesKey, BTreeMap<i64, T>>,
    calendar: &WeekCalendar,
    min_weeks: usize,
) -> Result<Grid<T>> {
    if map.is_empty() {
        return Err(Error::Data("no usable data rows".into()));
    }
    let mut start = i64::MIN;
    let mut end = i64::MAX;
    for cells in map.values() {
        // per-series BTreeMaps are non-empty by construction
        start = start.max(*cells.keys().next().unwrap());
        end = end.min(*cells.keys().next_back().unwrap());
    }
    if start > end {
        return Err(Error::Data("series have no common week range".into()));
    }
    let n_weeks = (end - start + 1) as usize;
    if n_weeks < min_weeks {
        return Err(Error::Data(format!(
            "panel has {n_weeks} weeks after trimming; at least {min_weeks} required"
        )));
    }
    let weeks: Vec<WeekIndex> = (start..=end).map(|w| calendar.from_offset(w)).collect();
    let mut series = Vec::with_capacity(map.len());
    let mut cells = Vec::with_capacity(map.len());
    let mut trimmed = 0usize;
    for (key, col) in map {
        let mut vals = Vec::with_capacity(n_weeks);
        for w in start..=end {
            match col.get(&w) {
                Some(v) => vals.push(*v),
                None => {
                    let wk = calendar.from_offset(w);
                    return Err(Error::Data(format!(
                        "missing cell for {key} at year {} week {}",
                        wk.year, wk.week
                    )));
                }
            }
        }
        trimmed += col.len() - n_weeks;
        series.push(key);
        cells.push(vals);
    }
    Ok(Grid { weeks, series, cells, trimmed })
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn require_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column_index(headers, name)
        .ok_or_else(|| Error::Data(format!("missing required CSV column {name:?}")))
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<&'r str> {
    record
        .get(idx)
        .ok_or_else(|| Error::Data(format!("row {row}: missing field {name}")))
}

fn parse_num<T: std::str::FromStr>(s: &str, name: &str, row: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {row}: cannot parse {name} from {s:?}")))
}

/// Parses the fixed panel schema `year,week,country,sex,age_group,rate,
/// exposure[,deaths]`. Week-53 rows are dropped and counted; ragged leading
/// or trailing weeks are trimmed to the range covered by every series.
pub fn parse_rate_panel<R: io::Read>(reader: R, config: &PanelConfig) -> Result<ParsedPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let c_year = require_column(&headers, "year")?;
    let c_week = require_column(&headers, "week")?;
    let c_country = require_column(&headers, "country")?;
    let c_sex = require_column(&headers, "sex")?;
    let c_age = require_column(&headers, "age_group")?;
    let c_rate = require_column(&headers, "rate")?;
    let c_exposure = require_column(&headers, "exposure")?;
    let c_deaths = column_index(&headers, "deaths");

    let mut map: BTreeMap<SeriesKey, BTreeMap<i64, (f64, f64, f64)>> = BTreeMap::new();
    let mut dropped_week53 = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2; // 1-based, after the header line
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let year: i32 = parse_num(field(&record, c_year, "year", row)?, "year", row)?;
        let week: u32 = parse_num(field(&record, c_week, "week", row)?, "week", row)?;
        if week == 53 {
            dropped_week53 += 1;
            continue;
        }
        let key = SeriesKey {
            country: field(&record, c_country, "country", row)?.trim().to_string(),
            sex: Sex::parse(field(&record, c_sex, "sex", row)?)?,
            age_group: AgeGroup::parse(field(&record, c_age, "age_group", row)?)?,
        };
        let offset = config.calendar.offset(year, week)?;
        let rate: f64 = parse_num(field(&record, c_rate, "rate", row)?, "rate", row)?;
        let exposure: f64 =
            parse_num(field(&record, c_exposure, "exposure", row)?, "exposure", row)?;
        let deaths: f64 = match c_deaths {
            Some(c) => parse_num(field(&record, c, "deaths", row)?, "deaths", row)?,
            None => f64::NAN, // column absent; never stored
        };
        if map.entry(key.clone()).or_default().insert(offset, (rate, exposure, deaths)).is_some()
        {
            return Err(Error::Data(format!(
                "duplicate row for {key} at year {year} week {week}"
            )));
        }
    }

    let grid = assemble_grid(map, &config.calendar, config.min_weeks_per_series)?;
    let (n_weeks, n_series) = (grid.weeks.len(), grid.series.len());
    let mut rates = Array2::zeros((n_weeks, n_series));
    let mut exposures = Array2::zeros((n_weeks, n_series));
    let mut deaths = c_deaths.map(|_| Array2::zeros((n_weeks, n_series)));
    for (j, col) in grid.cells.iter().enumerate() {
        for (i, &(r, e, d)) in col.iter().enumerate() {
            rates[(i, j)] = r;
            exposures[(i, j)] = e;
            if let Some(m) = deaths.as_mut() {
                m[(i, j)] = d;
            }
        }
    }
    Ok(ParsedPanel {
        panel: RatePanel::new(grid.weeks, grid.series, rates, exposures, deaths)?,
        dropped_week53,
        trimmed_edges: grid.trimmed,
    })
}

/// One raw observation for a five-band age layout, pre-aggregation.
#[derive(Debug, Clone)]
pub struct RawBandRow {
    pub year: i32,
    pub week: u32,
    pub country: String,
    pub sex: Sex,
    pub band: String,
    pub deaths: f64,
    pub exposure: f64,
}

/// Maps raw age-band labels onto the four analysis age groups.
#[derive(Debug, Clone)]
pub struct MergeSpec {
    map: Vec<(String, AgeGroup)>,
}

impl Default for MergeSpec {
    fn default() -> Self {
        MergeSpec {
            map: [
                ("<15", AgeGroup::A0to64),
                ("15-64", AgeGroup::A0to64),
                ("65-74", AgeGroup::A65to74),
                ("75-84", AgeGroup::A75to84),
                ("85+", AgeGroup::A85plus),
            ]
            .into_iter()
            .map(|(b, g)| (b.to_string(), g))
            .collect(),
        }
    }
}

impl MergeSpec {
    pub fn new(map: Vec<(String, AgeGroup)>) -> Self {
        MergeSpec { map }
    }

    pub fn group_for(&self, band: &str) -> Result<AgeGroup> {
        self.map
            .iter()
            .find(|(b, _)| b == band.trim())
            .map(|(_, g)| *g)
            .ok_or_else(|| Error::Data(format!("age band {band:?} not covered by merge spec")))
    }
}

/// Aggregates raw age bands into the four analysis groups. Merged rates are
/// ratio-of-sums: sum(deaths) / sum(exposures) over the member bands.
pub fn aggregate_age_groups(
    rows: &[RawBandRow],
    merge: &MergeSpec,
    config: &PanelConfig,
) -> Result<ParsedPanel> {
    let mut acc: BTreeMap<SeriesKey, BTreeMap<i64, (f64, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(SeriesKey, i64, String)> = HashSet::new();
    let mut dropped_week53 = 0usize;
    for r in rows {
        if r.week == 53 {
            dropped_week53 += 1;
            continue;
        }
        let group = merge.group_for(&r.band)?;
        let key = SeriesKey::new(r.country.clone(), r.sex, group);
        let offset = config.calendar.offset(r.year, r.week)?;
        if !seen.insert((key.clone(), offset, r.band.trim().to_string())) {
            return Err(Error::Data(format!(
                "duplicate band row for {} band {} at year {} week {}",
                key, r.band, r.year, r.week
            )));
        }
        if !(r.deaths.is_finite() && r.deaths >= 0.0) {
            return Err(Error::Data(format!(
                "invalid death count {} for {} at year {} week {}",
                r.deaths, key, r.year, r.week
            )));
        }
        if !(r.exposure.is_finite() && r.exposure >= 0.0) {
            return Err(Error::Data(format!(
                "invalid exposure {} for {} at year {} week {}",
                r.exposure, key, r.year, r.week
            )));
        }
        let cell = acc.entry(key).or_default().entry(offset).or_insert((0.0, 0.0));
        cell.0 += r.deaths;
        cell.1 += r.exposure;
    }

    let grid = assemble_grid(acc, &config.calendar, config.min_weeks_per_series)?;
    let (n_weeks, n_series) = (grid.weeks.len(), grid.series.len());
    let mut rates = Array2::zeros((n_weeks, n_series));
    let mut exposures = Array2::zeros((n_weeks, n_series));
    let mut deaths = Array2::zeros((n_weeks, n_series));
    for (j, col) in grid.cells.iter().enumerate() {
        for (i, &(d, e)) in col.iter().enumerate() {
            if e <= 0.0 {
                let wk = &grid.weeks[i];
                return Err(Error::Data(format!(
                    "zero merged exposure for {} at year {} week {}",
                    grid.series[j], wk.year, wk.week
                )));
            }
            rates[(i, j)] = d / e;
            exposures[(i, j)] = e;
            deaths[(i, j)] = d;
        }
    }
    Ok(ParsedPanel {
        panel: RatePanel::new(grid.weeks, grid.series, rates, exposures, Some(deaths))?,
        dropped_week53,
        trimmed_edges: grid.trimmed,
    })
}

/// Parses the five-band raw CSV variant
/// `year,week,country,sex,age_group,deaths,exposure` into band rows.
pub fn parse_raw_bands<R: io::Read>(reader: R) -> Result<Vec<RawBandRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let c_year = require_column(&headers, "year")?;
    let c_week = require_column(&headers, "week")?;
    let c_country = require_column(&headers, "country")?;
    let c_sex = require_column(&headers, "sex")?;
    let c_age = require_column(&headers, "age_group")?;
    let c_deaths = require_column(&headers, "deaths")?;
    let c_exposure = require_column(&headers, "exposure")?;
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        out.push(RawBandRow {
            year: parse_num(field(&record, c_year, "year", row)?, "year", row)?,
            week: parse_num(field(&record, c_week, "week", row)?, "week", row)?,
            country: field(&record, c_country, "country", row)?.trim().to_string(),
            sex: Sex::parse(field(&record, c_sex, "sex", row)?)?,
            band: field(&record, c_age, "age_group", row)?.trim().to_string(),
            deaths: parse_num(field(&record, c_deaths, "deaths", row)?, "deaths", row)?,
            exposure: parse_num(field(&record, c_exposure, "exposure", row)?, "exposure", row)?,
        });
    }
    Ok(out)
}

/// Contiguous daily death counts per country, gaps zero-filled.
#[derive(Debug, Clone)]
pub struct DailyDeaths {
    pub countries: BTreeMap<String, CountryDaily>,
}

#[derive(Debug, Clone)]
pub struct CountryDaily {
    pub start: NaiveDate,
    pub deaths: Vec<f64>,
}

impl CountryDaily {
    pub fn end(&self) -> NaiveDate {
        self.start + chrono::Days::new(self.deaths.len() as u64 - 1)
    }

    pub fn total(&self) -> f64 {
        self.deaths.iter().sum()
    }
}

/// Parses the daily deaths CSV `date,country,deaths` (ISO dates) and
/// zero-fills per-country gaps.
pub fn parse_covid_daily<R: io::Read>(reader: R) -> Result<DailyDeaths> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let c_date = require_column(&headers, "date")?;
    let c_country = require_column(&headers, "country")?;
    let c_deaths = require_column(&headers, "deaths")?;
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let date_str = field(&record, c_date, "date", row)?.trim();
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|_| Error::Data(format!("row {row}: cannot parse date {date_str:?}")))?;
        let country = field(&record, c_country, "country", row)?.trim().to_string();
        let deaths: f64 = parse_num(field(&record, c_deaths, "deaths", row)?, "deaths", row)?;
        if !(deaths.is_finite() && deaths >= 0.0) {
            return Err(Error::Data(format!(
                "row {row}: negative or invalid death count {deaths}"
            )));
        }
        if raw.entry(country.clone()).or_default().insert(date, deaths).is_some() {
            return Err(Error::Data(format!(
                "row {row}: duplicate record for {country} on {date}"
            )));
        }
    }
    if raw.is_empty() {
        return Err(Error::Data("no daily death records".into()));
    }
    let mut countries = BTreeMap::new();
    for (country, days) in raw {
        let start = *days.keys().next().unwrap();
        let end = *days.keys().next_back().unwrap();
        let n = (end - start).num_days() as usize + 1;
        let mut deaths = vec![0.0; n];
        for (date, d) in days {
            deaths[(date - start).num_days() as usize] = d;
        }
        countries.insert(country, CountryDaily { start, deaths });
    }
    Ok(DailyDeaths { countries })
}

/// Weekly death totals per country.
#[derive(Debug, Clone)]
pub struct CovidWeekly {
    pub weeks: Vec<WeekIndex>,
    pub countries: Vec<String>,
    /// n_weeks x n_countries.
    pub deaths: Array2<f64>,
}

/// Sums daily deaths into the requested weeks on the same 52-week calendar
/// the rate panel uses; ISO week 53 folds into week 52.
pub fn weekly_covid_deaths(daily: &DailyDeaths, weeks: &[WeekIndex]) -> Result<CovidWeekly> {
    if weeks.is_empty() {
        return Err(Error::Data("no weeks requested".into()));
    }
    let countries: Vec<String> = daily.countries.keys().cloned().collect();
    let mut deaths = Array2::zeros((weeks.len(), countries.len()));
    for (j, country) in countries.iter().enumerate() {
        let series = &daily.countries[country];
        let mut sums: BTreeMap<(i32, u32), (f64, u32)> = BTreeMap::new();
        for (k, &d) in series.deaths.iter().enumerate() {
            let date = series.start + chrono::Days::new(k as u64);
            let cell = sums.entry(iso_week_folded(date)).or_insert((0.0, 0));
            cell.0 += d;
            cell.1 += 1;
        }
        for (i, week) in weeks.iter().enumerate() {
            match sums.get(&(week.year, week.week)) {
                Some(&(sum, _days)) => deaths[(i, j)] = sum,
                None => {
                    return Err(Error::Data(format!(
                        "no daily coverage for {country} in year {} week {}",
                        week.year, week.week
                    )))
                }
            }
        }
    }
    Ok(CovidWeekly { weeks: weeks.to_vec(), countries, deaths })
}

/// Options for the external weekly-mortality adapter.
#[derive(Debug, Clone, Default)]
pub struct StmfOptions {
    /// Divide the file's annualized rates by 52.1775 to get per-week rates.
    /// Off by default: the file's own rate scale is kept and exposures are
    /// derived consistently, which leaves logit-panel covariance structure
    /// essentially unchanged either way.
    pub weekly_rates: bool,
}

pub const WEEKS_PER_YEAR_FRACTIONAL: f64 = 52.1775;

/// Adapts the public weekly-mortality file layout
/// (`CountryCode,Year,Week,Sex,D0_14,...,R85p,...`) to raw band rows.
/// Sex code `b` (both) is skipped. Exposures are derived as deaths/rate;
/// zero-death cells borrow the nearest week's exposure for the same band.
pub fn parse_stmf<R: io::Read>(reader: R, opts: &StmfOptions) -> Result<Vec<RawBandRow>> {
    let mut text = String::new();
    let mut reader = reader;
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Data(format!("cannot read input: {e}")))?;
    // Files ship with preamble lines before the header row.
    let start = text
        .lines()
        .position(|l| l.trim_start().starts_with("CountryCode"))
        .ok_or_else(|| Error::Data("no CountryCode header line found".into()))?;
    let body: String = text.lines().skip(start).collect::<Vec<_>>().join("\n");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let c_country = require_column(&headers, "CountryCode")?;
    let c_year = require_column(&headers, "Year")?;
    let c_week = require_column(&headers, "Week")?;
    let c_sex = require_column(&headers, "Sex")?;
    const BANDS: [(&str, &str, &str); 5] = [
        ("<15", "D0_14", "R0_14"),
        ("15-64", "D15_64", "R15_64"),
        ("65-74", "D65_74", "R65_74"),
        ("75-84", "D75_84", "R75_84"),
        ("85+", "D85p", "R85p"),
    ];
    let mut cols = Vec::new();
    for (band, d_name, r_name) in BANDS {
        cols.push((band, require_column(&headers, d_name)?, require_column(&headers, r_name)?));
    }

    // (country, sex, band) -> rows with exposure still unresolved for
    // zero-death cells.
    type PendingKey = (String, Sex, &'static str);
    type PendingRow = (i32, u32, f64, Option<f64>);
    let mut pending: BTreeMap<PendingKey, Vec<PendingRow>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let sex = match field(&record, c_sex, "Sex", row)?.trim() {
            "m" | "M" => Sex::Male,
            "f" | "F" => Sex::Female,
            "b" | "B" => continue,
            other => return Err(Error::Data(format!("row {row}: unknown sex code {other:?}"))),
        };
        let country = field(&record, c_country, "CountryCode", row)?.trim().to_string();
        let year: i32 = parse_num(field(&record, c_year, "Year", row)?, "Year", row)?;
        let week: u32 = parse_num(field(&record, c_week, "Week", row)?, "Week", row)?;
        for &(band, c_d, c_r) in &cols {
            let d: f64 = parse_num(field(&record, c_d, "deaths", row)?, "deaths", row)?;
            let mut r: f64 = parse_num(field(&record, c_r, "rate", row)?, "rate", row)?;
            if opts.weekly_rates {
                r /= WEEKS_PER_YEAR_FRACTIONAL;
            }
            let exposure = if d > 0.0 && r > 0.0 {
                Some(d / r)
            } else if d == 0.0 {
                None
            } else {
                return Err(Error::Data(format!(
                    "row {row}: deaths {d} with rate {r} cannot be reconciled"
                )));
            };
            pending
                .entry((country.clone(), sex, band))
                .or_default()
                .push((year, week, d, exposure));
        }
    }

    let mut out = Vec::new();
    for ((country, sex, band), mut rows) in pending {
        rows.sort_by_key(|&(y, w, _, _)| (y, w));
        let known: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, &(_, _, _, e))| e.map(|e| (i, e)))
            .collect();
        if known.is_empty() {
            return Err(Error::Data(format!(
                "no week with positive deaths for {country} {} band {band}; cannot derive exposure",
                sex.code()
            )));
        }
        for (i, (year, week, d, e)) in rows.iter().enumerate() {
            let exposure = e.unwrap_or_else(|| {
                // nearest week with known exposure; population moves slowly
                known
                    .iter()
                    .min_by_key(|(k, _)| (*k as i64 - i as i64).abs())
                    .unwrap()
                    .1
            });
            out.push(RawBandRow {
                year: *year,
                week: *week,
                country: country.clone(),
                sex,
                band: band.to_string(),
                deaths: *d,
                exposure,
            });
        }
    }
    Ok(out)
}
