//! Command-line front end. Four subcommands cover the pipeline: `synth`
//! generates a panel with known truth, `fit` estimates the decomposition
//! plus trend and residual models, `forecast` simulates the ensemble and
//! writes quantile summaries, and `excess` compares observed deaths
//! against a forecast. Exit codes are stable for scripting: 0 success,
//! 1 usage, 2 data/io, 3 numerical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excess::{
    covid_adjusted_report, excess_report, group_all, groups_by_country, groups_by_sex_age,
    pc1_tracking, write_report_csv, ExcessReport, GroupSpec,
};
use crate::model_file::{
    fit_model_file, load_model, save_model, sha256_hex, ModelFile, ModelSelection,
};
use crate::panel::{
    parse_covid_daily, parse_rate_panel, weekly_covid_deaths, DailyDeaths, PanelConfig,
};
use crate::simulate::{
    group_death_quantiles, horizon_weeks, prediction_intervals, simulate_ensemble,
    theoretical_pc1_interval, write_tensor_binary, ForecastEnsemble,
};
use crate::svg::{band_chart, default_bands, Band, BandChart};
use crate::synth::{generate_synthetic_panel, SynthConfig};
use crate::transform::logit_panel;
use crate::trend::{FitConfig, ModelComparison, TrendModelId};
use crate::week::{parse_year_week, WeekCalendar, WeekIndex};

#[derive(Parser)]
#[command(
    name = "mortpca",
    version,
    about = "Stochastic weekly mortality forecasting and excess-mortality reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit decomposition, trend, and residual models from a rate panel
    Fit(FitArgs),
    /// Simulate forecast trajectories from a fitted model
    Forecast(ForecastArgs),
    /// Compare observed deaths against a forecast and report excess
    Excess(ExcessArgs),
    /// Generate a synthetic rate panel with known ground truth
    Synth(SynthArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Rate panel CSV (year,week,country,sex,age_group,rate,exposure[,deaths])
    #[arg(long)]
    input: PathBuf,
    /// First baseline week as year-week (default: start of data)
    #[arg(long)]
    baseline_start: Option<String>,
    /// Last baseline week as year-week (default: end of data)
    #[arg(long)]
    baseline_end: Option<String>,
    /// Week-0 anchor of the model clock, as year-week
    #[arg(long, default_value = "2000-31")]
    anchor: String,
    /// Trend model to keep: criterion choice or a forced pick
    #[arg(long, value_enum, default_value_t = ModelChoice::Auto)]
    model: ModelChoice,
    /// Criterion deciding the trend model under --model auto
    #[arg(long, value_enum, default_value_t = Criterion::Bic)]
    criterion: Criterion,
    /// Coarser trend search, for replicate studies
    #[arg(long)]
    fast: bool,
    /// Output model file (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Auto,
    #[value(name = "m1.1")]
    M11,
    #[value(name = "m1.2")]
    M12,
    #[value(name = "m1.3")]
    M13,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Criterion {
    Aic,
    Bic,
}

#[derive(Args)]
struct ForecastArgs {
    /// Fitted model file from `fit`
    #[arg(long)]
    model: PathBuf,
    /// Forecast horizon in weeks
    #[arg(long)]
    weeks: usize,
    /// Number of Monte Carlo trajectories
    #[arg(long, default_value_t = 10_000)]
    sims: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Horizon exposures CSV (year,week,series,exposure); default carries
    /// the last baseline week forward
    #[arg(long)]
    exposures: Option<PathBuf>,
    /// Comma-separated quantile levels for the summaries
    #[arg(long, default_value = "0.025,0.125,0.5,0.875,0.975")]
    levels: String,
    /// Worker threads (default: MORTPCA_THREADS, else all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the death-count trajectory tensor (deaths.bin)
    #[arg(long)]
    save_trajectories: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExcessArgs {
    /// Fitted model file; must be the one the forecast was made from
    #[arg(long)]
    model: PathBuf,
    /// Forecast output directory (reads manifest.json and exposures.csv)
    #[arg(long)]
    forecast: PathBuf,
    /// Observed rate panel CSV covering forecast weeks
    #[arg(long)]
    observed: PathBuf,
    /// Daily COVID-19 deaths CSV (date,country,deaths); enables adjusted
    /// columns
    #[arg(long)]
    covid: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GroupBy::Country)]
    group_by: GroupBy,
    /// Significance level of the excess flags
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Worker threads for the ensemble re-simulation
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    Country,
    SexAge,
    All,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator configuration JSON (default: built-in reference config)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output panel CSV
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON path (default: <out>.truth.json)
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Parses arguments, runs the chosen subcommand, and maps errors to the
/// exit-code contract. `--help`/`--version` exit 0.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Forecast(a) => run_forecast(a),
        Command::Excess(a) => run_excess(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Prefixes string errors with the pipeline stage that raised them; i/o
/// errors already name the offending path.
fn at_stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Usage(m) => Error::Usage(format!("{name}: {m}")),
        Error::Data(m) => Error::Data(format!("{name}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{name}: {m}")),
        io @ Error::Io { .. } => io,
    })
}

fn week_tag(w: &WeekIndex) -> String {
    format!("{}-{:02}", w.year, w.week)
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let (anchor_year, anchor_week) = parse_year_week(&a.anchor)?;
    let calendar = WeekCalendar::new(anchor_year, anchor_week)?;
    let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let digest = sha256_hex(&bytes);
    let config = PanelConfig { calendar, min_weeks_per_series: 104 };
    let parsed = at_stage("parse", parse_rate_panel(bytes.as_slice(), &config))?;
    if parsed.dropped_week53 > 0 || parsed.trimmed_edges > 0 {
        eprintln!(
            "note: dropped {} week-53 rows, trimmed {} ragged-edge rows",
            parsed.dropped_week53, parsed.trimmed_edges
        );
    }
    let panel = parsed.panel;
    println!(
        "panel: {} weeks x {} series ({} countries)",
        panel.n_weeks(),
        panel.n_series(),
        panel.countries().len()
    );

    let resolve = |flag: &Option<String>, fallback: i64| -> Result<i64> {
        match flag {
            Some(s) => {
                let (y, w) = parse_year_week(s)?;
                calendar.offset(y, w)
            }
            None => Ok(fallback),
        }
    };
    let start = resolve(&a.baseline_start, panel.weeks[0].offset)?;
    let end = resolve(&a.baseline_end, panel.weeks[panel.n_weeks() - 1].offset)?;
    let baseline = at_stage("baseline", panel.slice_weeks(start, end))?;
    println!(
        "baseline: {} .. {} ({} weeks)",
        week_tag(&baseline.weeks[0]),
        week_tag(&baseline.weeks[baseline.n_weeks() - 1]),
        baseline.n_weeks()
    );

    let selection = match a.model {
        ModelChoice::Auto => match a.criterion {
            Criterion::Aic => ModelSelection::Aic,
            Criterion::Bic => ModelSelection::Bic,
        },
        ModelChoice::M11 => ModelSelection::Forced(TrendModelId::M1_1),
        ModelChoice::M12 => ModelSelection::Forced(TrendModelId::M1_2),
        ModelChoice::M13 => ModelSelection::Forced(TrendModelId::M1_3),
    };
    let fit_config = if a.fast { FitConfig::fast() } else { FitConfig::default() };
    let result = at_stage("fit", fit_model_file(&baseline, &calendar, selection, &fit_config))?;
    let mut model = result.model;
    model.provenance.input_path = a.input.display().to_string();
    model.provenance.input_sha256 = digest;

    println!(
        "component 1 explains {:.1}% of variance",
        model.pca.explained_variance_shares[0] * 100.0
    );
    print_comparison(&result.comparison, model.trend.model_id, &model.selection);
    if model.trend.boundary_warning {
        eprintln!("warning: trend (t0, beta) search ended on its grid boundary");
    }
    if model.pc1_residual.boundary_warning {
        eprintln!("warning: SARIMA search ended on its parameter box boundary");
    }
    println!(
        "pc1 residual SARIMA: seasonal_ar {:.4}, ma {:.4}, sd {:.4}",
        model.pc1_residual.seasonal_ar.first().copied().unwrap_or(0.0),
        model.pc1_residual.ma.first().copied().unwrap_or(0.0),
        model.pc1_residual.innovation_sd
    );
    at_stage("save", save_model(&a.out, &model))?;
    println!("model written to {}", a.out.display());
    Ok(())
}

fn print_comparison(comparison: &ModelComparison, selected: TrendModelId, selection: &str) {
    println!(
        "{:<6} {:>9} {:>7} {:>8} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8}",
        "model", "intercept", "cos", "logistic", "spring", "summer", "autumn", "R2", "AIC", "BIC"
    );
    for m in &comparison.models {
        let opt = |v: f64, used: bool| if used { format!("{v:.2}") } else { "-".to_string() };
        let has_logistic = m.model_id != TrendModelId::M1_1;
        let has_seasons = m.model_id == TrendModelId::M1_3;
        let marker = if m.model_id == selected {
            format!("  <- selected ({selection})")
        } else {
            String::new()
        };
        println!(
            "{:<6} {:>9.2} {:>7.2} {:>8} {:>7} {:>7} {:>7} {:>8.4} {:>8.0} {:>8.0}{}",
            m.model_id.label(),
            m.intercept,
            m.cosine_amp,
            opt(m.logistic_scale, has_logistic),
            opt(m.spring, has_seasons),
            opt(m.summer, has_seasons),
            opt(m.autumn, has_seasons),
            m.r_squared,
            m.aic,
            m.bic,
            marker
        );
    }
}

/// Everything `excess` needs to re-create the ensemble deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastManifest {
    pub model_path: String,
    pub model_sha256: String,
    pub horizon: usize,
    pub n_sims: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub exposures_csv: String,
    pub first_week: String,
    pub trajectories_bin: Option<String>,
}

fn read_manifest(path: &Path) -> Result<ForecastManifest> {
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    serde_json::from_reader(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let v: f64 = part
            .parse()
            .map_err(|_| Error::Usage(format!("quantile level {part:?} is not a number")))?;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Usage(format!("quantile level {v} outside (0,1)")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Usage("at least one quantile level is required".into()));
    }
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("quantile levels must be strictly increasing".into()));
    }
    Ok(out)
}

/// Thread-count resolution: the flag wins, then MORTPCA_THREADS, then
/// rayon's default (all cores).
fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MORTPCA_THREADS") {
            Ok(s) => Some(s.trim().parse().map_err(|_| {
                Error::Usage(format!("MORTPCA_THREADS value {s:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::Usage("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Data(format!("cannot build a {n}-thread pool: {e}")))?
            .install(f),
    }
}

fn run_forecast(a: &ForecastArgs) -> Result<()> {
    if a.weeks == 0 {
        return Err(Error::Usage("--weeks must be at least 1".into()));
    }
    if a.sims == 0 {
        return Err(Error::Usage("--sims must be at least 1".into()));
    }
    let levels = parse_levels(&a.levels)?;
    let model_bytes = fs::read(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model = at_stage("model", load_model(&a.model))?;
    let calendar = WeekCalendar::new(model.anchor_year, model.anchor_week)?;
    let weeks = horizon_weeks(&model.trend, a.weeks)?;
    let n_series = model.series.len();
    let exposures = match &a.exposures {
        Some(p) => at_stage("exposures", read_exposures_csv(p, &weeks, &model, &calendar))?,
        None => Array2::from_shape_fn((a.weeks, n_series), |(_, j)| model.last_exposures[j]),
    };

    let threads = thread_count(a.threads)?;
    println!(
        "simulating {} trajectories x {} weeks x {} series (seed {})",
        a.sims, a.weeks, n_series, a.seed
    );
    let ensemble = at_stage(
        "simulate",
        with_threads(threads, || {
            simulate_ensemble(
                &model.pca,
                &model.trend,
                &model.pc1_residual,
                &model.other_walks,
                &exposures,
                a.weeks,
                a.sims,
                a.seed,
            )
        }),
    )?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_exposures_csv(&a.out.join("exposures.csv"), &weeks, &model, &exposures)?;

    let summary = prediction_intervals(&ensemble, &levels)?;
    write_series_quantiles(&a.out.join("quantiles_series.csv"), &model, &ensemble, &summary)?;

    let mut groups = group_all(&model.series);
    groups.extend(groups_by_country(&model.series));
    write_group_quantiles(&a.out.join("quantiles_groups.csv"), &ensemble, &groups, &levels)?;

    let band = theoretical_pc1_interval(&model.trend, &model.pc1_residual, a.weeks, 0.95)?;
    write_pc1_band(&a.out.join("pc1_band.csv"), &band.weeks, &band.lower, &band.median, &band.upper)?;

    let trajectories_bin = if a.save_trajectories {
        let bin = a.out.join("deaths.bin");
        write_tensor_binary(&bin, &ensemble.death_trajectories, ["sim", "week", "series"])?;
        Some("deaths.bin".to_string())
    } else {
        None
    };

    let manifest = ForecastManifest {
        model_path: a.model.display().to_string(),
        model_sha256: sha256_hex(&model_bytes),
        horizon: a.weeks,
        n_sims: a.sims,
        seed: a.seed,
        levels: levels.clone(),
        exposures_csv: "exposures.csv".to_string(),
        first_week: week_tag(&weeks[0]),
        trajectories_bin,
    };
    write_json_pretty(&a.out.join("manifest.json"), &manifest)?;

    print_aggregate_table(&ensemble, &levels)?;
    println!("forecast written to {}", a.out.display());
    Ok(())
}

fn read_exposures_csv(
    path: &Path,
    weeks: &[WeekIndex],
    model: &ModelFile,
    calendar: &WeekCalendar,
) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file));
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name}", path.display())))
    };
    let (cy, cw, cs, ce) = (col("year")?, col("week")?, col("series")?, col("exposure")?);
    let series_pos: BTreeMap<String, usize> =
        model.series.iter().enumerate().map(|(j, k)| (k.label(), j)).collect();
    let week_pos: BTreeMap<i64, usize> =
        weeks.iter().enumerate().map(|(t, w)| (w.offset, t)).collect();
    let mut out = Array2::from_elem((weeks.len(), model.series.len()), f64::NAN);
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 2;
        let record =
            record.map_err(|e| Error::Data(format!("{} row {row}: {e}", path.display())))?;
        let get = |c: usize, name: &str| {
            record
                .get(c)
                .map(str::trim)
                .ok_or_else(|| Error::Data(format!("{} row {row}: missing {name}", path.display())))
        };
        let year: i32 = get(cy, "year")?
            .parse()
            .map_err(|_| Error::Data(format!("{} row {row}: bad year", path.display())))?;
        let week: u32 = get(cw, "week")?
            .parse()
            .map_err(|_| Error::Data(format!("{} row {row}: bad week", path.display())))?;
        // rows outside the horizon are allowed and skipped
        let Some(&t) = week_pos.get(&calendar.offset(year, week)?) else {
            continue;
        };
        let label = get(cs, "series")?;
        let j = *series_pos.get(label).ok_or_else(|| {
            Error::Data(format!("{} row {row}: unknown series {label:?}", path.display()))
        })?;
        let e: f64 = get(ce, "exposure")?
            .parse()
            .map_err(|_| Error::Data(format!("{} row {row}: bad exposure", path.display())))?;
        if !(e.is_finite() && e >= 0.0) {
            return Err(Error::Data(format!(
                "{} row {row}: exposure {e} must be finite and non-negative",
                path.display()
            )));
        }
        if !out[(t, j)].is_nan() {
            return Err(Error::Data(format!(
                "{} row {row}: duplicate exposure for {} {label}",
                path.display(),
                week_tag(&weeks[t])
            )));
        }
        out[(t, j)] = e;
    }
    let missing = out.iter().filter(|v| v.is_nan()).count();
    if missing > 0 {
        return Err(Error::Data(format!(
            "{}: {missing} of {} horizon cells lack exposures",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

fn write_exposures_csv(
    path: &Path,
    weeks: &[WeekIndex],
    model: &ModelFile,
    exposures: &Array2<f64>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "year,week,series,exposure")?;
        for (t, wk) in weeks.iter().enumerate() {
            for (j, key) in model.series.iter().enumerate() {
                writeln!(w, "{},{},{},{}", wk.year, wk.week, key.label(), exposures[(t, j)])?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn write_series_quantiles(
    path: &Path,
    model: &ModelFile,
    ensemble: &ForecastEnsemble,
    summary: &crate::simulate::QuantileSummary,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "week,series,level,value")?;
        for (t, wk) in ensemble.horizon_weeks.iter().enumerate() {
            for (j, key) in model.series.iter().enumerate() {
                for (li, level) in summary.levels.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        week_tag(wk),
                        key.label(),
                        level,
                        summary.values[(t, j, li)]
                    )?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn write_group_quantiles(
    path: &Path,
    ensemble: &ForecastEnsemble,
    groups: &[GroupSpec],
    levels: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(w, "week,group,level,value").map_err(|e| Error::io(path, e))?;
    for g in groups {
        let q = group_death_quantiles(ensemble, &g.series_indices, levels)?;
        for (t, wk) in ensemble.horizon_weeks.iter().enumerate() {
            for (li, level) in levels.iter().enumerate() {
                writeln!(w, "{},{},{},{}", week_tag(wk), g.name, level, q[(t, li)])
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_pc1_band(
    path: &Path,
    weeks: &[WeekIndex],
    lower: &[f64],
    median: &[f64],
    upper: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "week,lower,median,upper")?;
        for (t, wk) in weeks.iter().enumerate() {
            writeln!(w, "{},{},{},{}", week_tag(wk), lower[t], median[t], upper[t])?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn print_aggregate_table(ensemble: &ForecastEnsemble, levels: &[f64]) -> Result<()> {
    let all: Vec<usize> = (0..ensemble.n_series()).collect();
    let q = group_death_quantiles(ensemble, &all, levels)?;
    println!("aggregate deaths, prediction-interval quantiles:");
    let mut header = format!("{:<8}", "week");
    for l in levels {
        header.push_str(&format!(" {:>12}", format!("q{l}")));
    }
    println!("{header}");
    for (t, wk) in ensemble.horizon_weeks.iter().enumerate() {
        let mut line = format!("{:<8}", week_tag(wk));
        for li in 0..levels.len() {
            line.push_str(&format!(" {:>12.1}", q[(t, li)]));
        }
        println!("{line}");
    }
    Ok(())
}

fn run_excess(a: &ExcessArgs) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Error::Usage(format!("--level {} outside (0,1)", a.level)));
    }
    let model_bytes = fs::read(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model = at_stage("model", load_model(&a.model))?;
    let manifest = at_stage("manifest", read_manifest(&a.forecast.join("manifest.json")))?;
    if manifest.model_sha256 != sha256_hex(&model_bytes) {
        return Err(Error::Data(format!(
            "model file {} is not the one the forecast in {} was made from",
            a.model.display(),
            a.forecast.display()
        )));
    }
    let calendar = WeekCalendar::new(model.anchor_year, model.anchor_week)?;
    let weeks = horizon_weeks(&model.trend, manifest.horizon)?;
    let exposures = at_stage(
        "exposures",
        read_exposures_csv(&a.forecast.join(&manifest.exposures_csv), &weeks, &model, &calendar),
    )?;
    let threads = thread_count(a.threads)?;
    let ensemble = at_stage(
        "simulate",
        with_threads(threads, || {
            simulate_ensemble(
                &model.pca,
                &model.trend,
                &model.pc1_residual,
                &model.other_walks,
                &exposures,
                manifest.horizon,
                manifest.n_sims,
                manifest.seed,
            )
        }),
    )?;

    let observed_file = File::open(&a.observed).map_err(|e| Error::io(&a.observed, e))?;
    let observed = at_stage(
        "observed",
        parse_rate_panel(
            BufReader::new(observed_file),
            &PanelConfig { calendar, min_weeks_per_series: 0 },
        ),
    )?
    .panel;
    if observed.series != model.series {
        return Err(Error::Data(
            "observed panel series do not match the model's series".into(),
        ));
    }

    let groups = match a.group_by {
        GroupBy::Country => groups_by_country(&model.series),
        GroupBy::SexAge => groups_by_sex_age(&model.series),
        GroupBy::All => group_all(&model.series),
    };
    let report = at_stage("report", excess_report(&observed, &ensemble, &groups, a.level))?;

    let adjusted = match &a.covid {
        Some(p) => {
            let covid_file = File::open(p).map_err(|e| Error::io(p, e))?;
            let daily = at_stage("covid", parse_covid_daily(BufReader::new(covid_file)))?;
            let covered = covid_covered_weeks(&daily, &report.weeks);
            if covered.is_empty() {
                return Err(Error::Data(format!(
                    "{}: COVID data covers none of the report weeks",
                    p.display()
                )));
            }
            let weekly = at_stage("covid", weekly_covid_deaths(&daily, &covered))?;
            let adj = at_stage(
                "covid",
                covid_adjusted_report(&report, &groups, &model.series, &weekly),
            )?;
            for warning in &adj.warnings {
                eprintln!("warning: {warning}");
            }
            Some(adj)
        }
        None => {
            eprintln!("warning: no COVID data supplied; adjusted columns left empty");
            None
        }
    };

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let report_path = a.out.join("excess_report.csv");
    let report_file = File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    write_report_csv(&report, adjusted.as_ref(), BufWriter::new(report_file))?;

    let obs_logit = logit_panel(&observed)?;
    let tracking = at_stage(
        "tracking",
        pc1_tracking(
            &model.pca,
            obs_logit.values.view(),
            &observed.weeks,
            &model.trend,
            &model.pc1_residual,
            a.level,
        ),
    )?;
    let track_path = a.out.join("pc1_tracking.csv");
    let mut tw =
        BufWriter::new(File::create(&track_path).map_err(|e| Error::io(&track_path, e))?);
    let res: std::io::Result<()> = (|| {
        writeln!(tw, "week,observed_index,median,lower,upper,below_lower")?;
        for r in &tracking {
            writeln!(
                tw,
                "{},{},{},{},{},{}",
                week_tag(&r.week),
                r.observed_index,
                r.forecast_median,
                r.lower,
                r.upper,
                r.below_lower
            )?;
        }
        tw.flush()
    })();
    res.map_err(|e| Error::io(&track_path, e))?;

    if report.weeks.len() >= 2 {
        write_group_charts(&a.out, &report)?;
        write_tracking_chart(&a.out, &tracking, a.level)?;
    } else {
        eprintln!("note: fewer than two report weeks; skipping SVG plots");
    }

    let n_high = report.rows.iter().filter(|r| r.significant_high).count();
    let n_low = report.rows.iter().filter(|r| r.significant_low).count();
    println!(
        "excess report: {} weeks x {} groups; {} significant_high, {} significant_low",
        report.weeks.len(),
        report.group_names.len(),
        n_high,
        n_low
    );
    println!("reports written to {}", a.out.display());
    Ok(())
}

/// Weeks (by year-week pair) where every country's daily series has at
/// least one day; weeks outside this set are warned about downstream and
/// treated as zero.
fn covid_covered_weeks(daily: &DailyDeaths, weeks: &[WeekIndex]) -> Vec<WeekIndex> {
    let mut common: Option<std::collections::BTreeSet<(i32, u32)>> = None;
    for series in daily.countries.values() {
        let mut set = std::collections::BTreeSet::new();
        for k in 0..series.deaths.len() {
            let date = series.start + chrono::Days::new(k as u64);
            set.insert(crate::week::iso_week_folded(date));
        }
        common = Some(match common {
            None => set,
            Some(prev) => prev.intersection(&set).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    weeks.iter().filter(|w| common.contains(&(w.year, w.week))).copied().collect()
}

fn write_group_charts(out: &Path, report: &ExcessReport) -> Result<()> {
    let x_labels: Vec<String> = report.weeks.iter().map(week_tag).collect();
    for name in &report.group_names {
        let rows: Vec<&crate::excess::ExcessRow> =
            report.rows.iter().filter(|r| &r.group == name).collect();
        let chart = BandChart {
            title: format!("weekly deaths, {name}"),
            y_label: "deaths".to_string(),
            x_labels: x_labels.clone(),
            median: rows.iter().map(|r| r.expected_median).collect(),
            bands: default_bands(
                rows.iter().map(|r| r.lo95).collect(),
                rows.iter().map(|r| r.hi95).collect(),
                rows.iter().map(|r| r.lo75).collect(),
                rows.iter().map(|r| r.hi75).collect(),
            ),
            observed: Some(rows.iter().map(|r| r.observed_deaths).collect()),
            flagged: rows.iter().map(|r| r.significant_high || r.significant_low).collect(),
        };
        let svg = band_chart(&chart)?;
        let path = out.join(format!("excess_{name}.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_tracking_chart(
    out: &Path,
    tracking: &[crate::excess::Pc1TrackRow],
    level: f64,
) -> Result<()> {
    let label = if (level - 0.95).abs() < 1e-9 { "95% PI" } else { "PI" };
    let chart = BandChart {
        title: "mortality index tracking".to_string(),
        y_label: "component 1 score".to_string(),
        x_labels: tracking.iter().map(|r| week_tag(&r.week)).collect(),
        median: tracking.iter().map(|r| r.forecast_median).collect(),
        bands: vec![Band {
            lower: tracking.iter().map(|r| r.lower).collect(),
            upper: tracking.iter().map(|r| r.upper).collect(),
            fill: "#c6dbef",
            label,
        }],
        observed: Some(tracking.iter().map(|r| r.observed_index).collect()),
        flagged: tracking.iter().map(|r| r.below_lower).collect(),
    };
    let svg = band_chart(&chart)?;
    let path = out.join("pc1_tracking.svg");
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let config: SynthConfig = match &a.config {
        Some(p) => {
            let r = BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?);
            serde_json::from_reader(r)
                .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    let (panel, truth) = at_stage("generate", generate_synthetic_panel(&config, a.seed))?;
    let out_file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    panel.write_csv(BufWriter::new(out_file))?;
    let truth_path = a
        .truth
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.truth.json", a.out.display())));
    write_json_pretty(&truth_path, &truth)?;
    println!(
        "wrote {} weeks x {} series to {} (truth: {})",
        panel.n_weeks(),
        panel.n_series(),
        a.out.display(),
        truth_path.display()
    );
    if !truth.shock_weeks.is_empty() {
        let tags: Vec<String> = truth.shock_weeks.iter().map(week_tag).collect();
        println!(
            "shock: x{} in weeks {}",
            truth.shock_multiplier,
            tags.join(", ")
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_file::Provenance;
    use crate::week::WeekCalendar;

    #[test]
    fn level_list_parsing() {
        assert_eq!(parse_levels("0.025,0.5,0.975").unwrap(), vec![0.025, 0.5, 0.975]);
        assert_eq!(parse_levels(" 0.5 ").unwrap(), vec![0.5]);
        for bad in ["", "abc", "0.5,0.25", "0.5,0.5", "0,0.5", "0.5,1"] {
            let e = parse_levels(bad).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad:?} should be a usage error");
        }
    }

    #[test]
    fn thread_count_resolution() {
        assert_eq!(thread_count(Some(4)).unwrap(), Some(4));
        assert!(thread_count(Some(0)).is_err());
        // flag wins over the environment, which this test leaves untouched
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = ForecastManifest {
            model_path: "model.json".into(),
            model_sha256: "ab".repeat(32),
            horizon: 30,
            n_sims: 10_000,
            seed: 7,
            levels: vec![0.025, 0.5, 0.975],
            exposures_csv: "exposures.csv".into(),
            first_week: "2010-32".into(),
            trajectories_bin: None,
        };
        write_json_pretty(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.horizon, 30);
        assert_eq!(back.seed, 7);
        assert_eq!(back.levels, m.levels);
        assert!(read_manifest(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn exposure_csv_roundtrip_and_validation() {
        use crate::series::{AgeGroup, Sex, SeriesKey};
        let dir = tempfile::tempdir().unwrap();
        let calendar = WeekCalendar::default();
        let weeks = calendar.range(2010, 1, 3).unwrap();
        let series = vec![
            SeriesKey::new("AAA", Sex::Male, AgeGroup::A0to64),
            SeriesKey::new("AAA", Sex::Female, AgeGroup::A0to64),
        ];
        // minimal ModelFile stand-in: only series and calendar fields are read
        let model = model_stub(series.clone());
        let exposures =
            Array2::from_shape_fn((3, 2), |(t, j)| 1000.0 + 10.0 * t as f64 + j as f64);
        let path = dir.path().join("exposures.csv");
        write_exposures_csv(&path, &weeks, &model, &exposures).unwrap();
        let back = read_exposures_csv(&path, &weeks, &model, &calendar).unwrap();
        assert_eq!(back, exposures);

        // missing cells are counted, unknown series rejected
        let partial = dir.path().join("partial.csv");
        std::fs::write(&partial, "year,week,series,exposure\n2010,1,AAA_M_0-64,5\n").unwrap();
        let err = read_exposures_csv(&partial, &weeks, &model, &calendar).unwrap_err();
        assert!(err.to_string().contains("lack exposures"), "{err}");
        let unknown = dir.path().join("unknown.csv");
        std::fs::write(&unknown, "year,week,series,exposure\n2010,1,ZZZ_M_0-64,5\n").unwrap();
        assert!(read_exposures_csv(&unknown, &weeks, &model, &calendar).is_err());
    }

    fn model_stub(series: Vec<crate::series::SeriesKey>) -> ModelFile {
        use crate::pca::PcaDecomposition;
        use crate::residual::ResidualModel;
        use crate::synth::TrendCoeffs;
        use ndarray::{Array1, Array2};
        let n = series.len();
        ModelFile {
            format_version: crate::model_file::FORMAT_VERSION,
            provenance: Provenance {
                input_path: String::new(),
                input_sha256: String::new(),
                created_utc: String::new(),
                tool_version: String::new(),
            },
            ma_sign_convention: crate::residual::MA_SIGN_CONVENTION.to_string(),
            anchor_year: 2000,
            anchor_week: 31,
            series,
            pca: PcaDecomposition {
                column_means: Array1::zeros(n),
                directions: Array2::eye(n),
                scores: Array2::zeros((1, n)),
                singular_values: Array1::zeros(n),
                explained_variance_shares: Array1::zeros(n),
            },
            trend: TrendCoeffs::reference().to_model(),
            trend_comparison: vec![],
            selection: "bic".into(),
            pc1_residual: ResidualModel::random_walk_from_parts(0.0, 0.0, 0.0).unwrap(),
            other_walks: vec![],
            fit_config: FitConfig::default(),
            last_exposures: vec![0.0; n],
        }
    }
}
