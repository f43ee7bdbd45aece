//! C ABI over the forecasting engine: opaque handles, integer status
//! codes, and a thread-local last-error message.
//!
//! Every fallible entry point returns an [`MpStatus`]; on failure a
//! human-readable message is stored per thread and stays readable via
//! [`mp_last_error_message`] until the next failing call on the same
//! thread. Handles returned through out-parameters are owned by the
//! caller and must be released exactly once with the matching `_free`
//! function. All functions catch panics at the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::c_char;
use ndarray::Array2;

use mortpca::model_file::{
    fit_model_file, load_model, save_model, ModelFile, ModelSelection,
};
use mortpca::panel::{parse_rate_panel, PanelConfig, RatePanel};
use mortpca::simulate::{
    group_death_quantiles, prediction_intervals, simulate_ensemble, ForecastEnsemble,
};
use mortpca::synth::{generate_synthetic_panel, SynthConfig};
use mortpca::trend::{FitConfig, TrendModelId};
use mortpca::week::WeekCalendar;
use mortpca::Error;

/// Result of every fallible call. The first four codes mirror the CLI
/// exit codes (i/o problems are reported separately here); `NullArg`
/// and `Panic` are boundary conditions specific to the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
    Io = 4,
    NullArg = 5,
    Panic = 6,
}

/// Trend-model selection rule used by [`mp_model_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpSelection {
    Bic = 0,
    Aic = 1,
    ForceM11 = 2,
    ForceM12 = 3,
    ForceM13 = 4,
}

/// Weekly mortality-rate panel plus the calendar its week offsets are
/// anchored to.
pub struct MpPanel {
    panel: RatePanel,
    calendar: WeekCalendar,
}

/// A fitted model, identical to what the model JSON file stores.
pub struct MpModel {
    inner: ModelFile,
}

/// A simulated forecast ensemble.
pub struct MpEnsemble {
    inner: ForecastEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("nul stripped"));
}

fn fail(e: Error) -> MpStatus {
    set_error(&e.to_string());
    match e {
        Error::Usage(_) => MpStatus::Usage,
        Error::Data(_) => MpStatus::Data,
        Error::Numeric(_) => MpStatus::Numeric,
        Error::Io { .. } => MpStatus::Io,
    }
}

fn guarded<F: FnOnce() -> Result<(), Error>>(f: F) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MpStatus::Ok,
        Ok(Err(e)) => fail(e),
        Err(_) => {
            set_error("internal panic");
            MpStatus::Panic
        }
    }
}

macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(concat!("null argument: ", stringify!($ptr)));
            return MpStatus::NullArg;
        }
    };
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, Error> {
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Usage("string argument is not valid UTF-8".into()))
}

fn give_string(out: *mut *mut c_char, s: String) {
    let c = CString::new(s.replace('\0', " ")).expect("nul stripped");
    unsafe { *out = c.into_raw() };
}

/// Message for the most recent failure on this thread, empty before the
/// first failure. The pointer stays valid until the next failing call
/// on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn mp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string; do not free it.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string obtained from an out-parameter of this library.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a weekly rate panel from a CSV file with columns
/// `year,week,country,sex,age_group,rate,exposure`, anchored at the
/// given ISO year/week (offset zero). Series observed for fewer than
/// 104 weeks are dropped, matching the fitting pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_read_csv(
    path: *const c_char,
    anchor_year: i32,
    anchor_week: u32,
    out: *mut *mut MpPanel,
) -> MpStatus {
    require!(path);
    require!(out);
    guarded(|| {
        let calendar = WeekCalendar::new(anchor_year, anchor_week)?;
        let path = PathBuf::from(cstr(path)?);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let config = PanelConfig { calendar, min_weeks_per_series: 104 };
        let parsed = parse_rate_panel(bytes.as_slice(), &config)?;
        *out = Box::into_raw(Box::new(MpPanel { panel: parsed.panel, calendar }));
        Ok(())
    })
}

/// Generates a synthetic panel. `config_json` may be null for the
/// default configuration. If `out_truth_json` is non-null it receives
/// the generator truth record as JSON (release with [`mp_string_free`]).
///
/// # Safety
/// Non-null pointers must be valid; `config_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_synth(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut MpPanel,
    out_truth_json: *mut *mut c_char,
) -> MpStatus {
    require!(out);
    guarded(|| {
        let config: SynthConfig = if config_json.is_null() {
            SynthConfig::default()
        } else {
            serde_json::from_str(cstr(config_json)?)
                .map_err(|e| Error::Data(format!("synthetic config: {e}")))?
        };
        let calendar = WeekCalendar::new(config.start_year, config.start_week)?;
        let (panel, truth) = generate_synthetic_panel(&config, seed)?;
        if !out_truth_json.is_null() {
            let json = serde_json::to_string_pretty(&truth)
                .map_err(|e| Error::Data(format!("truth serialization: {e}")))?;
            give_string(out_truth_json, json);
        }
        *out = Box::into_raw(Box::new(MpPanel { panel, calendar }));
        Ok(())
    })
}

/// Restricts a panel to the closed week range [start, end], returning a
/// new panel handle.
///
/// # Safety
/// `panel` must be a live panel handle and `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_slice(
    panel: *const MpPanel,
    start_year: i32,
    start_week: u32,
    end_year: i32,
    end_week: u32,
    out: *mut *mut MpPanel,
) -> MpStatus {
    require!(panel);
    require!(out);
    guarded(|| {
        let p = &*panel;
        let start = p.calendar.offset(start_year, start_week)?;
        let end = p.calendar.offset(end_year, end_week)?;
        let sliced = p.panel.slice_weeks(start, end)?;
        *out = Box::into_raw(Box::new(MpPanel { panel: sliced, calendar: p.calendar }));
        Ok(())
    })
}

/// Number of weeks in the panel, or -1 if `panel` is null.
///
/// # Safety
/// `panel` must be null or a live panel handle.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_n_weeks(panel: *const MpPanel) -> i64 {
    match panel.as_ref() {
        Some(p) => p.panel.n_weeks() as i64,
        None => -1,
    }
}

/// Number of series in the panel, or -1 if `panel` is null.
///
/// # Safety
/// `panel` must be null or a live panel handle.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_n_series(panel: *const MpPanel) -> i64 {
    match panel.as_ref() {
        Some(p) => p.panel.n_series() as i64,
        None => -1,
    }
}

/// Label of series `index` in panel column order, e.g. `AUT_M_0-64`
/// (release with [`mp_string_free`]).
///
/// # Safety
/// `panel` must be a live panel handle and `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_series_label(
    panel: *const MpPanel,
    index: usize,
    out: *mut *mut c_char,
) -> MpStatus {
    require!(panel);
    require!(out);
    guarded(|| {
        let p = &*panel;
        let key = p.panel.series.get(index).ok_or_else(|| {
            Error::Usage(format!(
                "series index {index} out of range (panel has {})",
                p.panel.n_series()
            ))
        })?;
        give_string(out, key.label());
        Ok(())
    })
}

/// Writes the panel as CSV in the format [`mp_panel_read_csv`] accepts.
///
/// # Safety
/// `panel` must be a live panel handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_write_csv(
    panel: *const MpPanel,
    path: *const c_char,
) -> MpStatus {
    require!(panel);
    require!(path);
    guarded(|| {
        let path = PathBuf::from(cstr(path)?);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        (*panel).panel.write_csv(std::io::BufWriter::new(file))
    })
}

/// Releases a panel handle; null is a no-op.
///
/// # Safety
/// `panel` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mp_panel_free(panel: *mut MpPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Fits the full model (logit transform, decomposition, trend
/// comparison, residual models) on the panel, which is treated as the
/// baseline window. `fast` trades estimation accuracy for speed using
/// coarser optimizer settings.
///
/// # Safety
/// `panel` must be a live panel handle and `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn mp_model_fit(
    panel: *const MpPanel,
    selection: MpSelection,
    fast: bool,
    out: *mut *mut MpModel,
) -> MpStatus {
    require!(panel);
    require!(out);
    guarded(|| {
        let p = &*panel;
        let selection = match selection {
            MpSelection::Bic => ModelSelection::Bic,
            MpSelection::Aic => ModelSelection::Aic,
            MpSelection::ForceM11 => ModelSelection::Forced(TrendModelId::M1_1),
            MpSelection::ForceM12 => ModelSelection::Forced(TrendModelId::M1_2),
            MpSelection::ForceM13 => ModelSelection::Forced(TrendModelId::M1_3),
        };
        let config = if fast { FitConfig::fast() } else { FitConfig::default() };
        let result = fit_model_file(&p.panel, &p.calendar, selection, &config)?;
        *out = Box::into_raw(Box::new(MpModel { inner: result.model }));
        Ok(())
    })
}

/// Saves the model as JSON; the file round-trips bit-exactly through
/// [`mp_model_load`].
///
/// # Safety
/// `model` must be a live model handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mp_model_save(
    model: *const MpModel,
    path: *const c_char,
) -> MpStatus {
    require!(model);
    require!(path);
    guarded(|| {
        let path = PathBuf::from(cstr(path)?);
        save_model(&path, &(*model).inner)
    })
}

/// Loads a model previously written by [`mp_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn mp_model_load(
    path: *const c_char,
    out: *mut *mut MpModel,
) -> MpStatus {
    require!(path);
    require!(out);
    guarded(|| {
        let path = PathBuf::from(cstr(path)?);
        let inner = load_model(&path)?;
        *out = Box::into_raw(Box::new(MpModel { inner }));
        Ok(())
    })
}

/// Number of series the model was fitted on, or -1 if `model` is null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_n_series(model: *const MpModel) -> i64 {
    match model.as_ref() {
        Some(m) => m.inner.series.len() as i64,
        None => -1,
    }
}

/// Share of variance explained by the first component, in [0, 1], or
/// NaN if `model` is null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn mp_model_pc1_share(model: *const MpModel) -> f64 {
    match model.as_ref() {
        Some(m) => m.inner.pca.explained_variance_shares[0],
        None => f64::NAN,
    }
}

/// Label of series `index` in model column order (release with
/// [`mp_string_free`]).
///
/// # Safety
/// `model` must be a live model handle and `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn mp_model_series_label(
    model: *const MpModel,
    index: usize,
    out: *mut *mut c_char,
) -> MpStatus {
    require!(model);
    require!(out);
    guarded(|| {
        let m = &*model;
        let key = m.inner.series.get(index).ok_or_else(|| {
            Error::Usage(format!(
                "series index {index} out of range (model has {})",
                m.inner.series.len()
            ))
        })?;
        give_string(out, key.label());
        Ok(())
    })
}

/// Releases a model handle; null is a no-op.
///
/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mp_model_free(model: *mut MpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Simulates the forecast ensemble for `horizon` weeks past the
/// baseline. `exposures` may be null, in which case the last baseline
/// exposures are carried forward, or point to `horizon * n_series`
/// doubles in week-major order. Results are bit-identical for a given
/// (model, horizon, n_sims, seed, exposures) tuple.
///
/// # Safety
/// `model` must be a live model handle, `out` a valid location, and
/// `exposures` null or sized as described.
#[no_mangle]
pub unsafe extern "C" fn mp_forecast(
    model: *const MpModel,
    horizon: usize,
    n_sims: usize,
    seed: u64,
    exposures: *const f64,
    out: *mut *mut MpEnsemble,
) -> MpStatus {
    require!(model);
    require!(out);
    guarded(|| {
        let m = &(*model).inner;
        let n_series = m.series.len();
        let exposures = if exposures.is_null() {
            Array2::from_shape_fn((horizon, n_series), |(_, j)| m.last_exposures[j])
        } else {
            let flat = std::slice::from_raw_parts(exposures, horizon * n_series);
            Array2::from_shape_vec((horizon, n_series), flat.to_vec())
                .expect("slice length matches shape")
        };
        let ensemble = simulate_ensemble(
            &m.pca,
            &m.trend,
            &m.pc1_residual,
            &m.other_walks,
            &exposures,
            horizon,
            n_sims,
            seed,
        )?;
        *out = Box::into_raw(Box::new(MpEnsemble { inner: ensemble }));
        Ok(())
    })
}

/// Number of simulated trajectories, or -1 if `ensemble` is null.
///
/// # Safety
/// `ensemble` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_n_sims(ensemble: *const MpEnsemble) -> i64 {
    match ensemble.as_ref() {
        Some(e) => e.inner.n_sims as i64,
        None => -1,
    }
}

/// Number of forecast weeks, or -1 if `ensemble` is null.
///
/// # Safety
/// `ensemble` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_horizon(ensemble: *const MpEnsemble) -> i64 {
    match ensemble.as_ref() {
        Some(e) => e.inner.horizon() as i64,
        None => -1,
    }
}

/// Number of series per forecast week, or -1 if `ensemble` is null.
///
/// # Safety
/// `ensemble` must be null or a live ensemble handle.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_n_series(ensemble: *const MpEnsemble) -> i64 {
    match ensemble.as_ref() {
        Some(e) => e.inner.n_series() as i64,
        None => -1,
    }
}

/// ISO year and week of forecast step `index` (0-based).
///
/// # Safety
/// `ensemble` must be a live ensemble handle; `out_year` and `out_week`
/// must be valid locations.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_week(
    ensemble: *const MpEnsemble,
    index: usize,
    out_year: *mut i32,
    out_week: *mut u32,
) -> MpStatus {
    require!(ensemble);
    require!(out_year);
    require!(out_week);
    guarded(|| {
        let e = &*ensemble;
        let week = e.inner.horizon_weeks.get(index).ok_or_else(|| {
            Error::Usage(format!(
                "week index {index} out of range (horizon is {})",
                e.inner.horizon()
            ))
        })?;
        *out_year = week.year;
        *out_week = week.week;
        Ok(())
    })
}

/// Empirical death-count quantiles per forecast week and series. `out`
/// must hold `horizon * n_series * n_levels` doubles and is filled with
/// the level index varying fastest, then series, then week. Levels must
/// be strictly increasing and inside (0, 1).
///
/// # Safety
/// `ensemble` must be a live ensemble handle; `levels` must point to
/// `n_levels` doubles and `out` to the count given above.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_death_quantiles(
    ensemble: *const MpEnsemble,
    levels: *const f64,
    n_levels: usize,
    out: *mut f64,
) -> MpStatus {
    require!(ensemble);
    require!(levels);
    require!(out);
    guarded(|| {
        let e = &*ensemble;
        let levels = std::slice::from_raw_parts(levels, n_levels);
        let q = prediction_intervals(&e.inner, levels)?;
        let flat = q.values.as_slice().expect("standard layout");
        std::slice::from_raw_parts_mut(out, flat.len()).copy_from_slice(flat);
        Ok(())
    })
}

/// Quantiles of death counts summed over the series subset `indices`.
/// `out` must hold `horizon * n_levels` doubles and is filled with the
/// level index varying fastest.
///
/// # Safety
/// `ensemble` must be a live ensemble handle; `indices` and `levels`
/// must point to `n_indices` and `n_levels` elements, `out` to the
/// count given above.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_group_quantiles(
    ensemble: *const MpEnsemble,
    indices: *const usize,
    n_indices: usize,
    levels: *const f64,
    n_levels: usize,
    out: *mut f64,
) -> MpStatus {
    require!(ensemble);
    require!(indices);
    require!(levels);
    require!(out);
    guarded(|| {
        let e = &*ensemble;
        let indices = std::slice::from_raw_parts(indices, n_indices);
        let levels = std::slice::from_raw_parts(levels, n_levels);
        let q = group_death_quantiles(&e.inner, indices, levels)?;
        let flat = q.as_slice().expect("standard layout");
        std::slice::from_raw_parts_mut(out, flat.len()).copy_from_slice(flat);
        Ok(())
    })
}

/// Releases an ensemble handle; null is a no-op.
///
/// # Safety
/// `ensemble` must come from this library and not have been freed
/// already.
#[no_mangle]
pub unsafe extern "C" fn mp_ensemble_free(ensemble: *mut MpEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}
