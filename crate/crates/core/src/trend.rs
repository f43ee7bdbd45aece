//! Deterministic trend of the mortality index: nested models 1.1-1.3
//! (cosine seasonality, inverse-logistic growth, seasonal dummies) with
//! R-squared/AIC/BIC comparison and closed-form evaluation.
//!
//! The linear coefficients are profiled out by least squares at each
//! candidate (t0, beta); the candidate pair itself is found by a grid
//! search refined with golden-section sweeps and a BFGS polish.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::opt::{bfgs, golden_section, BfgsOptions};
use crate::week::WeekIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendModelId {
    M1_1,
    M1_2,
    M1_3,
}

impl TrendModelId {
    pub fn label(&self) -> &'static str {
        match self {
            TrendModelId::M1_1 => "1.1",
            TrendModelId::M1_2 => "1.2",
            TrendModelId::M1_3 => "1.3",
        }
    }

    fn has_logistic(&self) -> bool {
        !matches!(self, TrendModelId::M1_1)
    }

    fn has_dummies(&self) -> bool {
        matches!(self, TrendModelId::M1_3)
    }
}

/// Binary season indicators; winter is the all-zero baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeasonFlags {
    pub spring: bool,
    pub summer: bool,
    pub autumn: bool,
}

/// Spring is calendar weeks 13-25, summer 26-38, autumn 39-51; weeks 52
/// and 1-12 are winter.
pub fn seasonal_indicator(week_of_year: u32) -> Result<SeasonFlags> {
    if !(1..=52).contains(&week_of_year) {
        return Err(Error::Data(format!("week {week_of_year} outside 1..=52")));
    }
    Ok(SeasonFlags {
        spring: (13..=25).contains(&week_of_year),
        summer: (26..=38).contains(&week_of_year),
        autumn: (39..=51).contains(&week_of_year),
    })
}

/// Sigmoid growth regressor exp((w-t0)/beta) / (1 + exp((w-t0)/beta)),
/// evaluated through the stable inverse-logit.
pub fn inverse_logistic_regressor(w: f64, t0: f64, beta: f64) -> Result<f64> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Data(format!("logistic beta must be positive, got {beta}")));
    }
    crate::transform::inverse_logit((w - t0) / beta)
}

/// Fitted deterministic trend for the index series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendModel {
    pub model_id: TrendModelId,
    pub intercept: f64,
    pub cosine_amp: f64,
    /// Optional full-Fourier check; 0 unless the fit enabled it.
    pub sine_amp: f64,
    pub logistic_scale: f64,
    pub t0: f64,
    pub beta: f64,
    pub spring: f64,
    pub summer: f64,
    pub autumn: f64,
    pub r_squared: f64,
    pub aic: f64,
    pub bic: f64,
    /// Observed minus fitted over the baseline, in week order.
    pub residuals: Vec<f64>,
    pub baseline_weeks: Vec<WeekIndex>,
    /// Set when the (t0, beta) search ended on its grid boundary.
    pub boundary_warning: bool,
}

/// Trend value at one week: intercept + cosine + logistic + season dummy.
pub fn evaluate_trend(m: &TrendModel, week: &WeekIndex) -> Result<f64> {
    let w = week.offset as f64;
    let flags = seasonal_indicator(week.week)?;
    let angle = std::f64::consts::PI * w / 26.0;
    let mut v = m.intercept + m.cosine_amp * angle.cos() + m.sine_amp * angle.sin();
    if m.logistic_scale != 0.0 {
        v += m.logistic_scale * inverse_logistic_regressor(w, m.t0, m.beta)?;
    }
    if flags.spring {
        v += m.spring;
    } else if flags.summer {
        v += m.summer;
    } else if flags.autumn {
        v += m.autumn;
    }
    Ok(v)
}

/// Trend values over a week range.
pub fn trend_values(m: &TrendModel, weeks: &[WeekIndex]) -> Result<Vec<f64>> {
    weeks.iter().map(|w| evaluate_trend(m, w)).collect()
}

/// Search configuration for the profiled (t0, beta) parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of t0 grid cells over the padded baseline range.
    pub t0_cells: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Number of log-spaced beta grid cells.
    pub beta_cells: usize,
    /// Alternating golden-section sweeps after the grid stage.
    pub refine_rounds: usize,
    /// BFGS polish iterations on (t0, ln beta); 0 disables.
    pub polish_iters: usize,
    pub include_sine: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            t0_cells: 64,
            beta_min: 4.0,
            beta_max: 4096.0,
            beta_cells: 16,
            refine_rounds: 3,
            polish_iters: 150,
            include_sine: false,
        }
    }
}

impl FitConfig {
    /// Coarser search for replicate studies where noise dominates.
    pub fn fast() -> Self {
        FitConfig {
            t0_cells: 16,
            beta_cells: 8,
            refine_rounds: 2,
            polish_iters: 40,
            ..Default::default()
        }
    }
}

const MIN_FIT_WEEKS: usize = 156; // three full years

struct Design {
    x: DMatrix<f64>,
    names: Vec<&'static str>,
}

fn build_design(
    weeks: &[WeekIndex],
    id: TrendModelId,
    include_sine: bool,
    t0: f64,
    beta: f64,
) -> Result<Design> {
    let n = weeks.len();
    let mut cols: Vec<(&'static str, Vec<f64>)> = Vec::with_capacity(7);
    cols.push(("intercept", vec![1.0; n]));
    let mut cosine = Vec::with_capacity(n);
    let mut sine = Vec::with_capacity(n);
    for week in weeks {
        let angle = std::f64::consts::PI * week.offset as f64 / 26.0;
        cosine.push(angle.cos());
        sine.push(angle.sin());
    }
    cols.push(("cosine", cosine));
    if include_sine {
        cols.push(("sine", sine));
    }
    if id.has_logistic() {
        let mut sig = Vec::with_capacity(n);
        for week in weeks {
            sig.push(inverse_logistic_regressor(week.offset as f64, t0, beta)?);
        }
        cols.push(("logistic", sig));
    }
    if id.has_dummies() {
        let mut spring = vec![0.0; n];
        let mut summer = vec![0.0; n];
        let mut autumn = vec![0.0; n];
        for (i, week) in weeks.iter().enumerate() {
            let f = seasonal_indicator(week.week)?;
            if f.spring {
                spring[i] = 1.0;
            } else if f.summer {
                summer[i] = 1.0;
            } else if f.autumn {
                autumn[i] = 1.0;
            }
        }
        cols.push(("spring", spring));
        cols.push(("summer", summer));
        cols.push(("autumn", autumn));
    }
    let names: Vec<&'static str> = cols.iter().map(|(n, _)| *n).collect();
    let k = cols.len();
    let mut x = DMatrix::zeros(n, k);
    for (j, (_, col)) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(Design { x, names })
}

/// Fast RSS via normal equations; falls back to an SVD solve when the
/// normal matrix is not positive definite (degenerate candidates).
fn profile_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let b = match Cholesky::new(xtx) {
        Some(ch) => ch.solve(&xty),
        None => return svd_solve(x, y).2,
    };
    let r = y - x * &b;
    r.dot(&r)
}

fn svd_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
    let svd = x.clone().svd(true, true);
    let s0 = svd.singular_values.max();
    let b = svd.solve(y, s0 * 1e-13).expect("u/v_t computed");
    let r = y - x * &b;
    let rss = r.dot(&r);
    (b, r, rss)
}

struct BestCell {
    rss: f64,
    t0: f64,
    beta: f64,
}

impl BestCell {
    fn offer(&mut self, rss: f64, t0: f64, beta: f64) {
        // strict improvement only: earlier candidates win ties, and the
        // grid is walked in ascending (t0, beta) order
        if rss < self.rss {
            *self = BestCell { rss, t0, beta };
        }
    }
}

pub fn fit_trend(
    weeks: &[WeekIndex],
    values: &[f64],
    id: TrendModelId,
    config: &FitConfig,
) -> Result<TrendModel> {
    fit_trend_with_candidates(weeks, values, id, config, &[])
}

/// As `fit_trend`, but also evaluates caller-supplied (t0, beta) starting
/// candidates. `model_comparison` threads the simpler model's optimum
/// through so nested R-squared ordering holds by construction.
pub fn fit_trend_with_candidates(
    weeks: &[WeekIndex],
    values: &[f64],
    id: TrendModelId,
    config: &FitConfig,
    extra_candidates: &[(f64, f64)],
) -> Result<TrendModel> {
    let n = weeks.len();
    if n != values.len() {
        return Err(Error::Data(format!(
            "weeks ({n}) and values ({}) lengths differ",
            values.len()
        )));
    }
    if n < MIN_FIT_WEEKS {
        return Err(Error::Data(format!(
            "trend fit needs at least {MIN_FIT_WEEKS} weeks (three full years), got {n}"
        )));
    }
    let y = DVector::from_column_slice(values);
    let mean = y.sum() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if tss <= 1e-12 * scale {
        return Err(Error::Data("degenerate (constant) series; trend undefined".into()));
    }

    let (t0, beta, boundary_warning) = if id.has_logistic() {
        search_t0_beta(weeks, &y, id, config, extra_candidates)?
    } else {
        (0.0, 1.0, false)
    };

    let design = build_design(weeks, id, config.include_sine, t0, beta)?;
    let (b, r, rss) = svd_solve(&design.x, &y);

    let mut m = TrendModel {
        model_id: id,
        intercept: 0.0,
        cosine_amp: 0.0,
        sine_amp: 0.0,
        logistic_scale: 0.0,
        t0,
        beta,
        spring: 0.0,
        summer: 0.0,
        autumn: 0.0,
        r_squared: 1.0 - rss / tss,
        aic: 0.0,
        bic: 0.0,
        residuals: r.iter().cloned().collect(),
        baseline_weeks: weeks.to_vec(),
        boundary_warning,
    };
    for (j, name) in design.names.iter().enumerate() {
        let v = b[j];
        match *name {
            "intercept" => m.intercept = v,
            "cosine" => m.cosine_amp = v,
            "sine" => m.sine_amp = v,
            "logistic" => m.logistic_scale = v,
            "spring" => m.spring = v,
            "summer" => m.summer = v,
            "autumn" => m.autumn = v,
            _ => unreachable!(),
        }
    }
    // parameter count: linear coefficients, (t0, beta) when profiled, and
    // the residual variance
    let k = design.names.len() + if id.has_logistic() { 2 } else { 0 } + 1;
    let nf = n as f64;
    let rss_floor = rss.max(1e-300);
    m.aic = nf * (rss_floor / nf).ln() + 2.0 * k as f64;
    m.bic = nf * (rss_floor / nf).ln() + k as f64 * nf.ln();
    Ok(m)
}

fn search_t0_beta(
    weeks: &[WeekIndex],
    y: &DVector<f64>,
    id: TrendModelId,
    config: &FitConfig,
    extra_candidates: &[(f64, f64)],
) -> Result<(f64, f64, bool)> {
    if config.t0_cells < 2 || config.beta_cells < 2 {
        return Err(Error::Data("t0/beta grids need at least 2 cells".into()));
    }
    if !(config.beta_min > 0.0 && config.beta_max > config.beta_min) {
        return Err(Error::Data("beta grid bounds must satisfy 0 < min < max".into()));
    }
    let w_min = weeks[0].offset as f64;
    let w_max = weeks[weeks.len() - 1].offset as f64;
    let span = w_max - w_min;
    let pad = 0.25 * span;
    let (t0_lo, t0_hi) = (w_min - pad, w_max + pad);
    let t0_cell = (t0_hi - t0_lo) / config.t0_cells as f64;
    let ln_beta_cell =
        (config.beta_max.ln() - config.beta_min.ln()) / config.beta_cells as f64;

    let rss_of = |t0: f64, beta: f64| -> Result<f64> {
        let d = build_design(weeks, id, config.include_sine, t0, beta)?;
        Ok(profile_rss(&d.x, y))
    };

    let mut best = BestCell { rss: f64::INFINITY, t0: t0_lo, beta: config.beta_min };
    for i in 0..=config.t0_cells {
        let t0 = t0_lo + i as f64 * t0_cell;
        for j in 0..=config.beta_cells {
            let beta = (config.beta_min.ln() + j as f64 * ln_beta_cell).exp();
            best.offer(rss_of(t0, beta)?, t0, beta);
        }
    }
    for &(t0, beta) in extra_candidates {
        if beta > 0.0 {
            best.offer(rss_of(t0, beta)?, t0, beta);
        }
    }

    // alternating golden-section sweeps around the best cell, kept inside
    // the grid box so flat (t0, beta) ridges cannot be chased off-range
    for _ in 0..config.refine_rounds {
        let beta = best.beta;
        let (t0, rss) = golden_section(
            |t| rss_of(t, beta).unwrap_or(f64::INFINITY),
            (best.t0 - t0_cell).max(t0_lo),
            (best.t0 + t0_cell).min(t0_hi),
            1e-10 * span.max(1.0),
            120,
        );
        best.offer(rss, t0, beta);
        let t0 = best.t0;
        let (ln_beta, rss) = golden_section(
            |lb| rss_of(t0, lb.exp()).unwrap_or(f64::INFINITY),
            (best.beta.ln() - ln_beta_cell).max(config.beta_min.ln()),
            (best.beta.ln() + ln_beta_cell).min(config.beta_max.ln()),
            1e-12,
            120,
        );
        best.offer(rss, t0, ln_beta.exp());
    }

    if config.polish_iters > 0 {
        let res = bfgs(
            |p| rss_of(p[0], p[1].exp()).unwrap_or(f64::INFINITY),
            &[best.t0, best.beta.ln()],
            &BfgsOptions {
                max_iter: config.polish_iters,
                fd_step: 1e-7,
                grad_tol: 1e-12,
                ..Default::default()
            },
        );
        let t0 = res.x[0].clamp(t0_lo, t0_hi);
        let beta = res.x[1].exp().clamp(config.beta_min, config.beta_max);
        best.offer(rss_of(t0, beta)?, t0, beta);
    }

    let boundary = best.t0 <= t0_lo + 0.5 * t0_cell
        || best.t0 >= t0_hi - 0.5 * t0_cell
        || best.beta <= config.beta_min * (0.5 * ln_beta_cell).exp()
        || best.beta >= config.beta_max / (0.5 * ln_beta_cell).exp();
    Ok((best.t0, best.beta, boundary))
}

/// Per-model fit summary with the criterion winners.
#[derive(Debug, Clone)]
pub struct ModelComparison {
    pub models: Vec<TrendModel>,
    pub aic_best: TrendModelId,
    pub bic_best: TrendModelId,
}

/// Fits models 1.1, 1.2, 1.3 on the same series. The simpler model's
/// (t0, beta) optimum seeds the next model's search, so the nested
/// R-squared ordering is preserved.
pub fn model_comparison(
    weeks: &[WeekIndex],
    values: &[f64],
    config: &FitConfig,
) -> Result<ModelComparison> {
    let m1 = fit_trend(weeks, values, TrendModelId::M1_1, config)?;
    let m2 = fit_trend(weeks, values, TrendModelId::M1_2, config)?;
    let m3 = fit_trend_with_candidates(
        weeks,
        values,
        TrendModelId::M1_3,
        config,
        &[(m2.t0, m2.beta)],
    )?;
    let models = vec![m1, m2, m3];
    // ties prefer the simpler model
    let pick = |key: fn(&TrendModel) -> f64| {
        models
            .iter()
            .min_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite criteria"))
            .expect("non-empty")
            .model_id
    };
    let aic_best = pick(|m| m.aic);
    let bic_best = pick(|m| m.bic);
    Ok(ModelComparison { models, aic_best, bic_best })
}

/// One coefficient's interval.
#[derive(Debug, Clone)]
pub struct CoefInterval {
    pub name: &'static str,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Standard OLS coefficient confidence intervals, conditional on the
/// selected (t0, beta).
pub fn confidence_intervals(m: &TrendModel, level: f64) -> Result<Vec<CoefInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Data(format!("confidence level {level} outside (0,1)")));
    }
    let include_sine = m.sine_amp != 0.0;
    let design = build_design(&m.baseline_weeks, m.model_id, include_sine, m.t0, m.beta)?;
    let n = design.x.nrows();
    let k = design.x.ncols();
    if n <= k {
        return Err(Error::Data("not enough observations for intervals".into()));
    }
    let rss: f64 = m.residuals.iter().map(|r| r * r).sum();
    let sigma2 = rss / (n - k) as f64;
    let xtx = design.x.transpose() * &design.x;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Numeric("normal matrix not invertible".into()))?;
    let t = StudentsT::new(0.0, 1.0, (n - k) as f64)
        .map_err(|e| Error::Numeric(format!("t-distribution: {e}")))?;
    let q = t.inverse_cdf(0.5 + level / 2.0);
    let mut out = Vec::with_capacity(k);
    for (j, name) in design.names.iter().enumerate() {
        let est = match *name {
            "intercept" => m.intercept,
            "cosine" => m.cosine_amp,
            "sine" => m.sine_amp,
            "logistic" => m.logistic_scale,
            "spring" => m.spring,
            "summer" => m.summer,
            "autumn" => m.autumn,
            _ => unreachable!(),
        };
        let se = (sigma2 * xtx_inv[(j, j)]).max(0.0).sqrt();
        out.push(CoefInterval { name, estimate: est, lower: est - q * se, upper: est + q * se });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::week::WeekCalendar;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn weeks_from(cal: &WeekCalendar, start: i64, n: usize) -> Vec<WeekIndex> {
        (start..start + n as i64).map(|w| cal.from_offset(w)).collect()
    }

    /// Table-style reference coefficients used as planted truth.
    fn reference_model(weeks: Vec<WeekIndex>) -> TrendModel {
        TrendModel {
            model_id: TrendModelId::M1_3,
            intercept: 32.95,
            cosine_amp: 1.05,
            sine_amp: 0.0,
            logistic_scale: 9.74,
            t0: 220.0,
            beta: 482.05,
            spring: 0.71,
            summer: 0.55,
            autumn: 0.5,
            r_squared: f64::NAN,
            aic: f64::NAN,
            bic: f64::NAN,
            residuals: vec![],
            baseline_weeks: weeks,
            boundary_warning: false,
        }
    }

    #[test]
    fn seasonal_indicator_boundaries() {
        let f = |w| seasonal_indicator(w).unwrap();
        assert_eq!(f(13), SeasonFlags { spring: true, summer: false, autumn: false });
        assert_eq!(f(25), SeasonFlags { spring: true, summer: false, autumn: false });
        assert_eq!(f(26), SeasonFlags { spring: false, summer: true, autumn: false });
        assert_eq!(f(38), SeasonFlags { spring: false, summer: true, autumn: false });
        assert_eq!(f(39), SeasonFlags { spring: false, summer: false, autumn: true });
        assert_eq!(f(51), SeasonFlags { spring: false, summer: false, autumn: true });
        for w in [1, 12, 52] {
            assert_eq!(f(w), SeasonFlags { spring: false, summer: false, autumn: false });
        }
        assert!(seasonal_indicator(0).is_err());
        assert!(seasonal_indicator(53).is_err());
    }

    #[test]
    fn logistic_regressor_midpoint_and_asymptotes() {
        assert_eq!(inverse_logistic_regressor(220.0, 220.0, 482.05).unwrap(), 0.5);
        let lo = inverse_logistic_regressor(220.0 - 50.0 * 482.05, 220.0, 482.05).unwrap();
        let hi = inverse_logistic_regressor(220.0 + 50.0 * 482.05, 220.0, 482.05).unwrap();
        assert!(lo < 1e-20);
        assert!((1.0 - hi).abs() < 1e-20);
        assert!(inverse_logistic_regressor(0.0, 0.0, -1.0).is_err());
        assert!(inverse_logistic_regressor(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn logistic_regressor_matches_oracle() {
        // sigma((0 - 220)/482.05) to 18 digits: 0.387843943626968037
        let v = inverse_logistic_regressor(0.0, 220.0, 482.05).unwrap();
        assert!((v - 0.38784394362696806).abs() < 1e-15);
    }

    #[test]
    fn evaluate_trend_reference_week_zero() {
        let cal = WeekCalendar::default();
        let m = reference_model(vec![]);
        // w = 0 is calendar week 31 (summer): 32.95 + 1.05 + 9.74*sigmoid + 0.55
        let v = evaluate_trend(&m, &cal.from_offset(0)).unwrap();
        assert!((v - 38.327600010926669).abs() < 1e-10, "{v}");
    }

    #[test]
    fn evaluate_trend_zero_model_and_half_period() {
        let cal = WeekCalendar::default();
        let mut m = reference_model(vec![]);
        m.intercept = 0.0;
        m.cosine_amp = 0.0;
        m.logistic_scale = 0.0;
        m.spring = 0.0;
        m.summer = 0.0;
        m.autumn = 0.0;
        for w in [-30i64, 0, 7, 400] {
            assert_eq!(evaluate_trend(&m, &cal.from_offset(w)).unwrap(), 0.0);
        }
        // cosine alone at half period: w = 26 is calendar week 5 (winter)
        m.cosine_amp = 2.5;
        let v = evaluate_trend(&m, &cal.from_offset(26)).unwrap();
        assert!((v + 2.5).abs() < 1e-12);
    }

    #[test]
    fn pure_cosine_recovered_exactly_by_m1_1() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, -29, 208);
        let values: Vec<f64> = weeks
            .iter()
            .map(|w| 4.5 + 1.25 * (std::f64::consts::PI * w.offset as f64 / 26.0).cos())
            .collect();
        let m = fit_trend(&weeks, &values, TrendModelId::M1_1, &FitConfig::default()).unwrap();
        assert!((m.intercept - 4.5).abs() < 1e-10);
        assert!((m.cosine_amp - 1.25).abs() < 1e-10);
        assert!(m.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn noiseless_m1_3_recovery_to_1e6() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, -29, 1039);
        let truth = reference_model(weeks.clone());
        let values = trend_values(&truth, &weeks).unwrap();
        let m = fit_trend(&weeks, &values, TrendModelId::M1_3, &FitConfig::default()).unwrap();
        assert!((m.intercept - 32.95).abs() < 1e-6, "intercept {}", m.intercept);
        assert!((m.cosine_amp - 1.05).abs() < 1e-6, "cosine {}", m.cosine_amp);
        assert!((m.logistic_scale - 9.74).abs() < 1e-6, "logistic {}", m.logistic_scale);
        assert!((m.spring - 0.71).abs() < 1e-6, "spring {}", m.spring);
        assert!((m.summer - 0.55).abs() < 1e-6, "summer {}", m.summer);
        assert!((m.autumn - 0.5).abs() < 1e-6, "autumn {}", m.autumn);
        assert!(m.r_squared >= 1.0 - 1e-10, "r2 {}", m.r_squared);
        assert!(!m.boundary_warning);
    }

    #[test]
    fn residuals_zero_mean_and_orthogonal() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, 0, 520);
        let truth = reference_model(weeks.clone());
        let mut rng = StdRng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let values: Vec<f64> = trend_values(&truth, &weeks)
            .unwrap()
            .into_iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        let m = fit_trend(&weeks, &values, TrendModelId::M1_3, &FitConfig::default()).unwrap();
        let mean = m.residuals.iter().sum::<f64>() / m.residuals.len() as f64;
        assert!(mean.abs() < 1e-8);
        // orthogonality to each regressor, relative to column norms
        let d = build_design(&weeks, TrendModelId::M1_3, false, m.t0, m.beta).unwrap();
        let rnorm = m.residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
        for j in 0..d.x.ncols() {
            let col = d.x.column(j);
            let dot: f64 = col.iter().zip(&m.residuals).map(|(a, b)| a * b).sum();
            let cnorm = col.dot(&col).sqrt();
            assert!(dot.abs() <= 1e-8 * rnorm * cnorm, "column {j}: {dot}");
        }
        // fitted + residuals reproduce the series
        let fitted = trend_values(&m, &weeks).unwrap();
        for i in 0..weeks.len() {
            assert!((fitted[i] + m.residuals[i] - values[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn nested_r_squared_ordering() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, -29, 416);
        let truth = reference_model(weeks.clone());
        let mut rng = StdRng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let values: Vec<f64> = trend_values(&truth, &weeks)
            .unwrap()
            .into_iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        let cmp = model_comparison(&weeks, &values, &FitConfig::fast()).unwrap();
        assert!(cmp.models[1].r_squared >= cmp.models[0].r_squared - 1e-12);
        assert!(cmp.models[2].r_squared >= cmp.models[1].r_squared - 1e-12);
    }

    #[test]
    fn comparison_selects_generating_model() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, -29, 520);
        let truth = reference_model(weeks.clone());
        let mut rng = StdRng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let values: Vec<f64> = trend_values(&truth, &weeks)
            .unwrap()
            .into_iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        let cmp = model_comparison(&weeks, &values, &FitConfig::fast()).unwrap();
        assert_eq!(cmp.aic_best, TrendModelId::M1_3);
        assert_eq!(cmp.bic_best, TrendModelId::M1_3);
    }

    #[test]
    fn m1_1_data_selects_m1_1_in_majority() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, 0, 260);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut aic_wins = 0;
        let mut bic_wins = 0;
        let n_rep = 100;
        for seed in 0..n_rep {
            let mut rng = StdRng::seed_from_u64(1000 + seed);
            let values: Vec<f64> = weeks
                .iter()
                .map(|w| {
                    38.0 + 1.3 * (std::f64::consts::PI * w.offset as f64 / 26.0).cos()
                        + noise.sample(&mut rng)
                })
                .collect();
            let cmp = model_comparison(&weeks, &values, &FitConfig::fast()).unwrap();
            if cmp.aic_best == TrendModelId::M1_1 {
                aic_wins += 1;
            }
            if cmp.bic_best == TrendModelId::M1_1 {
                bic_wins += 1;
            }
        }
        assert!(aic_wins > n_rep / 2, "AIC selected 1.1 in {aic_wins}/{n_rep}");
        assert!(bic_wins > n_rep / 2, "BIC selected 1.1 in {bic_wins}/{n_rep}");
    }

    #[test]
    fn time_origin_equivariance_over_whole_years() {
        // the cosine phase is tied to the week origin, so the family is
        // shift-invariant only for whole 52-week periods
        let base_cal = WeekCalendar::default();
        let shifted_cal = WeekCalendar::new(1999, 31).unwrap(); // one year earlier
        let weeks = weeks_from(&base_cal, -29, 520);
        // steep sigmoid so (t0, beta) is well identified over the range
        let mut truth = reference_model(weeks.clone());
        truth.beta = 120.0;
        let values = trend_values(&truth, &weeks).unwrap();
        // same calendar weeks re-indexed: offsets all shift by +52
        let shifted_weeks: Vec<WeekIndex> = weeks
            .iter()
            .map(|w| shifted_cal.week_index(w.year, w.week).unwrap())
            .collect();
        for (a, b) in weeks.iter().zip(&shifted_weeks) {
            assert_eq!(b.offset, a.offset + 52);
        }
        let cfg = FitConfig::default();
        let m_a = fit_trend(&weeks, &values, TrendModelId::M1_3, &cfg).unwrap();
        let m_b = fit_trend(&shifted_weeks, &values, TrendModelId::M1_3, &cfg).unwrap();
        assert!((m_b.t0 - (m_a.t0 + 52.0)).abs() < 1e-4, "{} vs {}", m_b.t0, m_a.t0);
        assert!((m_b.beta - m_a.beta).abs() < 1e-4 * m_a.beta);
        assert!((m_b.intercept - m_a.intercept).abs() < 1e-6);
        assert!((m_b.cosine_amp - m_a.cosine_amp).abs() < 1e-6);
        assert!((m_b.logistic_scale - m_a.logistic_scale).abs() < 1e-6);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, 0, 208);
        let values = vec![7.0; 208];
        assert!(fit_trend(&weeks, &values, TrendModelId::M1_1, &FitConfig::default()).is_err());
    }

    #[test]
    fn interval_nesting_and_noiseless_width() {
        let cal = WeekCalendar::default();
        let weeks = weeks_from(&cal, -29, 520);
        let truth = reference_model(weeks.clone());
        let values = trend_values(&truth, &weeks).unwrap();
        let m = fit_trend(&weeks, &values, TrendModelId::M1_3, &FitConfig::default()).unwrap();
        let ci = confidence_intervals(&m, 0.95).unwrap();
        for c in &ci {
            assert!((c.upper - c.lower).abs() < 1e-6, "{}: {:?}", c.name, c);
        }
        // noisy: 95% intervals contain 75% intervals
        let mut rng = StdRng::seed_from_u64(23);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let noisy: Vec<f64> = values.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let m = fit_trend(&weeks, &noisy, TrendModelId::M1_3, &FitConfig::default()).unwrap();
        let wide = confidence_intervals(&m, 0.95).unwrap();
        let narrow = confidence_intervals(&m, 0.75).unwrap();
        for (w, n) in wide.iter().zip(&narrow) {
            assert!(w.lower < n.lower && n.upper < w.upper, "{}", w.name);
        }
        assert!(confidence_intervals(&m, 0.0).is_err());
        assert!(confidence_intervals(&m, 1.0).is_err());
    }
}

