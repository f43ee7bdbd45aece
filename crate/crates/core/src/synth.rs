//! Synthetic rate panels with known ground truth: a seasonal-trend plus
//! SARIMA index drives all series through a fixed loading direction,
//! optional orthogonal random-walk factors and idiosyncratic noise sit on
//! top, and an optional rate shock is injected multiplicatively.
//!
//! Everything is deterministic given the seed; stream indices are fixed
//! per noise source so configs that differ only in the shock reuse
//! identical draws.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::RatePanel;
use crate::residual::{simulate_path, ResidualModel, SarimaParts, SarimaSpec};
use crate::series::{Sex, SeriesKey, AGE_GROUPS};
use crate::transform::inverse_logit;
use crate::trend::{evaluate_trend, TrendModel, TrendModelId};
use crate::week::{WeekCalendar, WeekIndex};

/// Coefficients of the deterministic part of the latent index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendCoeffs {
    pub intercept: f64,
    pub cosine_amp: f64,
    pub logistic_scale: f64,
    pub t0: f64,
    pub beta: f64,
    pub spring: f64,
    pub summer: f64,
    pub autumn: f64,
}

impl TrendCoeffs {
    /// The reference parameter set used throughout the test suite.
    pub fn reference() -> Self {
        TrendCoeffs {
            intercept: 32.95,
            cosine_amp: 1.05,
            logistic_scale: 9.74,
            t0: 220.0,
            beta: 482.05,
            spring: 0.71,
            summer: 0.55,
            autumn: 0.5,
        }
    }

    pub fn to_model(&self) -> TrendModel {
        TrendModel {
            model_id: TrendModelId::M1_3,
            intercept: self.intercept,
            cosine_amp: self.cosine_amp,
            sine_amp: 0.0,
            logistic_scale: self.logistic_scale,
            t0: self.t0,
            beta: self.beta,
            spring: self.spring,
            summer: self.summer,
            autumn: self.autumn,
            r_squared: 1.0,
            aic: 0.0,
            bic: 0.0,
            residuals: Vec::new(),
            baseline_weeks: Vec::new(),
            boundary_warning: false,
        }
    }
}

/// Index-residual dynamics: seasonal AR, first-order MA, innovation sd.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SarimaCoeffs {
    pub seasonal_ar: f64,
    pub ma: f64,
    pub innovation_sd: f64,
}

impl SarimaCoeffs {
    pub fn reference() -> Self {
        SarimaCoeffs { seasonal_ar: 0.16, ma: -0.26, innovation_sd: 0.32 }
    }
}

/// Multiplicative rate shock across all series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShockSpec {
    pub start_year: i32,
    pub start_week: u32,
    pub n_weeks: usize,
    pub multiplier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub countries: Vec<String>,
    pub start_year: i32,
    pub start_week: u32,
    pub n_weeks: usize,
    /// Baseline logit level per age group (0-64, 65-74, 75-84, 85+),
    /// applied to females; males get `male_offset` on top.
    pub age_base_logit: [f64; 4],
    pub male_offset: f64,
    /// Per-country additive logit shift: country i gets i * country_spread.
    pub country_spread: f64,
    /// Person-weeks at risk per age group, constant over time.
    pub exposures: [f64; 4],
    pub trend: TrendCoeffs,
    pub sarima: SarimaCoeffs,
    /// Step sds of orthogonal random-walk factors (components 2, 3, ...).
    pub factor_sds: Vec<f64>,
    pub idio_sd: f64,
    pub shock: Option<ShockSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            countries: vec!["AAA".into(), "BBB".into()],
            start_year: 2000,
            start_week: 31,
            n_weeks: 520,
            age_base_logit: [-9.2, -6.6, -5.8, -4.5],
            male_offset: 0.35,
            country_spread: 0.1,
            exposures: [2.0e6, 3.0e5, 2.0e5, 8.0e4],
            trend: TrendCoeffs::reference(),
            sarima: SarimaCoeffs::reference(),
            factor_sds: vec![0.03],
            idio_sd: 0.01,
            shock: None,
        }
    }
}

/// Generator parameters and realized latent paths, written alongside the
/// panel so recovery tests can compare against the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub weeks: Vec<WeekIndex>,
    pub series_labels: Vec<String>,
    /// Latent index g(w) including its stochastic residual.
    pub index_path: Vec<f64>,
    /// Constant subtracted from the index before loading onto the series.
    pub index_centering: f64,
    /// Every index-loading entry equals -loading_scale.
    pub loading_scale: f64,
    pub factor_paths: Vec<Vec<f64>>,
    pub trend: TrendCoeffs,
    pub sarima: SarimaCoeffs,
    pub shock_weeks: Vec<WeekIndex>,
    pub shock_multiplier: f64,
}

fn validate_config(c: &SynthConfig) -> Result<()> {
    if c.countries.is_empty() {
        return Err(Error::Data("config needs at least one country".into()));
    }
    let mut sorted = c.countries.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != c.countries.len() {
        return Err(Error::Data("duplicate country in config".into()));
    }
    if c.n_weeks < 2 {
        return Err(Error::Data("config needs at least two weeks".into()));
    }
    if !(1..=52).contains(&c.start_week) {
        return Err(Error::Data(format!("start week {} outside 1..=52", c.start_week)));
    }
    if c.exposures.iter().any(|e| !e.is_finite() || *e <= 0.0) {
        return Err(Error::Data("exposures must be positive and finite".into()));
    }
    let n_series = c.countries.len() * 8;
    if c.factor_sds.len() > n_series - 1 {
        return Err(Error::Data(format!(
            "{} extra factors exceed the {} orthogonal directions available",
            c.factor_sds.len(),
            n_series - 1
        )));
    }
    if c.factor_sds.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Data("factor sds must be non-negative".into()));
    }
    if !(c.idio_sd >= 0.0 && c.idio_sd.is_finite()) {
        return Err(Error::Data("idiosyncratic sd must be non-negative".into()));
    }
    if let Some(s) = &c.shock {
        if s.n_weeks == 0 {
            return Err(Error::Data("shock must cover at least one week".into()));
        }
        if !(s.multiplier > 0.0 && s.multiplier.is_finite()) {
            return Err(Error::Data("shock multiplier must be positive".into()));
        }
    }
    Ok(())
}

/// Orthonormal cosine basis vector k over the series axis; orthogonal to
/// the constant vector for every k >= 1.
fn dct_direction(k: usize, n: usize) -> Vec<f64> {
    let norm = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|s| norm * (std::f64::consts::PI * k as f64 * (2 * s + 1) as f64 / (2 * n) as f64).cos())
        .collect()
}

/// Standard normal draw stream (mean 0, sd given) as a plain closure.
fn normal_draws(rng: &mut ChaCha12Rng, n: usize, sd: f64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, sd).expect("finite sd");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Deterministic synthetic panel plus its generating truth.
pub fn generate_synthetic_panel(config: &SynthConfig, seed: u64) -> Result<(RatePanel, SynthTruth)> {
    validate_config(config)?;
    let cal = WeekCalendar::default();
    let first = cal.week_index(config.start_year, config.start_week)?;
    let mut weeks = Vec::with_capacity(config.n_weeks);
    let mut w = first;
    for i in 0..config.n_weeks {
        if i > 0 {
            w = w.next();
        }
        weeks.push(w);
    }

    let mut countries = config.countries.clone();
    countries.sort();
    let mut series = Vec::with_capacity(countries.len() * 8);
    for c in &countries {
        for sex in [Sex::Female, Sex::Male] {
            for age in AGE_GROUPS {
                series.push(SeriesKey::new(c.clone(), sex, age));
            }
        }
    }
    series.sort();
    let n_series = series.len();

    // latent index: deterministic trend + SARIMA residual (stream 0)
    let trend_model = config.trend.to_model();
    let resid_model = ResidualModel::from_parts(SarimaParts {
        spec: SarimaSpec::default(),
        ar: Vec::new(),
        ma: vec![config.sarima.ma],
        seasonal_ar: vec![config.sarima.seasonal_ar],
        seasonal_ma: Vec::new(),
        innovation_sd: config.sarima.innovation_sd,
        history_values: vec![0.0; 53],
        history_innovations: vec![0.0],
    })?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let alpha = simulate_path(&resid_model, config.n_weeks, &mut rng);
    let mut index_path = Vec::with_capacity(config.n_weeks);
    for (i, wk) in weeks.iter().enumerate() {
        index_path.push(evaluate_trend(&trend_model, wk)? + alpha[i]);
    }
    let index_centering = config.trend.intercept + 0.5 * config.trend.logistic_scale;
    let loading_scale = 1.0 / (n_series as f64).sqrt();

    // orthogonal random-walk factors (streams 1..=K)
    let mut factor_paths = Vec::with_capacity(config.factor_sds.len());
    for (k, sd) in config.factor_sds.iter().enumerate() {
        let mut frng = ChaCha12Rng::seed_from_u64(seed);
        frng.set_stream((k + 1) as u64);
        let steps = normal_draws(&mut frng, config.n_weeks, *sd);
        let mut path = Vec::with_capacity(config.n_weeks);
        let mut acc = 0.0;
        for s in steps {
            acc += s;
            path.push(acc);
        }
        factor_paths.push(path);
    }
    let directions: Vec<Vec<f64>> =
        (1..=config.factor_sds.len()).map(|k| dct_direction(k, n_series)).collect();

    // idiosyncratic noise (stream 900), row-major
    let mut irng = ChaCha12Rng::seed_from_u64(seed);
    irng.set_stream(900);
    let idio = normal_draws(&mut irng, config.n_weeks * n_series, config.idio_sd);

    let shock_weeks: Vec<WeekIndex> = match &config.shock {
        None => Vec::new(),
        Some(s) => {
            let start = cal.week_index(s.start_year, s.start_week)?;
            let mut sw = Vec::with_capacity(s.n_weeks);
            let mut cur = start;
            for i in 0..s.n_weeks {
                if i > 0 {
                    cur = cur.next();
                }
                sw.push(cur);
            }
            sw
        }
    };
    let shock_multiplier = config.shock.as_ref().map(|s| s.multiplier).unwrap_or(1.0);
    let shock_offsets: std::collections::BTreeSet<i64> =
        shock_weeks.iter().map(|w| w.offset).collect();

    let mut rates = Array2::zeros((config.n_weeks, n_series));
    let mut exposures = Array2::zeros((config.n_weeks, n_series));
    let mut deaths = Array2::zeros((config.n_weeks, n_series));
    for (si, key) in series.iter().enumerate() {
        let country_idx = countries.iter().position(|c| c == &key.country).expect("known");
        let age_idx = AGE_GROUPS.iter().position(|a| *a == key.age_group).expect("known");
        let base = config.age_base_logit[age_idx]
            + if key.sex == Sex::Male { config.male_offset } else { 0.0 }
            + country_idx as f64 * config.country_spread;
        for (wi, wk) in weeks.iter().enumerate() {
            let mut x = base - loading_scale * (index_path[wi] - index_centering);
            for (f, d) in factor_paths.iter().zip(&directions) {
                x += d[si] * f[wi];
            }
            x += idio[wi * n_series + si];
            let mut r = inverse_logit(x)?;
            if shock_offsets.contains(&wk.offset) {
                r *= shock_multiplier;
                if r >= 1.0 {
                    return Err(Error::Data(format!(
                        "shock multiplier {shock_multiplier} pushes a rate to {r} >= 1",
                    )));
                }
            }
            let e = config.exposures[age_idx];
            rates[(wi, si)] = r;
            exposures[(wi, si)] = e;
            deaths[(wi, si)] = r * e;
        }
    }

    let panel = RatePanel::new(weeks.clone(), series.clone(), rates, exposures, Some(deaths))?;
    let truth = SynthTruth {
        seed,
        weeks,
        series_labels: series.iter().map(|s| s.label()).collect(),
        index_path,
        index_centering,
        loading_scale,
        factor_paths,
        trend: config.trend.clone(),
        sarima: config.sarima.clone(),
        shock_weeks,
        shock_multiplier,
    };
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::decompose;
    use crate::transform::{logit, logit_panel};

    fn quiet_config() -> SynthConfig {
        SynthConfig {
            sarima: SarimaCoeffs { innovation_sd: 0.0, ..SarimaCoeffs::reference() },
            factor_sds: vec![],
            idio_sd: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_generator_matches_closed_form() {
        let config = quiet_config();
        let (panel, truth) = generate_synthetic_panel(&config, 5).unwrap();
        let model = config.trend.to_model();
        let scale = 1.0 / (panel.series.len() as f64).sqrt();
        for (wi, wk) in panel.weeks.iter().enumerate() {
            let g = evaluate_trend(&model, wk).unwrap();
            assert!((truth.index_path[wi] - g).abs() < 1e-12);
            for (si, key) in panel.series.iter().enumerate() {
                let age_idx = AGE_GROUPS.iter().position(|a| *a == key.age_group).unwrap();
                let country_idx =
                    config.countries.iter().position(|c| *c == key.country).unwrap();
                let x = config.age_base_logit[age_idx]
                    + if key.sex == Sex::Male { config.male_offset } else { 0.0 }
                    + country_idx as f64 * config.country_spread
                    - scale * (g - truth.index_centering);
                let want = inverse_logit(x).unwrap();
                assert!(
                    (panel.rates[(wi, si)] - want).abs() <= 1e-15 * want,
                    "week {wi} series {si}"
                );
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_panels() {
        let config = SynthConfig::default();
        let (a, ta) = generate_synthetic_panel(&config, 77).unwrap();
        let (b, tb) = generate_synthetic_panel(&config, 77).unwrap();
        assert_eq!(a.rates, b.rates);
        assert_eq!(a.deaths, b.deaths);
        assert_eq!(ta.index_path, tb.index_path);
        let (c, _) = generate_synthetic_panel(&config, 78).unwrap();
        assert_ne!(a.rates, c.rates);
    }

    #[test]
    fn shock_scales_rates_exactly() {
        let mut config = SynthConfig::default();
        let (base, _) = generate_synthetic_panel(&config, 9).unwrap();
        config.shock = Some(ShockSpec {
            start_year: 2005,
            start_week: 10,
            n_weeks: 4,
            multiplier: 1.2,
        });
        let (shocked, truth) = generate_synthetic_panel(&config, 9).unwrap();
        assert_eq!(truth.shock_weeks.len(), 4);
        assert_eq!(truth.shock_weeks[0].year, 2005);
        assert_eq!(truth.shock_weeks[0].week, 10);
        let offsets: Vec<i64> = truth.shock_weeks.iter().map(|w| w.offset).collect();
        for (wi, wk) in base.weeks.iter().enumerate() {
            for si in 0..base.series.len() {
                let b = base.rates[(wi, si)];
                let s = shocked.rates[(wi, si)];
                if offsets.contains(&wk.offset) {
                    assert_eq!(s, b * 1.2);
                } else {
                    assert_eq!(s, b);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig { countries: vec![], ..SynthConfig::default() };
        assert!(generate_synthetic_panel(&c, 1).is_err());
        c = SynthConfig { n_weeks: 1, ..SynthConfig::default() };
        assert!(generate_synthetic_panel(&c, 1).is_err());
        c = SynthConfig { start_week: 53, ..SynthConfig::default() };
        assert!(generate_synthetic_panel(&c, 1).is_err());
        c = SynthConfig { exposures: [1.0, 1.0, 0.0, 1.0], ..SynthConfig::default() };
        assert!(generate_synthetic_panel(&c, 1).is_err());
        c = SynthConfig { factor_sds: vec![0.1; 16], ..SynthConfig::default() };
        assert!(generate_synthetic_panel(&c, 1).is_err());
        c = SynthConfig {
            countries: vec!["AAA".into(), "AAA".into()],
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_panel(&c, 1).is_err());
        // shock pushing a rate past 1
        c = SynthConfig {
            age_base_logit: [3.0, 3.0, 3.0, 3.0],
            shock: Some(ShockSpec {
                start_year: 2005,
                start_week: 1,
                n_weeks: 1,
                multiplier: 1.5,
            }),
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_panel(&c, 1).is_err());
    }

    #[test]
    fn pc1_scores_recover_centered_index() {
        // tiny factor and no idio noise: PC1 is the index direction
        let config = SynthConfig {
            factor_sds: vec![0.02],
            idio_sd: 0.0,
            ..SynthConfig::default()
        };
        let (panel, truth) = generate_synthetic_panel(&config, 21).unwrap();
        let lp = logit_panel(&panel).unwrap();
        let d = decompose(&lp).unwrap();
        let g_mean = truth.index_path.iter().sum::<f64>() / truth.index_path.len() as f64;
        let pc1 = d.pc1();
        for (wi, g) in truth.index_path.iter().enumerate() {
            assert!(
                (pc1[wi] - (g - g_mean)).abs() < 0.05,
                "week {wi}: {} vs {}",
                pc1[wi],
                g - g_mean
            );
        }
    }

    #[test]
    fn truth_serializes_and_panel_logits_are_finite() {
        let (panel, truth) = generate_synthetic_panel(&SynthConfig::default(), 3).unwrap();
        let text = serde_json::to_string(&truth).unwrap();
        let back: SynthTruth = serde_json::from_str(&text).unwrap();
        assert_eq!(back.index_path, truth.index_path);
        assert_eq!(back.shock_multiplier, 1.0);
        for r in panel.rates.iter() {
            assert!(logit(*r).unwrap().is_finite());
        }
    }
}
