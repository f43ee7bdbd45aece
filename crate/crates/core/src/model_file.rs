//! The on-disk fit artifact. JSON keeps the file reviewable in diffs;
//! floats are written in shortest round-trip form, so a load-save cycle
//! and any forecast computed from a loaded file are bit-identical to the
//! in-memory originals.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pca::PcaDecomposition;
use crate::residual::{ResidualModel, MA_SIGN_CONVENTION};
use crate::series::SeriesKey;
use crate::trend::{FitConfig, TrendModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub input_path: String,
    pub input_sha256: String,
    pub created_utc: String,
    pub tool_version: String,
}

/// One line of the trend comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendSummary {
    pub model: String,
    pub r_squared: f64,
    pub aic: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub provenance: Provenance,
    /// Sign convention the stored MA coefficients follow.
    pub ma_sign_convention: String,
    pub anchor_year: i32,
    pub anchor_week: u32,
    pub series: Vec<SeriesKey>,
    pub pca: PcaDecomposition,
    pub trend: TrendModel,
    pub trend_comparison: Vec<TrendSummary>,
    /// How the trend model was chosen ("bic", "aic", or "forced:<id>").
    pub selection: String,
    pub pc1_residual: ResidualModel,
    /// Random walks for components 2..=n, in component order.
    pub other_walks: Vec<ResidualModel>,
    pub fit_config: FitConfig,
    /// Exposures of the last baseline week, the carry-forward default
    /// for forecasting.
    pub last_exposures: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, model)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let model: ModelFile = serde_json::from_reader(r)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if model.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: format version {} not supported (expected {FORMAT_VERSION})",
            path.display(),
            model.format_version
        )));
    }
    if model.ma_sign_convention != MA_SIGN_CONVENTION {
        return Err(Error::Data(format!(
            "{}: unknown MA sign convention {:?}",
            path.display(),
            model.ma_sign_convention
        )));
    }
    let n_series = model.series.len();
    if model.pca.n_series() != n_series {
        return Err(Error::Data(format!(
            "{}: decomposition covers {} series but {} keys are listed",
            path.display(),
            model.pca.n_series(),
            n_series
        )));
    }
    if model.last_exposures.len() != n_series {
        return Err(Error::Data(format!(
            "{}: {} carry-forward exposures for {} series",
            path.display(),
            model.last_exposures.len(),
            n_series
        )));
    }
    if 1 + model.other_walks.len() != model.pca.directions.ncols() {
        return Err(Error::Data(format!(
            "{}: {} residual models for {} components",
            path.display(),
            1 + model.other_walks.len(),
            model.pca.directions.ncols()
        )));
    }
    Ok(model)
}

/// How the trend model is picked from the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSelection {
    Bic,
    Aic,
    Forced(crate::trend::TrendModelId),
}

/// Full fit plus the trend comparison it was selected from.
#[derive(Debug)]
pub struct FitResult {
    pub model: ModelFile,
    pub comparison: crate::trend::ModelComparison,
}

/// The complete fitting pipeline on an already-sliced baseline panel:
/// logit transform, decomposition, trend comparison, SARIMA on the trend
/// residuals, and one random walk per remaining component. Provenance
/// input fields are left empty for the caller to fill.
pub fn fit_model_file(
    panel: &crate::panel::RatePanel,
    calendar: &crate::week::WeekCalendar,
    selection: ModelSelection,
    fit_config: &FitConfig,
) -> Result<FitResult> {
    use crate::residual::{fit_random_walk, fit_sarima, ResidualModel, SarimaSpec};

    let lp = crate::transform::logit_panel(panel)?;
    let pca = crate::pca::decompose(&lp)?;
    let pc1: Vec<f64> = pca.pc1().to_vec();
    let comparison = crate::trend::model_comparison(&panel.weeks, &pc1, fit_config)?;
    let (id, selection_tag) = match selection {
        ModelSelection::Bic => (comparison.bic_best, "bic".to_string()),
        ModelSelection::Aic => (comparison.aic_best, "aic".to_string()),
        ModelSelection::Forced(id) => (id, format!("forced:{}", id.label())),
    };
    let trend = comparison
        .models
        .iter()
        .find(|m| m.model_id == id)
        .expect("comparison covers all model ids")
        .clone();
    let pc1_residual = fit_sarima(&trend.residuals, &SarimaSpec::default())?;
    let mut other_walks = Vec::with_capacity(pca.directions.ncols() - 1);
    for k in 1..pca.directions.ncols() {
        let col: Vec<f64> = pca.scores.column(k).to_vec();
        // zero-variance components (rank-deficient panels) are held constant
        let walk = match fit_random_walk(&col) {
            Ok(w) => w,
            Err(_) => ResidualModel::random_walk_from_parts(
                0.0,
                0.0,
                *col.last().expect("non-empty scores"),
            )?,
        };
        other_walks.push(walk);
    }
    let trend_comparison = comparison
        .models
        .iter()
        .map(|m| TrendSummary {
            model: m.model_id.label().to_string(),
            r_squared: m.r_squared,
            aic: m.aic,
            bic: m.bic,
        })
        .collect();
    let model = ModelFile {
        format_version: FORMAT_VERSION,
        provenance: Provenance {
            input_path: String::new(),
            input_sha256: String::new(),
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        ma_sign_convention: MA_SIGN_CONVENTION.to_string(),
        anchor_year: calendar.anchor_year,
        anchor_week: calendar.anchor_week,
        series: panel.series.clone(),
        pca,
        trend,
        trend_comparison,
        selection: selection_tag,
        pc1_residual,
        other_walks,
        fit_config: fit_config.clone(),
        last_exposures: panel.exposures.row(panel.n_weeks() - 1).to_vec(),
    };
    Ok(FitResult { model, comparison })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::decompose;
    use crate::residual::{SarimaParts, SarimaSpec};
    use crate::series::{Sex, AGE_GROUPS};
    use crate::simulate::simulate_ensemble;
    use crate::transform::LogitPanel;
    use crate::trend::TrendModelId;
    use crate::week::WeekCalendar;
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    fn sample_model() -> ModelFile {
        let cal = WeekCalendar::default();
        let mut keys = Vec::new();
        for sex in [Sex::Female, Sex::Male] {
            for age in AGE_GROUPS {
                keys.push(SeriesKey::new("AAA", sex, age));
            }
        }
        keys.sort();
        let n_series = keys.len();
        let n_weeks = 200;
        let mut rng = StdRng::seed_from_u64(4);
        let values = Array2::from_shape_fn((n_weeks, n_series), |(w, s)| {
            -6.0 + 0.2 * s as f64 + 0.3 * (w as f64 / 9.0).sin() + rng.random_range(-0.05..0.05)
        });
        let lp = LogitPanel {
            weeks: (0..n_weeks as i64).map(|w| cal.from_offset(w)).collect(),
            series: keys.clone(),
            values,
        };
        let pca = decompose(&lp).unwrap();
        let trend = TrendModel {
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
            r_squared: 0.928,
            aic: 1358.0,
            bic: 1392.0,
            residuals: (0..n_weeks).map(|i| (i as f64 * 0.37).sin() * 0.3).collect(),
            baseline_weeks: lp.weeks.clone(),
            boundary_warning: false,
        };
        let pc1_residual = ResidualModel::from_parts(SarimaParts {
            spec: SarimaSpec::default(),
            ar: vec![],
            ma: vec![-0.26],
            seasonal_ar: vec![0.16],
            seasonal_ma: vec![],
            innovation_sd: 0.32,
            history_values: trend.residuals[n_weeks - 53..].to_vec(),
            history_innovations: vec![0.01],
        })
        .unwrap();
        let other_walks: Vec<ResidualModel> = (1..n_series)
            .map(|k| {
                ResidualModel::random_walk_from_parts(0.01 * k as f64 + 0.005, 0.0, 0.1).unwrap()
            })
            .collect();
        ModelFile {
            format_version: FORMAT_VERSION,
            provenance: Provenance {
                input_path: "panel.csv".into(),
                input_sha256: sha256_hex(b"example"),
                created_utc: "2026-01-05T12:00:00+00:00".into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
            },
            ma_sign_convention: MA_SIGN_CONVENTION.into(),
            anchor_year: 2000,
            anchor_week: 31,
            series: keys,
            pca,
            trend,
            trend_comparison: vec![
                TrendSummary { model: "1.1".into(), r_squared: 0.3, aic: 3707.0, bic: 3722.0 },
                TrendSummary { model: "1.3".into(), r_squared: 0.928, aic: 1358.0, bic: 1392.0 },
            ],
            selection: "bic".into(),
            pc1_residual,
            other_walks,
            fit_config: FitConfig::default(),
            last_exposures: vec![65536.0; n_series],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact_and_forecasts_agree() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = sample_model();
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(m.pca.column_means, back.pca.column_means);
        assert_eq!(m.pca.directions, back.pca.directions);
        assert_eq!(m.pca.scores, back.pca.scores);
        assert_eq!(m.trend.residuals, back.trend.residuals);
        assert_eq!(m.trend.beta.to_bits(), back.trend.beta.to_bits());
        assert_eq!(
            m.pc1_residual.innovation_sd.to_bits(),
            back.pc1_residual.innovation_sd.to_bits()
        );
        let expo = Array2::from_elem((6, m.series.len()), 65536.0);
        let e1 = simulate_ensemble(
            &m.pca,
            &m.trend,
            &m.pc1_residual,
            &m.other_walks,
            &expo,
            6,
            40,
            9,
        )
        .unwrap();
        let e2 = simulate_ensemble(
            &back.pca,
            &back.trend,
            &back.pc1_residual,
            &back.other_walks,
            &expo,
            6,
            40,
            9,
        )
        .unwrap();
        assert_eq!(
            e1.death_trajectories.as_slice().unwrap(),
            e2.death_trajectories.as_slice().unwrap()
        );
        // save-load-save produces identical bytes
        let path2 = dir.path().join("model2.json");
        save_model(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_validates_structure() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = sample_model();
        m.format_version = 99;
        save_model(&path, &m).unwrap();
        assert!(load_model(&path).is_err());
        let mut m2 = sample_model();
        m2.other_walks.pop();
        save_model(&path, &m2).unwrap();
        assert!(load_model(&path).is_err());
        let mut m3 = sample_model();
        m3.last_exposures.pop();
        save_model(&path, &m3).unwrap();
        assert!(load_model(&path).is_err());
        let mut m4 = sample_model();
        m4.ma_sign_convention = "other".into();
        save_model(&path, &m4).unwrap();
        assert!(load_model(&path).is_err());
        std::fs::write(&path, b"{not json").unwrap();
        assert!(load_model(&path).is_err());
        assert!(load_model(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn digest_matches_reference_vector() {
        // sha256 of the empty string and of "abc" are fixed constants
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
