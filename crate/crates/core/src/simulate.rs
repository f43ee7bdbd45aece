//! Monte Carlo assembly of the stochastic forecast: component-score
//! trajectories, retransformation to rates and death counts, and
//! empirical prediction intervals.
//!
//! Trajectory j draws component k from an independent ChaCha stream with
//! index j * n_components + k, so results are bit-identical for any
//! worker-thread count and any n_sims prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::pca::{reconstruct, PcaDecomposition};
use crate::residual::{forecast_mean, forecast_variance, simulate_path, ResidualModel};
use crate::transform::inverse_logit;
use crate::trend::{trend_values, TrendModel};
use crate::week::WeekIndex;

/// Largest representable rate below 1; simulated rates are clamped into
/// [f64::MIN_POSITIVE, MAX_RATE] because the inverse logit saturates in
/// double precision beyond |x| ~ 37.
const MAX_RATE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone)]
pub struct ForecastEnsemble {
    pub horizon_weeks: Vec<WeekIndex>,
    pub n_sims: usize,
    /// n_sims x horizon x n_components
    pub score_trajectories: Array3<f64>,
    /// n_sims x horizon x n_series, strictly inside (0,1)
    pub rate_trajectories: Array3<f64>,
    /// n_sims x horizon x n_series
    pub death_trajectories: Array3<f64>,
    pub seed: u64,
    /// horizon x n_series
    pub exposures_used: Array2<f64>,
}

impl ForecastEnsemble {
    pub fn horizon(&self) -> usize {
        self.horizon_weeks.len()
    }

    pub fn n_series(&self) -> usize {
        self.exposures_used.ncols()
    }
}

/// The `horizon` calendar weeks following the trend's baseline.
pub fn horizon_weeks(trend: &TrendModel, horizon: usize) -> Result<Vec<WeekIndex>> {
    let last = trend
        .baseline_weeks
        .last()
        .ok_or_else(|| Error::Data("trend model has no baseline weeks".into()))?;
    let mut w = *last;
    Ok((0..horizon)
        .map(|_| {
            w = w.next();
            w
        })
        .collect())
}

/// Simulates `n_sims` trajectories of all component scores, reconstructs
/// logit rates, and converts to death counts against the supplied
/// exposures (horizon x n_series).
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    pca: &PcaDecomposition,
    pc1_trend: &TrendModel,
    pc1_residual: &ResidualModel,
    other_walks: &[ResidualModel],
    exposures: &Array2<f64>,
    horizon: usize,
    n_sims: usize,
    seed: u64,
) -> Result<ForecastEnsemble> {
    if horizon == 0 {
        return Err(Error::Data("forecast horizon must be positive".into()));
    }
    if n_sims == 0 {
        return Err(Error::Data("n_sims must be at least 1".into()));
    }
    let n_comp = pca.directions.ncols();
    let n_series = pca.n_series();
    if 1 + other_walks.len() != n_comp {
        return Err(Error::Data(format!(
            "decomposition has {n_comp} components but {} residual models were supplied",
            1 + other_walks.len()
        )));
    }
    if exposures.dim() != (horizon, n_series) {
        return Err(Error::Data(format!(
            "exposures shape {:?} does not match horizon x series ({horizon}, {n_series})",
            exposures.dim()
        )));
    }
    if exposures.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Data("exposures must be finite and non-negative".into()));
    }
    let weeks = horizon_weeks(pc1_trend, horizon)?;
    let trend_path = trend_values(pc1_trend, &weeks)?;

    let mut scores = Array3::zeros((n_sims, horizon, n_comp));
    let mut rates = Array3::zeros((n_sims, horizon, n_series));
    let mut deaths = Array3::zeros((n_sims, horizon, n_series));
    {
        let sc = scores.as_slice_mut().expect("standard layout");
        let rc = rates.as_slice_mut().expect("standard layout");
        let dc = deaths.as_slice_mut().expect("standard layout");
        sc.par_chunks_mut(horizon * n_comp)
            .zip(rc.par_chunks_mut(horizon * n_series))
            .zip(dc.par_chunks_mut(horizon * n_series))
            .enumerate()
            .try_for_each(|(j, ((s_chunk, r_chunk), d_chunk))| -> Result<()> {
                let mut traj = Array2::zeros((horizon, n_comp));
                for k in 0..n_comp {
                    let mut rng = ChaCha12Rng::seed_from_u64(seed);
                    rng.set_stream((j * n_comp + k) as u64);
                    let path = if k == 0 {
                        simulate_path(pc1_residual, horizon, &mut rng)
                    } else {
                        simulate_path(&other_walks[k - 1], horizon, &mut rng)
                    };
                    for t in 0..horizon {
                        traj[(t, k)] =
                            if k == 0 { trend_path[t] + path[t] } else { path[t] };
                    }
                }
                // owned fixed-shape product keeps the reconstruction
                // bit-identical regardless of scheduling
                let logit_rows = reconstruct(pca, traj.view())?;
                for t in 0..horizon {
                    for s in 0..n_series {
                        let r = inverse_logit(logit_rows[(t, s)])?
                            .clamp(f64::MIN_POSITIVE, MAX_RATE);
                        r_chunk[t * n_series + s] = r;
                        d_chunk[t * n_series + s] = r * exposures[(t, s)];
                    }
                }
                s_chunk.copy_from_slice(traj.as_slice().expect("standard layout"));
                Ok(())
            })?;
    }
    Ok(ForecastEnsemble {
        horizon_weeks: weeks,
        n_sims,
        score_trajectories: scores,
        rate_trajectories: rates,
        death_trajectories: deaths,
        seed,
        exposures_used: exposures.clone(),
    })
}

/// Empirical quantiles of death counts per (week, series, level).
#[derive(Debug, Clone)]
pub struct QuantileSummary {
    pub levels: Vec<f64>,
    /// horizon x n_series x n_levels
    pub values: Array3<f64>,
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Data("at least one quantile level is required".into()));
    }
    for l in levels {
        if !(*l > 0.0 && *l < 1.0) {
            return Err(Error::Data(format!("quantile level {l} outside (0,1)")));
        }
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Linear interpolation between order statistics (the common "type 7"
/// rule); `sorted` must be ascending.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Per-(week, series) death-count quantiles. Quantiles are exact order
/// statistics of the ensemble; small ensembles are allowed but only
/// n_sims well above 1/min(level, 1-level) gives meaningful tails.
pub fn prediction_intervals(e: &ForecastEnsemble, levels: &[f64]) -> Result<QuantileSummary> {
    validate_levels(levels)?;
    let (n_sims, horizon, n_series) = e.death_trajectories.dim();
    let n_levels = levels.len();
    let mut values = Array3::zeros((horizon, n_series, n_levels));
    let death = &e.death_trajectories;
    values
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n_series * n_levels)
        .enumerate()
        .for_each(|(t, chunk)| {
            let mut buf = vec![0.0; n_sims];
            for s in 0..n_series {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = death[(j, t, s)];
                }
                buf.sort_unstable_by(f64::total_cmp);
                for (li, p) in levels.iter().enumerate() {
                    chunk[s * n_levels + li] = quantile_type7(&buf, *p);
                }
            }
        });
    Ok(QuantileSummary { levels: levels.to_vec(), values })
}

/// Quantiles of a series aggregate: trajectories are summed over the
/// given series per trajectory first, so cross-series correlation flows
/// through the shared component draws. Returns horizon x n_levels.
pub fn group_death_quantiles(
    e: &ForecastEnsemble,
    series_indices: &[usize],
    levels: &[f64],
) -> Result<Array2<f64>> {
    validate_levels(levels)?;
    let (n_sims, horizon, n_series) = e.death_trajectories.dim();
    if series_indices.is_empty() {
        return Err(Error::Data("series aggregate must not be empty".into()));
    }
    let mut seen = vec![false; n_series];
    for &s in series_indices {
        if s >= n_series {
            return Err(Error::Data(format!(
                "series index {s} out of range for {n_series} series"
            )));
        }
        if seen[s] {
            return Err(Error::Data(format!("series index {s} appears twice in aggregate")));
        }
        seen[s] = true;
    }
    let death = &e.death_trajectories;
    let mut out = Array2::zeros((horizon, levels.len()));
    let mut buf = vec![0.0; n_sims];
    for t in 0..horizon {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = series_indices.iter().map(|&s| death[(j, t, s)]).sum();
        }
        buf.sort_unstable_by(f64::total_cmp);
        for (li, p) in levels.iter().enumerate() {
            out[(t, li)] = quantile_type7(&buf, *p);
        }
    }
    Ok(out)
}

/// Closed-form Gaussian band for the index itself.
#[derive(Debug, Clone)]
pub struct Pc1Band {
    pub weeks: Vec<WeekIndex>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// median = trend + forecast mean; bounds at +- z_{(1+level)/2} forecast
/// standard deviations. `level` may be 0, collapsing all three curves.
pub fn theoretical_pc1_interval(
    trend: &TrendModel,
    residual: &ResidualModel,
    horizon: usize,
    level: f64,
) -> Result<Pc1Band> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Data(format!("interval level {level} outside [0,1)")));
    }
    let weeks = horizon_weeks(trend, horizon)?;
    let trend_path = trend_values(trend, &weeks)?;
    let mean = forecast_mean(residual, horizon)?;
    let var = forecast_variance(residual, horizon)?;
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let median: Vec<f64> = trend_path.iter().zip(&mean).map(|(a, b)| a + b).collect();
    let half: Vec<f64> = var.iter().map(|v| z * v.sqrt()).collect();
    Ok(Pc1Band {
        weeks,
        lower: median.iter().zip(&half).map(|(m, h)| m - h).collect(),
        median: median.clone(),
        upper: median.iter().zip(&half).map(|(m, h)| m + h).collect(),
    })
}

/// Elementwise rates x exposures; real-valued, not rounded.
pub fn deaths_from_rates(
    rates: ArrayView2<f64>,
    exposures: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if rates.dim() != exposures.dim() {
        return Err(Error::Data(format!(
            "rates shape {:?} does not match exposures shape {:?}",
            rates.dim(),
            exposures.dim()
        )));
    }
    if exposures.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Data("exposures must be finite and non-negative".into()));
    }
    Ok(&rates * &exposures)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".shape.txt");
    path.with_file_name(name)
}

/// Writes a trajectory tensor as flat row-major little-endian f64 with a
/// text sidecar (`<file>.shape.txt`) recording the dimensions.
pub fn write_tensor_binary(
    path: &Path,
    tensor: &Array3<f64>,
    axis_names: [&str; 3],
) -> Result<()> {
    let (a, b, c) = tensor.dim();
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let owned;
    let slice = match tensor.as_slice() {
        Some(s) => s,
        None => {
            owned = tensor.as_standard_layout().into_owned();
            owned.as_slice().expect("standard layout")
        }
    };
    for v in slice {
        file.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let text = format!(
        "shape: {a} {b} {c}\naxes: {} {} {}\ndtype: f64 little-endian\norder: row-major\n",
        axis_names[0], axis_names[1], axis_names[2]
    );
    std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

/// Reads a tensor written by `write_tensor_binary`, using the sidecar
/// for the shape.
pub fn read_tensor_binary(path: &Path) -> Result<Array3<f64>> {
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let shape_line = text
        .lines()
        .find_map(|l| l.strip_prefix("shape:"))
        .ok_or_else(|| Error::Data(format!("{}: missing shape line", sidecar.display())))?;
    let dims: Vec<usize> = shape_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Data(format!("bad dimension {t} in {}", sidecar.display())))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Data(format!(
            "{}: expected 3 dimensions, found {}",
            sidecar.display(),
            dims.len()
        )));
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != n * 8 {
        return Err(Error::Data(format!(
            "{}: expected {} bytes for shape {dims:?}, found {}",
            path.display(),
            n * 8,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
        .map_err(|e| Error::Data(format!("tensor shape: {e}")))
}

/// Per-week mean of one score component across the ensemble.
pub fn ensemble_component_mean(e: &ForecastEnsemble, component: usize) -> Result<Array1<f64>> {
    let (n_sims, horizon, n_comp) = e.score_trajectories.dim();
    if component >= n_comp {
        return Err(Error::Data(format!(
            "component {component} out of range for {n_comp} components"
        )));
    }
    let mut out = Array1::zeros(horizon);
    for t in 0..horizon {
        let mut acc = 0.0;
        for j in 0..n_sims {
            acc += e.score_trajectories[(j, t, component)];
        }
        out[t] = acc / n_sims as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::{SarimaParts, SarimaSpec};
    use crate::trend::TrendModelId;
    use crate::week::WeekCalendar;
    use ndarray::{arr2, Array1};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    /// Tiny orthonormal full-basis decomposition over 3 series.
    fn toy_pca() -> PcaDecomposition {
        let r = 0.5f64.sqrt();
        PcaDecomposition {
            column_means: Array1::from(vec![-6.0, -5.5, -5.0]),
            directions: arr2(&[[r, r, 0.0], [r, -r, 0.0], [0.0, 0.0, 1.0]]),
            scores: Array2::zeros((10, 3)),
            singular_values: Array1::from(vec![3.0, 1.0, 0.5]),
            explained_variance_shares: Array1::from(vec![0.8, 0.15, 0.05]),
        }
    }

    fn flat_trend(level: f64, n_baseline: usize) -> TrendModel {
        let cal = WeekCalendar::default();
        TrendModel {
            model_id: TrendModelId::M1_1,
            intercept: level,
            cosine_amp: 0.0,
            sine_amp: 0.0,
            logistic_scale: 0.0,
            t0: 0.0,
            beta: 1.0,
            spring: 0.0,
            summer: 0.0,
            autumn: 0.0,
            r_squared: 1.0,
            aic: 0.0,
            bic: 0.0,
            residuals: vec![0.0; n_baseline],
            baseline_weeks: (0..n_baseline as i64).map(|w| cal.from_offset(w)).collect(),
            boundary_warning: false,
        }
    }

    fn paper_residual(sd: f64) -> ResidualModel {
        ResidualModel::from_parts(SarimaParts {
            spec: SarimaSpec::default(),
            ar: vec![],
            ma: vec![-0.26],
            seasonal_ar: vec![0.16],
            seasonal_ma: vec![],
            innovation_sd: sd,
            history_values: vec![0.0; 53],
            history_innovations: vec![0.0],
        })
        .unwrap()
    }

    fn toy_ensemble_args() -> (PcaDecomposition, TrendModel, ResidualModel, Vec<ResidualModel>) {
        let pca = toy_pca();
        let trend = flat_trend(0.4, 160);
        let resid = paper_residual(0.32);
        let walks = vec![
            ResidualModel::random_walk_from_parts(0.1, 0.0, 0.2).unwrap(),
            ResidualModel::random_walk_from_parts(0.05, 0.0, -0.1).unwrap(),
        ];
        (pca, trend, resid, walks)
    }

    #[test]
    fn degenerate_sds_collapse_to_deterministic_path() {
        let (pca, trend, _, _) = toy_ensemble_args();
        let resid = paper_residual(0.0);
        let walks = vec![
            ResidualModel::random_walk_from_parts(0.0, 0.0, 0.2).unwrap(),
            ResidualModel::random_walk_from_parts(0.0, 0.0, -0.1).unwrap(),
        ];
        let horizon = 8;
        let expo = Array2::from_elem((horizon, 3), 1.0e4);
        let e = simulate_ensemble(&pca, &trend, &resid, &walks, &expo, horizon, 5, 99).unwrap();
        // every trajectory identical
        for j in 1..5 {
            for t in 0..horizon {
                for s in 0..3 {
                    assert_eq!(
                        e.rate_trajectories[(j, t, s)],
                        e.rate_trajectories[(0, t, s)]
                    );
                }
            }
        }
        // and equal to the deterministic reconstruction
        let weeks = horizon_weeks(&trend, horizon).unwrap();
        let tvals = trend_values(&trend, &weeks).unwrap();
        let mut det = Array2::zeros((horizon, 3));
        for t in 0..horizon {
            det[(t, 0)] = tvals[t];
            det[(t, 1)] = 0.2;
            det[(t, 2)] = -0.1;
        }
        let logits = reconstruct(&pca, det.view()).unwrap();
        for t in 0..horizon {
            for s in 0..3 {
                let want = inverse_logit(logits[(t, s)]).unwrap();
                assert!((e.rate_trajectories[(0, t, s)] - want).abs() < 1e-15);
                assert!(
                    (e.death_trajectories[(0, t, s)] - want * 1.0e4).abs() < 1e-10
                );
            }
        }
    }

    #[test]
    fn first_trajectory_independent_of_n_sims() {
        let (pca, trend, resid, walks) = toy_ensemble_args();
        let expo = Array2::from_elem((12, 3), 5.0e3);
        let a = simulate_ensemble(&pca, &trend, &resid, &walks, &expo, 12, 1, 7).unwrap();
        let b = simulate_ensemble(&pca, &trend, &resid, &walks, &expo, 12, 100, 7).unwrap();
        for t in 0..12 {
            for s in 0..3 {
                assert_eq!(
                    a.death_trajectories[(0, t, s)],
                    b.death_trajectories[(0, t, s)]
                );
            }
            for k in 0..3 {
                assert_eq!(a.score_trajectories[(0, t, k)], b.score_trajectories[(0, t, k)]);
            }
        }
    }

    #[test]
    fn byte_identical_across_thread_counts() {
        let (pca, trend, resid, walks) = toy_ensemble_args();
        let expo = Array2::from_elem((10, 3), 2.0e4);
        let run = |threads: usize| {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                simulate_ensemble(&pca, &trend, &resid, &walks, &expo, 10, 64, 31).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(
            a.death_trajectories.as_slice().unwrap(),
            b.death_trajectories.as_slice().unwrap()
        );
        assert_eq!(
            a.rate_trajectories.as_slice().unwrap(),
            b.rate_trajectories.as_slice().unwrap()
        );
    }

    #[test]
    fn validation_errors() {
        let (pca, trend, resid, walks) = toy_ensemble_args();
        let expo = Array2::from_elem((10, 3), 1.0e4);
        // component mismatch
        assert!(simulate_ensemble(&pca, &trend, &resid, &[], &expo, 10, 4, 1).is_err());
        // wrong exposure shape
        let bad = Array2::from_elem((9, 3), 1.0e4);
        assert!(simulate_ensemble(&pca, &trend, &resid, &walks, &bad, 10, 4, 1).is_err());
        // negative exposure
        let mut neg = expo.clone();
        neg[(0, 0)] = -1.0;
        assert!(simulate_ensemble(&pca, &trend, &resid, &walks, &neg, 10, 4, 1).is_err());
        // zero horizon / zero sims
        assert!(simulate_ensemble(&pca, &trend, &resid, &walks, &expo, 0, 4, 1).is_err());
        assert!(simulate_ensemble(&pca, &trend, &resid, &walks, &expo, 10, 0, 1).is_err());
    }

    fn scalar_ensemble(values: Vec<f64>) -> ForecastEnsemble {
        let n = values.len();
        let cal = WeekCalendar::default();
        ForecastEnsemble {
            horizon_weeks: vec![cal.from_offset(0)],
            n_sims: n,
            score_trajectories: Array3::zeros((n, 1, 1)),
            rate_trajectories: Array3::from_elem((n, 1, 1), 0.5),
            death_trajectories: Array3::from_shape_vec((n, 1, 1), values).unwrap(),
            seed: 0,
            exposures_used: Array2::from_elem((1, 1), 1.0),
        }
    }

    #[test]
    fn median_of_1_to_101_is_51() {
        let e = scalar_ensemble((1..=101).map(|v| v as f64).collect());
        let q = prediction_intervals(&e, &[0.5]).unwrap();
        assert_eq!(q.values[(0, 0, 0)], 51.0);
    }

    #[test]
    fn quantiles_monotone_in_level() {
        let mut rng = StdRng::seed_from_u64(8);
        let e = scalar_ensemble((0..500).map(|_| rng.random_range(0.0..100.0)).collect());
        let levels = [0.025, 0.125, 0.5, 0.875, 0.975];
        let q = prediction_intervals(&e, &levels).unwrap();
        for li in 1..levels.len() {
            assert!(q.values[(0, 0, li)] >= q.values[(0, 0, li - 1)]);
        }
    }

    #[test]
    fn degenerate_ensemble_quantiles_equal_path() {
        let e = scalar_ensemble(vec![42.5; 20]);
        let q = prediction_intervals(&e, &[0.025, 0.5, 0.975]).unwrap();
        for li in 0..3 {
            assert_eq!(q.values[(0, 0, li)], 42.5);
        }
    }

    #[test]
    fn level_validation() {
        let e = scalar_ensemble(vec![1.0, 2.0, 3.0]);
        assert!(prediction_intervals(&e, &[0.0]).is_err());
        assert!(prediction_intervals(&e, &[1.0]).is_err());
        assert!(prediction_intervals(&e, &[0.5, 0.5]).is_err());
        assert!(prediction_intervals(&e, &[0.9, 0.1]).is_err());
        assert!(prediction_intervals(&e, &[]).is_err());
    }

    #[test]
    fn aggregate_quantile_differs_from_sum_of_quantiles() {
        // two anticomonotone series: the sum is constant
        let cal = WeekCalendar::default();
        let deaths = Array3::from_shape_vec(
            (3, 1, 2),
            vec![0.0, 10.0, 5.0, 5.0, 10.0, 0.0],
        )
        .unwrap();
        let e = ForecastEnsemble {
            horizon_weeks: vec![cal.from_offset(0)],
            n_sims: 3,
            score_trajectories: Array3::zeros((3, 1, 1)),
            rate_trajectories: Array3::from_elem((3, 1, 2), 0.5),
            death_trajectories: deaths,
            seed: 0,
            exposures_used: Array2::from_elem((1, 2), 1.0),
        };
        let q = prediction_intervals(&e, &[0.975]).unwrap();
        let sum_of_q = q.values[(0, 0, 0)] + q.values[(0, 1, 0)];
        let agg = group_death_quantiles(&e, &[0, 1], &[0.975]).unwrap();
        assert_eq!(agg[(0, 0)], 10.0); // constant sum
        assert!((sum_of_q - 19.5).abs() < 1e-12);
        assert!((agg[(0, 0)] - sum_of_q).abs() > 5.0);
        // aggregate index validation
        assert!(group_death_quantiles(&e, &[], &[0.5]).is_err());
        assert!(group_death_quantiles(&e, &[0, 0], &[0.5]).is_err());
        assert!(group_death_quantiles(&e, &[7], &[0.5]).is_err());
    }

    #[test]
    fn ensemble_pc1_mean_tracks_forecast_mean() {
        let (pca, trend, resid, walks) = toy_ensemble_args();
        let horizon = 20;
        let expo = Array2::from_elem((horizon, 3), 1.0e4);
        let n_sims = 10_000;
        let e =
            simulate_ensemble(&pca, &trend, &resid, &walks, &expo, horizon, n_sims, 5).unwrap();
        let weeks = horizon_weeks(&trend, horizon).unwrap();
        let want: Vec<f64> = trend_values(&trend, &weeks)
            .unwrap()
            .iter()
            .zip(forecast_mean(&resid, horizon).unwrap())
            .map(|(a, b)| a + b)
            .collect();
        let var = forecast_variance(&resid, horizon).unwrap();
        let got = ensemble_component_mean(&e, 0).unwrap();
        for t in 0..horizon {
            let se = (var[t] / n_sims as f64).sqrt();
            assert!(
                (got[t] - want[t]).abs() <= 3.0 * se,
                "week {t}: {} vs {} (se {se})",
                got[t],
                want[t]
            );
        }
    }

    #[test]
    fn aggregate_band_width_grows() {
        let (pca, trend, resid, walks) = toy_ensemble_args();
        let horizon = 30;
        let expo = Array2::from_elem((horizon, 3), 1.0e4);
        let e = simulate_ensemble(&pca, &trend, &resid, &walks, &expo, horizon, 2000, 12)
            .unwrap();
        let q = group_death_quantiles(&e, &[0, 1, 2], &[0.025, 0.975]).unwrap();
        let width = |t: usize| q[(t, 1)] - q[(t, 0)];
        let mut first: Vec<f64> = (0..4).map(width).collect();
        let mut last: Vec<f64> = (horizon - 4..horizon).map(width).collect();
        first.sort_unstable_by(f64::total_cmp);
        last.sort_unstable_by(f64::total_cmp);
        let med = |v: &[f64]| 0.5 * (v[1] + v[2]);
        assert!(med(&last) >= med(&first), "{} vs {}", med(&last), med(&first));
    }

    #[test]
    fn rates_strictly_inside_unit_interval() {
        // extreme trend pushes logits far positive: rates must clamp
        let (pca, _, _, walks) = toy_ensemble_args();
        let trend = flat_trend(80.0, 160);
        let resid = paper_residual(0.32);
        let expo = Array2::from_elem((5, 3), 1.0e4);
        let e = simulate_ensemble(&pca, &trend, &resid, &walks, &expo, 5, 20, 4).unwrap();
        for r in e.rate_trajectories.iter() {
            assert!(*r > 0.0 && *r < 1.0);
        }
    }

    #[test]
    fn theoretical_band_examples() {
        let trend = flat_trend(33.0, 160);
        let resid = paper_residual(0.32);
        // level 0: all three curves coincide
        let b0 = theoretical_pc1_interval(&trend, &resid, 10, 0.0).unwrap();
        for t in 0..10 {
            assert_eq!(b0.lower[t], b0.median[t]);
            assert_eq!(b0.upper[t], b0.median[t]);
        }
        // one-step 95% half width
        let b = theoretical_pc1_interval(&trend, &resid, 60, 0.95).unwrap();
        let half = b.upper[0] - b.median[0];
        assert!((half - 1.959964 * 0.32).abs() < 1e-5, "{half}");
        // widths non-decreasing over 60 weeks
        for t in 1..60 {
            let w_prev = b.upper[t - 1] - b.lower[t - 1];
            let w = b.upper[t] - b.lower[t];
            assert!(w >= w_prev);
        }
        assert!(theoretical_pc1_interval(&trend, &resid, 10, 1.0).is_err());
        assert!(theoretical_pc1_interval(&trend, &resid, 10, -0.1).is_err());
    }

    #[test]
    fn deaths_from_rates_examples() {
        let rates = arr2(&[[0.001, 0.5], [0.25, 0.125]]);
        let expo = arr2(&[[10_000.0, 0.0], [8.0, 16.0]]);
        let d = deaths_from_rates(rates.view(), expo.view()).unwrap();
        assert!((d[(0, 0)] - 10.0).abs() < 1e-10);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(1, 0)], 2.0);
        assert_eq!(d[(1, 1)], 2.0);
        // random oracle
        let mut rng = StdRng::seed_from_u64(3);
        let r = Array2::from_shape_fn((7, 5), |_| rng.random_range(0.0001..0.9));
        let x = Array2::from_shape_fn((7, 5), |_| rng.random_range(0.0..1.0e5));
        let d = deaths_from_rates(r.view(), x.view()).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                assert_eq!(d[(i, j)], r[(i, j)] * x[(i, j)]);
            }
        }
        // shape mismatch and negative exposure
        let bad = Array2::from_elem((3, 5), 1.0);
        assert!(deaths_from_rates(r.view(), bad.view()).is_err());
        let mut neg = x.clone();
        neg[(0, 0)] = -2.0;
        assert!(deaths_from_rates(r.view(), neg.view()).is_err());
    }

    #[test]
    fn tensor_binary_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("deaths.bin");
        let mut rng = StdRng::seed_from_u64(17);
        let t = Array3::from_shape_fn((4, 6, 3), |_| rng.random_range(-1.0e6..1.0e6));
        write_tensor_binary(&path, &t, ["n_sims", "horizon", "n_series"]).unwrap();
        let back = read_tensor_binary(&path).unwrap();
        assert_eq!(t, back);
        let sidecar = std::fs::read_to_string(dir.path().join("deaths.bin.shape.txt")).unwrap();
        assert!(sidecar.contains("shape: 4 6 3"));
        assert!(sidecar.contains("row-major"));
    }
}
