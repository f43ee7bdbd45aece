//! Principal component decomposition of the logit panel: column-centered
//! SVD, projection of new weeks onto fixed components, reconstruction from
//! scores, and correlation-style loadings for reporting.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::LogitPanel;

/// Result of a column-centered SVD of the logit panel.
///
/// `directions` columns are orthonormal component directions; `scores` are
/// the centered data projected onto them. Component 1 is oriented so its
/// correlation loadings with the logit rates are non-positive, the
/// mortality-index convention; remaining component signs are whatever the
/// SVD returns (deterministic for a given panel).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaDecomposition {
    pub column_means: Array1<f64>,
    /// n_series x n_series, columns are component directions.
    pub directions: Array2<f64>,
    /// n_weeks x n_series, column k = scores on component k.
    pub scores: Array2<f64>,
    /// Non-increasing.
    pub singular_values: Array1<f64>,
    /// Sums to 1.
    pub explained_variance_shares: Array1<f64>,
}

impl PcaDecomposition {
    pub fn n_series(&self) -> usize {
        self.column_means.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.scores.nrows()
    }

    /// Scores on component 1, the mortality-index series.
    pub fn pc1(&self) -> ArrayView1<'_, f64> {
        self.scores.column(0)
    }

    /// True when trailing components are zero to machine precision. Such
    /// components are retained (reconstruction still works); callers may
    /// want to warn.
    pub fn is_rank_deficient(&self) -> bool {
        let s0 = self.singular_values[0];
        let tol = f64::EPSILON * self.n_series().max(self.n_weeks()) as f64 * s0;
        self.singular_values.iter().any(|&s| s <= tol)
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

/// Column-centered SVD of the logit panel. Requires more weeks than series.
pub fn decompose(lp: &LogitPanel) -> Result<PcaDecomposition> {
    let (n_weeks, n_series) = (lp.n_weeks(), lp.n_series());
    if n_weeks <= n_series {
        return Err(Error::Data(format!(
            "decomposition needs more weeks than series; got {n_weeks} weeks x {n_series} series"
        )));
    }
    let column_means = lp
        .values
        .mean_axis(Axis(0))
        .expect("non-empty panel");
    let centered = &lp.values - &column_means;

    let svd = to_dmatrix(&centered).svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut directions = Array2::zeros((n_series, n_series));
    for j in 0..n_series {
        for k in 0..n_series {
            directions[(j, k)] = v_t[(k, j)];
        }
    }
    let mut singular_values = Array1::zeros(n_series);
    for k in 0..n_series {
        singular_values[k] = svd.singular_values[k];
    }
    for pair in singular_values.windows(2) {
        if pair[1] > pair[0] {
            return Err(Error::Numeric("singular values not sorted descending".into()));
        }
    }

    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::Data("panel has zero variance; nothing to decompose".into()));
    }
    let explained_variance_shares = singular_values.mapv(|s| s * s / total);

    // Correlation-loading signs on component 1 equal the signs of the
    // direction entries, so orienting the direction orients the loadings.
    if directions.column(0).sum() > 0.0 {
        for j in 0..n_series {
            directions[(j, 0)] = -directions[(j, 0)];
        }
    }

    let scores = centered.dot(&directions);
    Ok(PcaDecomposition {
        column_means,
        directions,
        scores,
        singular_values,
        explained_variance_shares,
    })
}

/// Pearson correlations between each series' logit values (rows of `lp`)
/// and each component's scores. Reporting only; never used to reconstruct.
pub fn correlation_loadings(d: &PcaDecomposition, lp: &LogitPanel) -> Result<Array2<f64>> {
    let n_weeks = lp.n_weeks();
    let n_series = lp.n_series();
    if d.n_series() != n_series || d.n_weeks() != n_weeks {
        return Err(Error::Data("decomposition does not match panel shape".into()));
    }
    let mut out = Array2::zeros((n_series, n_series));
    let score_sd: Vec<f64> = (0..n_series)
        .map(|k| {
            let col = d.scores.column(k);
            let mean = col.sum() / n_weeks as f64;
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_weeks as f64).sqrt()
        })
        .collect();
    for j in 0..n_series {
        let col = lp.values.column(j);
        let mean = col.sum() / n_weeks as f64;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_weeks as f64)
            .sqrt();
        if sd <= 0.0 {
            return Err(Error::Data(format!(
                "series {} has zero variance; correlation undefined",
                lp.series[j]
            )));
        }
        for k in 0..n_series {
            if score_sd[k] <= f64::EPSILON * d.singular_values[0] {
                // component numerically absent; report zero correlation
                out[(j, k)] = 0.0;
                continue;
            }
            let score_col = d.scores.column(k);
            let score_mean = score_col.sum() / n_weeks as f64;
            let cov = col
                .iter()
                .zip(score_col.iter())
                .map(|(x, s)| (x - mean) * (s - score_mean))
                .sum::<f64>()
                / n_weeks as f64;
            out[(j, k)] = cov / (sd * score_sd[k]);
        }
    }
    Ok(out)
}

/// Projects one week's logit row onto the fixed components: the same affine
/// map that produced the in-sample scores.
pub fn project_week(d: &PcaDecomposition, logit_row: ArrayView1<f64>) -> Result<Array1<f64>> {
    if logit_row.len() != d.n_series() {
        return Err(Error::Data(format!(
            "row length {} does not match {} series",
            logit_row.len(),
            d.n_series()
        )));
    }
    let centered = &logit_row - &d.column_means;
    Ok(centered.dot(&d.directions))
}

/// Maps score rows back to logit rows: scores x directions' + means. For
/// orthonormal directions the transpose is the exact inverse of the
/// projection.
pub fn reconstruct(d: &PcaDecomposition, score_rows: ArrayView2<f64>) -> Result<Array2<f64>> {
    if score_rows.ncols() != d.n_series() {
        return Err(Error::Data(format!(
            "score rows have {} columns; expected {}",
            score_rows.ncols(),
            d.n_series()
        )));
    }
    let mut out = score_rows.dot(&d.directions.t());
    out += &d.column_means;
    Ok(out)
}
