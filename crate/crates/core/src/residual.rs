//! Stochastic models for trend residuals: a SARIMA model for the index
//! residual and driftless random walks for the remaining components.
//!
//! Sign conventions, fixed here and stored with any saved model:
//! AR side (1 - phi_1 B - ...)(1 - Phi_1 B^s - ...)(1-B)^d (1-B^s)^D X_t
//! equals MA side (1 + theta_1 B + ...)(1 + Theta_1 B^s + ...) eps_t.
//! A printed term "-0.26 eps(w-1)" therefore means theta_1 = -0.26.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opt::{bfgs, BfgsOptions};

/// Human-readable statement of the polynomial conventions above; written
/// into model files so saved coefficients cannot be misread.
pub const MA_SIGN_CONVENTION: &str =
    "AR: (1 - phi B)(1 - Phi B^s); MA: (1 + theta B)(1 + Theta B^s); \
     innovations on the right-hand side";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub s: usize,
}

impl SarimaSpec {
    pub fn new(pdq: (usize, usize, usize), seasonal: (usize, usize, usize), s: usize) -> Self {
        SarimaSpec {
            p: pdq.0,
            d: pdq.1,
            q: pdq.2,
            seasonal_p: seasonal.0,
            seasonal_d: seasonal.1,
            seasonal_q: seasonal.2,
            s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s < 1 {
            return Err(Error::Data("seasonal period s must be at least 1".into()));
        }
        for (name, v) in [
            ("p", self.p),
            ("q", self.q),
            ("seasonal P", self.seasonal_p),
            ("seasonal Q", self.seasonal_q),
        ] {
            if v > 2 {
                return Err(Error::Data(format!("SARIMA order {name} = {v} exceeds 2")));
            }
        }
        Ok(())
    }

    fn n_coef(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q
    }
}

/// (0,1,1)(1,0,0) with period 52: the structure whose expansion is
/// X_t = X_{t-1} + Phi X_{t-52} - Phi X_{t-53} + eps_t + theta eps_{t-1}.
impl Default for SarimaSpec {
    fn default() -> Self {
        SarimaSpec::new((0, 1, 1), (1, 0, 0), 52)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Sarima,
    RandomWalk,
}

/// Fitted residual model plus the history tail needed to forecast.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualModel {
    pub kind: ModelKind,
    pub spec: SarimaSpec,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    pub innovation_sd: f64,
    /// Per-step additive drift; 0 unless a walk was fit with drift on.
    pub drift: f64,
    /// Last observed values, oldest first, exactly the max AR-side lag.
    pub history_values: Vec<f64>,
    /// Last fitted innovations, oldest first, exactly the max MA-side lag.
    pub history_innovations: Vec<f64>,
    /// Set when the constrained search ended near the invertibility or
    /// stationarity boundary.
    pub boundary_warning: bool,
}

/// Constructor inputs for `ResidualModel::from_parts`.
#[derive(Debug, Clone)]
pub struct SarimaParts {
    pub spec: SarimaSpec,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    pub innovation_sd: f64,
    pub history_values: Vec<f64>,
    pub history_innovations: Vec<f64>,
}

impl ResidualModel {
    /// Validates coefficients (stationarity/invertibility, sd >= 0) and
    /// trims the history tails to the exact lags needed for forecasting.
    /// A zero sd is allowed so degenerate simulations can be expressed;
    /// the fit operations never produce one.
    pub fn from_parts(parts: SarimaParts) -> Result<ResidualModel> {
        let spec = parts.spec;
        spec.validate()?;
        for (name, got, want) in [
            ("ar", parts.ar.len(), spec.p),
            ("ma", parts.ma.len(), spec.q),
            ("seasonal_ar", parts.seasonal_ar.len(), spec.seasonal_p),
            ("seasonal_ma", parts.seasonal_ma.len(), spec.seasonal_q),
        ] {
            if got != want {
                return Err(Error::Data(format!(
                    "{name} has {got} coefficients but the spec declares {want}"
                )));
            }
        }
        if !parts.innovation_sd.is_finite() || parts.innovation_sd < 0.0 {
            return Err(Error::Data(format!(
                "innovation sd must be finite and non-negative, got {}",
                parts.innovation_sd
            )));
        }
        if !ar_stationary(&parts.ar) {
            return Err(Error::Data("AR polynomial has a root inside the unit circle".into()));
        }
        if !ar_stationary(&parts.seasonal_ar) {
            return Err(Error::Data(
                "seasonal AR polynomial has a root inside the unit circle".into(),
            ));
        }
        if !ma_invertible(&parts.ma) {
            return Err(Error::Data("MA polynomial is not invertible".into()));
        }
        if !ma_invertible(&parts.seasonal_ma) {
            return Err(Error::Data("seasonal MA polynomial is not invertible".into()));
        }
        let mut m = ResidualModel {
            kind: ModelKind::Sarima,
            spec,
            ar: parts.ar,
            ma: parts.ma,
            seasonal_ar: parts.seasonal_ar,
            seasonal_ma: parts.seasonal_ma,
            innovation_sd: parts.innovation_sd,
            drift: 0.0,
            history_values: parts.history_values,
            history_innovations: parts.history_innovations,
            boundary_warning: false,
        };
        let need_v = m.max_value_lag();
        let need_e = m.max_innovation_lag();
        if m.history_values.len() < need_v {
            return Err(Error::Data(format!(
                "history needs {need_v} values, got {}",
                m.history_values.len()
            )));
        }
        if m.history_innovations.len() < need_e {
            return Err(Error::Data(format!(
                "history needs {need_e} innovations, got {}",
                m.history_innovations.len()
            )));
        }
        let nv = m.history_values.len();
        m.history_values.drain(..nv - need_v);
        let ne = m.history_innovations.len();
        m.history_innovations.drain(..ne - need_e);
        if m.history_values.iter().chain(&m.history_innovations).any(|v| !v.is_finite()) {
            return Err(Error::Data("history contains non-finite values".into()));
        }
        Ok(m)
    }

    /// Driftless (or drifting) random walk around a last observed value.
    pub fn random_walk_from_parts(
        innovation_sd: f64,
        drift: f64,
        last_value: f64,
    ) -> Result<ResidualModel> {
        if !innovation_sd.is_finite() || innovation_sd < 0.0 {
            return Err(Error::Data(format!(
                "innovation sd must be finite and non-negative, got {innovation_sd}"
            )));
        }
        if !drift.is_finite() || !last_value.is_finite() {
            return Err(Error::Data("random-walk drift/last value must be finite".into()));
        }
        Ok(ResidualModel {
            kind: ModelKind::RandomWalk,
            spec: SarimaSpec::new((0, 1, 0), (0, 0, 0), 1),
            ar: vec![],
            ma: vec![],
            seasonal_ar: vec![],
            seasonal_ma: vec![],
            innovation_sd,
            drift,
            history_values: vec![last_value],
            history_innovations: vec![],
            boundary_warning: false,
        })
    }

    /// Highest lag of past values in the level recursion.
    pub fn max_value_lag(&self) -> usize {
        self.full_ar_lags().last().map_or(0, |(lag, _)| *lag)
    }

    /// Highest lag of past innovations in the level recursion.
    pub fn max_innovation_lag(&self) -> usize {
        self.ma_lags().last().map_or(0, |(lag, _)| *lag)
    }

    /// Nonzero (lag, coefficient) pairs a_i of the expanded AR side
    /// including differencing: X_t = sum a_i X_{t-i} + MA terms.
    fn full_ar_lags(&self) -> Vec<(usize, f64)> {
        let mut g = poly_mul(
            &ar_poly(&self.ar, 1),
            &ar_poly(&self.seasonal_ar, self.spec.s),
        );
        g = poly_mul(&g, &diff_poly(self.spec.d, 1));
        g = poly_mul(&g, &diff_poly(self.spec.seasonal_d, self.spec.s));
        lag_pairs_negated(&g)
    }

    /// Stationary AR side only (no differencing), for the CSS recursion
    /// on the differenced series.
    fn stationary_ar_lags(&self) -> Vec<(usize, f64)> {
        let g = poly_mul(&ar_poly(&self.ar, 1), &ar_poly(&self.seasonal_ar, self.spec.s));
        lag_pairs_negated(&g)
    }

    /// Nonzero (lag, coefficient) pairs m_j of theta(B)Theta(B^s).
    fn ma_lags(&self) -> Vec<(usize, f64)> {
        let g = poly_mul(&ma_poly(&self.ma, 1), &ma_poly(&self.seasonal_ma, self.spec.s));
        lag_pairs(&g)
    }
}

// polynomial helpers; vectors hold coefficients of B^0, B^1, ...

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// 1 - c_1 B^stride - c_2 B^(2 stride) - ...
fn ar_poly(coeffs: &[f64], stride: usize) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() * stride + 1];
    out[0] = 1.0;
    for (i, c) in coeffs.iter().enumerate() {
        out[(i + 1) * stride] = -c;
    }
    out
}

/// 1 + c_1 B^stride + c_2 B^(2 stride) + ...
fn ma_poly(coeffs: &[f64], stride: usize) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() * stride + 1];
    out[0] = 1.0;
    for (i, c) in coeffs.iter().enumerate() {
        out[(i + 1) * stride] = *c;
    }
    out
}

/// (1 - B^stride)^order
fn diff_poly(order: usize, stride: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    let step = ar_poly(&[1.0], stride);
    for _ in 0..order {
        out = poly_mul(&out, &step);
    }
    out
}

/// For g with g[0] = 1 interpreted as 1 - sum a_i B^i: the (i, a_i).
fn lag_pairs_negated(g: &[f64]) -> Vec<(usize, f64)> {
    g.iter().enumerate().skip(1).filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, -c)).collect()
}

fn lag_pairs(g: &[f64]) -> Vec<(usize, f64)> {
    g.iter().enumerate().skip(1).filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect()
}

/// Roots of 1 - c_1 z - ... - c_p z^p outside the unit circle, checked as
/// the spectral radius of the companion matrix.
fn ar_stationary(coeffs: &[f64]) -> bool {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let p = coeffs.len();
    if p == 0 {
        return true;
    }
    let mut m = DMatrix::zeros(p, p);
    for (j, c) in coeffs.iter().enumerate() {
        m[(0, j)] = *c;
    }
    for i in 1..p {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().all(|e| e.norm() < 1.0 - 1e-9)
}

/// 1 + t_1 B + ... invertible iff 1 - (-t_1) B - ... is stationary.
fn ma_invertible(coeffs: &[f64]) -> bool {
    let negated: Vec<f64> = coeffs.iter().map(|t| -t).collect();
    ar_stationary(&negated)
}

/// Partial-autocorrelation parameterization of a stationary AR block
/// (Durbin-Levinson); |r_i| < 1 maps onto exactly the stationary region.
fn pacf_to_ar(r: &[f64]) -> Vec<f64> {
    let p = r.len();
    let mut a = vec![0.0; p];
    for k in 0..p {
        let prev = a.clone();
        a[k] = r[k];
        for i in 0..k {
            a[i] = prev[i] - r[k] * prev[k - 1 - i];
        }
    }
    a
}

fn difference(x: &[f64], order: usize, stride: usize) -> Vec<f64> {
    let mut v = x.to_vec();
    for _ in 0..order {
        if v.len() <= stride {
            return vec![];
        }
        v = v.windows(stride + 1).map(|w| w[stride] - w[0]).collect();
    }
    v
}

/// One-step innovations of the differenced series under the stationary
/// recursion, with zero presample.
fn css_innovations(y: &[f64], c: &[(usize, f64)], m: &[(usize, f64)]) -> Vec<f64> {
    let mut eps = vec![0.0; y.len()];
    for t in 0..y.len() {
        let mut e = y[t];
        for &(lag, coef) in c {
            if t >= lag {
                e -= coef * y[t - lag];
            }
        }
        for &(lag, coef) in m {
            if t >= lag {
                e -= coef * eps[t - lag];
            }
        }
        eps[t] = e;
    }
    eps
}

fn css_sum(eps: &[f64], skip: usize) -> f64 {
    eps.iter().skip(skip).map(|e| e * e).sum()
}

/// Conditional-sum-of-squares SARIMA fit: difference, then minimize the
/// sum of squared one-step innovations over a PACF-constrained
/// parameterization, quasi-Newton from zeros.
pub fn fit_sarima(values: &[f64], spec: &SarimaSpec) -> Result<ResidualModel> {
    spec.validate()?;
    let min_len = 4 * spec.s + 20;
    if values.len() < min_len {
        return Err(Error::Data(format!(
            "SARIMA fit needs at least {min_len} observations, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let y = difference(&difference(values, spec.d, 1), spec.seasonal_d, spec.s);
    let m_len = y.len();
    let skip = spec.p + spec.s * spec.seasonal_p;
    if m_len <= skip + spec.n_coef() + 10 {
        return Err(Error::Data("too few observations after differencing".into()));
    }
    let mean_sq = y.iter().map(|v| v * v).sum::<f64>() / m_len as f64;
    let ybar = y.iter().sum::<f64>() / m_len as f64;
    let var = y.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>() / m_len as f64;
    if var <= 1e-24 * mean_sq.max(1e-12) {
        return Err(Error::Data("degenerate variance: differenced series is constant".into()));
    }

    let spec = *spec;
    let unpack = |u: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let r: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
        let (a, rest) = r.split_at(spec.p);
        let (b, rest) = rest.split_at(spec.q);
        let (c, d) = rest.split_at(spec.seasonal_p);
        let ar = pacf_to_ar(a);
        let ma: Vec<f64> = pacf_to_ar(b).iter().map(|v| -v).collect();
        let sar = pacf_to_ar(c);
        let sma: Vec<f64> = pacf_to_ar(d).iter().map(|v| -v).collect();
        (ar, ma, sar, sma)
    };
    let shell = |ar: Vec<f64>, ma: Vec<f64>, sar: Vec<f64>, sma: Vec<f64>| ResidualModel {
        kind: ModelKind::Sarima,
        spec,
        ar,
        ma,
        seasonal_ar: sar,
        seasonal_ma: sma,
        innovation_sd: 1.0,
        drift: 0.0,
        history_values: vec![],
        history_innovations: vec![],
        boundary_warning: false,
    };

    let mut best_u = vec![0.0; spec.n_coef()];
    let mut boundary = false;
    if spec.n_coef() > 0 {
        let objective = |u: &[f64]| {
            let (ar, ma, sar, sma) = unpack(u);
            let probe = shell(ar, ma, sar, sma);
            let eps = css_innovations(&y, &probe.stationary_ar_lags(), &probe.ma_lags());
            css_sum(&eps, skip).max(1e-300).ln()
        };
        let res = bfgs(
            objective,
            &best_u,
            &BfgsOptions { max_iter: 500, grad_tol: 1e-5, fd_step: 1e-6, ..Default::default() },
        );
        if !res.converged {
            return Err(Error::Numeric(format!(
                "SARIMA search did not converge; gradient norm {:e} after {} iterations",
                res.grad_norm, res.iterations
            )));
        }
        boundary = res.x.iter().any(|v| v.tanh().abs() > 0.99);
        best_u = res.x;
    }

    let (ar, ma, sar, sma) = unpack(&best_u);
    let final_shell = shell(ar.clone(), ma.clone(), sar.clone(), sma.clone());
    let eps = css_innovations(&y, &final_shell.stationary_ar_lags(), &final_shell.ma_lags());
    let n_eff = m_len - skip;
    let sd = (css_sum(&eps, skip) / n_eff as f64).sqrt();
    let sd_floor = 1e-10 * mean_sq.sqrt().max(1e-150);
    if sd <= sd_floor {
        return Err(Error::Data("degenerate variance: innovation sd is zero".into()));
    }

    let mut model = ResidualModel::from_parts(SarimaParts {
        spec,
        ar,
        ma,
        seasonal_ar: sar,
        seasonal_ma: sma,
        innovation_sd: sd,
        history_values: values.to_vec(),
        history_innovations: eps,
    })?;
    model.boundary_warning = boundary;
    Ok(model)
}

/// Driftless random walk: innovation sd is the sample standard deviation
/// of the first differences.
pub fn fit_random_walk(values: &[f64]) -> Result<ResidualModel> {
    fit_random_walk_with_options(values, false)
}

/// With `with_drift`, the mean difference becomes a per-step drift.
pub fn fit_random_walk_with_options(values: &[f64], with_drift: bool) -> Result<ResidualModel> {
    if values.len() < 20 {
        return Err(Error::Data(format!(
            "random-walk fit needs at least 20 observations, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let diffs = difference(values, 1, 1);
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::Data(
            "zero-variance differences: series is a deterministic trend, not a walk".into(),
        ));
    }
    let drift = if with_drift { mean } else { 0.0 };
    ResidualModel::random_walk_from_parts(sd, drift, *values.last().expect("non-empty"))
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Data("forecast horizon must be positive".into()));
    }
    Ok(())
}

/// Minimum-MSE forecast: the level recursion iterated with future
/// innovations at their zero mean and known past innovations retained.
pub fn forecast_mean(m: &ResidualModel, horizon: usize) -> Result<Vec<f64>> {
    check_horizon(horizon)?;
    Ok(run_recursion(m, horizon, |_| 0.0))
}

/// One stochastic draw of the recursion; an explicit stream makes
/// trajectories reproducible and independently parallelizable.
pub fn simulate_path<R: Rng + ?Sized>(m: &ResidualModel, horizon: usize, rng: &mut R) -> Vec<f64> {
    if horizon == 0 {
        return vec![];
    }
    if m.innovation_sd == 0.0 {
        return run_recursion(m, horizon, |_| 0.0);
    }
    let normal = Normal::new(0.0, m.innovation_sd).expect("finite positive sd");
    run_recursion(m, horizon, |_| normal.sample(rng))
}

fn run_recursion<F>(m: &ResidualModel, horizon: usize, mut draw: F) -> Vec<f64>
where
    F: FnMut(usize) -> f64,
{
    let a = m.full_ar_lags();
    let mw = m.ma_lags();
    let t0 = m.history_values.len();
    let e0 = m.history_innovations.len();
    let mut vals = m.history_values.clone();
    vals.reserve(horizon);
    let mut eps = m.history_innovations.clone();
    eps.reserve(horizon);
    for k in 0..horizon {
        let e_now = draw(k);
        let mut x = m.drift + e_now;
        for &(lag, coef) in &a {
            let idx = t0 + k;
            if idx >= lag {
                x += coef * vals[idx - lag];
            }
        }
        for &(lag, coef) in &mw {
            let idx = e0 + k;
            if idx >= lag {
                x += coef * eps[idx - lag];
            }
        }
        vals.push(x);
        eps.push(e_now);
    }
    vals.split_off(t0)
}

/// Per-step forecast variances sd^2 sum_{j<h} psi_j^2, with psi from the
/// expanded polynomials (differencing included, so variances grow).
pub fn forecast_variance(m: &ResidualModel, horizon: usize) -> Result<Vec<f64>> {
    check_horizon(horizon)?;
    let a = m.full_ar_lags();
    let mw = m.ma_lags();
    let mut psi = vec![0.0; horizon];
    psi[0] = 1.0;
    for k in 1..horizon {
        let mut v = 0.0;
        for &(lag, coef) in &a {
            if k >= lag {
                v += coef * psi[k - lag];
            }
        }
        for &(lag, coef) in &mw {
            if k == lag {
                v += coef;
            }
        }
        psi[k] = v;
    }
    let s2 = m.innovation_sd * m.innovation_sd;
    let mut acc = 0.0;
    Ok(psi
        .iter()
        .map(|p| {
            acc += p * p;
            s2 * acc
        })
        .collect())
}
