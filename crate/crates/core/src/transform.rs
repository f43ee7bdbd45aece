//! Logit and inverse-logit maps between rate space (0,1) and unbounded
//! logit space, in scalar and panel form.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::panel::RatePanel;
use crate::series::SeriesKey;
use crate::week::WeekIndex;

/// logit(r) = ln(r / (1 - r)).
///
/// Evaluated as ln(r) - ln1p(-r) so that small rates keep full relative
/// precision (the naive quotient loses digits below ~1e-8).
pub fn logit(rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Data(format!("logit domain error: rate {rate} not in (0,1)")));
    }
    Ok(rate.ln() - (-rate).ln_1p())
}

/// inverse_logit(x) = 1 / (1 + e^{-x}).
///
/// Branches on the sign of x so neither exp overflows; stable down to
/// x = -700 (result ~9.86e-305, still a normal f64). For x above ~36.7
/// the result rounds to exactly 1.0 in f64; callers that must stay in
/// the open interval clamp afterwards (see `simulate`).
pub fn inverse_logit(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Data(format!("inverse_logit domain error: {x} is not finite")));
    }
    Ok(if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    })
}

/// Panel of logit-transformed rates; same week/series layout as the
/// `RatePanel` it came from.
#[derive(Debug, Clone)]
pub struct LogitPanel {
    pub weeks: Vec<WeekIndex>,
    pub series: Vec<SeriesKey>,
    /// n_weeks x n_series matrix of logit rates.
    pub values: Array2<f64>,
}

impl LogitPanel {
    pub fn n_weeks(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }
}

/// Elementwise logit of a rate panel. Domain errors name the offending cell.
pub fn logit_panel(panel: &RatePanel) -> Result<LogitPanel> {
    let mut values = Array2::zeros(panel.rates.raw_dim());
    for ((i, j), &r) in panel.rates.indexed_iter() {
        values[(i, j)] = logit(r).map_err(|e| at_cell(e, &panel.weeks[i], &panel.series[j]))?;
    }
    Ok(LogitPanel {
        weeks: panel.weeks.clone(),
        series: panel.series.clone(),
        values,
    })
}

/// Elementwise inverse logit back to rate space, attaching the supplied
/// exposures. Death counts are left deferred (derived as rate x exposure
/// on demand).
pub fn rate_panel(lp: &LogitPanel, exposures: Array2<f64>) -> Result<RatePanel> {
    if exposures.raw_dim() != lp.values.raw_dim() {
        return Err(Error::Data(format!(
            "exposure shape {:?} does not match logit panel shape {:?}",
            exposures.shape(),
            lp.values.shape()
        )));
    }
    let mut rates = Array2::zeros(lp.values.raw_dim());
    for ((i, j), &x) in lp.values.indexed_iter() {
        rates[(i, j)] =
            inverse_logit(x).map_err(|e| at_cell(e, &lp.weeks[i], &lp.series[j]))?;
    }
    RatePanel::new(lp.weeks.clone(), lp.series.clone(), rates, exposures, None)
}

fn at_cell(e: Error, week: &WeekIndex, series: &SeriesKey) -> Error {
    match e {
        Error::Data(msg) => Error::Data(format!(
            "{msg} at (year {} week {}, {series})",
            week.year, week.week
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::week::WeekCalendar;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn logit_symmetry_point() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert_eq!(inverse_logit(0.0).unwrap(), 0.5);
    }

    #[test]
    fn logit_antisymmetry() {
        // ln vs ln_1p evaluation paths differ in the last bit
        assert!((logit(0.2).unwrap() + logit(0.8).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn logit_small_rate_matches_oracle() {
        // ln(0.001/0.999) to 20 significant digits: -6.9067547786485535186
        assert!((logit(0.001).unwrap() - (-6.906754778648554)).abs() < 1e-14);
        assert!((logit(1e-6).unwrap() - (-13.815509557963774)).abs() < 1e-13);
    }

    #[test]
    fn logit_domain_errors() {
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!(logit(-0.1).is_err());
        assert!(logit(f64::NAN).is_err());
        assert!(inverse_logit(f64::INFINITY).is_err());
        assert!(inverse_logit(f64::NAN).is_err());
    }

    #[test]
    fn roundtrip_named_rates() {
        for r in [1e-6, 0.3, 0.999] {
            let back = inverse_logit(logit(r).unwrap()).unwrap();
            assert!((back - r).abs() <= 1e-12, "roundtrip {r} -> {back}");
        }
    }

    #[test]
    fn deep_negative_tail_does_not_underflow() {
        // sigma(-700) = 9.8596765437597708567e-305 (extended precision)
        let v = inverse_logit(-700.0).unwrap();
        assert!(v > 0.0 && v < 1e-300);
        assert!((v - 9.85967654375977e-305).abs() / 9.85967654375977e-305 < 1e-12);
    }

    fn toy_panel(rates: Array2<f64>) -> RatePanel {
        let cal = WeekCalendar::default();
        let weeks: Vec<WeekIndex> = (0..rates.nrows() as i64).map(|w| cal.from_offset(w)).collect();
        let series: Vec<SeriesKey> = (0..rates.ncols())
            .map(|j| {
                SeriesKey::new(
                    format!("C{j:02}"),
                    crate::series::Sex::Male,
                    crate::series::AgeGroup::A0to64,
                )
            })
            .collect();
        let exposures = Array2::from_elem(rates.raw_dim(), 1000.0);
        RatePanel::new(weeks, series, rates, exposures, None).unwrap()
    }

    #[test]
    fn half_panel_maps_to_zero() {
        let p = toy_panel(Array2::from_elem((4, 2), 0.5));
        let lp = logit_panel(&p).unwrap();
        assert!(lp.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn panel_roundtrip() {
        let p = toy_panel(array![[0.001, 0.2], [0.05, 0.7], [0.31, 0.0004]]);
        let lp = logit_panel(&p).unwrap();
        let back = rate_panel(&lp, p.exposures.clone()).unwrap();
        let max_err = (&back.rates - &p.rates).iter().fold(0f64, |m, d| m.max(d.abs()));
        assert!(max_err <= 1e-12);
    }

    #[test]
    fn panel_matches_scalar_oracle() {
        let p = toy_panel(array![[0.011, 0.42], [0.93, 0.0007]]);
        let lp = logit_panel(&p).unwrap();
        for ((i, j), &v) in lp.values.indexed_iter() {
            assert_eq!(v, logit(p.rates[(i, j)]).unwrap());
        }
    }

    proptest! {
        #[test]
        fn roundtrip_within_1e12(r in 1e-8f64..=(1.0 - 1e-8)) {
            let back = inverse_logit(logit(r).unwrap()).unwrap();
            prop_assert!((back - r).abs() <= 1e-12);
        }

        #[test]
        fn logit_strictly_increasing(a in 1e-8f64..=(1.0 - 1e-8), b in 1e-8f64..=(1.0 - 1e-8)) {
            prop_assume!((a - b).abs() > 1e-13);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(logit(lo).unwrap() < logit(hi).unwrap());
        }
    }
}
