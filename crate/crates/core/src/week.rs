//! Week calendar on a strict 52-week grid.
//!
//! Every year is treated as exactly 52 weeks. A signed offset `w` counts
//! weeks relative to an anchor week (default: calendar week 31 of 2000, so
//! `w = 0` there). The mapping `(year, week) <-> w` is bijective for
//! `week` in `1..=52`; week-53 observations never enter a panel.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WEEKS_PER_YEAR: i64 = 52;

/// A calendar week plus its signed offset from the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeekIndex {
    pub year: i32,
    /// Calendar week, 1..=52.
    pub week: u32,
    /// Signed week offset; 0 at the anchor week.
    pub offset: i64,
}

impl WeekIndex {
    /// The following calendar week; anchor-independent.
    pub fn next(&self) -> WeekIndex {
        let (year, week) = if self.week == WEEKS_PER_YEAR as u32 {
            (self.year + 1, 1)
        } else {
            (self.year, self.week + 1)
        };
        WeekIndex { year, week, offset: self.offset + 1 }
    }
}

/// Anchor defining where the week offset is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekCalendar {
    pub anchor_year: i32,
    pub anchor_week: u32,
}

impl Default for WeekCalendar {
    fn default() -> Self {
        WeekCalendar {
            anchor_year: 2000,
            anchor_week: 31,
        }
    }
}

impl WeekCalendar {
    pub fn new(anchor_year: i32, anchor_week: u32) -> Result<Self> {
        if !(1..=52).contains(&anchor_week) {
            return Err(Error::Usage(format!(
                "anchor week must be in 1..=52, got {anchor_week}"
            )));
        }
        Ok(WeekCalendar {
            anchor_year,
            anchor_week,
        })
    }

    /// Signed offset of `(year, week)` from the anchor.
    pub fn offset(&self, year: i32, week: u32) -> Result<i64> {
        if !(1..=52).contains(&week) {
            return Err(Error::Data(format!(
                "week must be in 1..=52 on the 52-week grid, got {week} (year {year})"
            )));
        }
        Ok((year as i64 - self.anchor_year as i64) * WEEKS_PER_YEAR + week as i64
            - self.anchor_week as i64)
    }

    pub fn week_index(&self, year: i32, week: u32) -> Result<WeekIndex> {
        Ok(WeekIndex {
            year,
            week,
            offset: self.offset(year, week)?,
        })
    }

    /// Inverse of [`offset`](Self::offset).
    pub fn from_offset(&self, w: i64) -> WeekIndex {
        let linear = self.anchor_year as i64 * WEEKS_PER_YEAR + self.anchor_week as i64 - 1 + w;
        let year = linear.div_euclid(WEEKS_PER_YEAR);
        let week = linear.rem_euclid(WEEKS_PER_YEAR) + 1;
        WeekIndex {
            year: year as i32,
            week: week as u32,
            offset: w,
        }
    }

    /// Consecutive week indices starting at `(year, week)`.
    pub fn range(&self, year: i32, week: u32, n: usize) -> Result<Vec<WeekIndex>> {
        let start = self.offset(year, week)?;
        Ok((0..n as i64).map(|k| self.from_offset(start + k)).collect())
    }
}

/// ISO year/week of a date, with ISO week 53 folded into week 52 so the
/// result always lands on the 52-week grid.
pub fn iso_week_folded(date: NaiveDate) -> (i32, u32) {
    let iso = date.iso_week();
    let week = if iso.week() == 53 { 52 } else { iso.week() };
    (iso.year(), week)
}

/// Parse a `YYYY-WW` string such as `2019-52`.
pub fn parse_year_week(s: &str) -> Result<(i32, u32)> {
    let err = || Error::Usage(format!("expected YYYY-WW (e.g. 2019-52), got {s:?}"));
    let (y, w) = s.split_once('-').ok_or_else(err)?;
    let year: i32 = y.parse().map_err(|_| err())?;
    let week: u32 = w.parse().map_err(|_| err())?;
    if !(1..=52).contains(&week) {
        return Err(Error::Usage(format!("week must be in 1..=52, got {week}")));
    }
    Ok((year, week))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_is_zero() {
        let cal = WeekCalendar::default();
        assert_eq!(cal.offset(2000, 31).unwrap(), 0);
        assert_eq!(cal.offset(2000, 32).unwrap(), 1);
        assert_eq!(cal.offset(2000, 30).unwrap(), -1);
        assert_eq!(cal.offset(2001, 31).unwrap(), 52);
    }

    #[test]
    fn offset_roundtrip_bijective() {
        let cal = WeekCalendar::default();
        for w in -2000..2000 {
            let wi = cal.from_offset(w);
            assert!((1..=52).contains(&wi.week));
            assert_eq!(cal.offset(wi.year, wi.week).unwrap(), w);
        }
        // consecutive offsets advance by exactly one week
        let a = cal.from_offset(-30);
        let b = cal.from_offset(-29);
        assert_eq!(b.offset - a.offset, 1);
    }

    #[test]
    fn week_53_rejected() {
        let cal = WeekCalendar::default();
        assert!(cal.offset(2004, 53).is_err());
        assert!(cal.offset(2004, 0).is_err());
    }

    #[test]
    fn iso_folding() {
        // 2020-12-31 falls in ISO week 53 of 2020.
        let d = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap();
        assert_eq!(iso_week_folded(d), (2020, 52));
        // 2021-01-01 is still ISO week 53 of 2020.
        let d = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        assert_eq!(iso_week_folded(d), (2020, 52));
        let d = NaiveDate::from_ymd_opt(2020, 6, 15).unwrap();
        assert_eq!(iso_week_folded(d), (2020, 25));
    }

    #[test]
    fn year_week_parsing() {
        assert_eq!(parse_year_week("2019-52").unwrap(), (2019, 52));
        assert!(parse_year_week("2019-53").is_err());
        assert!(parse_year_week("2019").is_err());
    }

    #[test]
    fn next_agrees_with_calendar() {
        let cal = WeekCalendar::default();
        let mut w = cal.from_offset(-30);
        for k in -29..200i64 {
            w = w.next();
            assert_eq!(w, cal.from_offset(k));
        }
        // year rollover
        let w = cal.week_index(2019, 52).unwrap();
        let n = w.next();
        assert_eq!((n.year, n.week), (2020, 1));
    }
}
