//! Series identity: (country, sex, age group) triples and their canonical
//! ordering — country blocks sorted by country code, males before females,
//! ages ascending within each sex.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Sex::Male),
            "F" | "f" => Ok(Sex::Female),
            other => Err(Error::Data(format!("unknown sex code {other:?} (expected M or F)"))),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

/// The four aggregated age groups of the analysis panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    A0to64,
    A65to74,
    A75to84,
    A85plus,
}

pub const AGE_GROUPS: [AgeGroup; 4] = [
    AgeGroup::A0to64,
    AgeGroup::A65to74,
    AgeGroup::A75to84,
    AgeGroup::A85plus,
];

impl AgeGroup {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "0-64" => Ok(AgeGroup::A0to64),
            "65-74" => Ok(AgeGroup::A65to74),
            "75-84" => Ok(AgeGroup::A75to84),
            "85+" => Ok(AgeGroup::A85plus),
            other => Err(Error::Data(format!(
                "unknown age group {other:?} (expected 0-64, 65-74, 75-84 or 85+)"
            ))),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            AgeGroup::A0to64 => "0-64",
            AgeGroup::A65to74 => "65-74",
            AgeGroup::A75to84 => "75-84",
            AgeGroup::A85plus => "85+",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Identifies one mortality-rate time series within a panel.
///
/// The derived `Ord` gives the canonical panel order: series sort by
/// country code, then males before females, then age ascending.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub country: String,
    pub sex: Sex,
    pub age_group: AgeGroup,
}

impl SeriesKey {
    pub fn new(country: impl Into<String>, sex: Sex, age_group: AgeGroup) -> Self {
        SeriesKey {
            country: country.into(),
            sex,
            age_group,
        }
    }

    /// Compact label used in output CSVs, e.g. `ESP_F_85+`.
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.country, self.sex.code(), self.age_group.code())
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        let mut parts = s.rsplitn(3, '_');
        let age = parts.next();
        let sex = parts.next();
        let country = parts.next();
        match (country, sex, age) {
            (Some(c), Some(sx), Some(a)) if !c.is_empty() => Ok(SeriesKey {
                country: c.to_string(),
                sex: Sex::parse(sx)?,
                age_group: AgeGroup::parse(a)?,
            }),
            _ => Err(Error::Data(format!("malformed series label {s:?}"))),
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
