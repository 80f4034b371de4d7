//! Domain vocabulary: the fuel moisture formula, target capping and scaling,
//! and the stratifiers used when reporting (season, land cover, elevation).
//!
//! Everything here is a pure function.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound applied to LFMC labels, in percent.
pub const LFMC_CAP: f64 = 302.0;

/// Width of an elevation reporting band, in meters.
pub const ELEVATION_BAND_WIDTH: f64 = 500.0;

/// A field-sampled fuel moisture label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmcSample {
    pub site_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub date: NaiveDate,
    pub lfmc_percent: f64,
    pub species: Option<String>,
    pub land_cover: Option<LandCoverClass>,
    pub elevation_m: Option<f64>,
}

impl LfmcSample {
    /// Checks the coordinate and value invariants.
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Domain(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Domain(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        if !self.lfmc_percent.is_finite() || self.lfmc_percent < 0.0 {
            return Err(Error::Domain(format!(
                "LFMC value {} must be a finite non-negative percentage",
                self.lfmc_percent
            )));
        }
        Ok(())
    }
}

/// Fresh and oven-dried weights of a vegetation sample, in grams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreshDryWeights {
    pub fresh_g: f64,
    pub dry_g: f64,
}

impl FreshDryWeights {
    pub fn new(fresh_g: f64, dry_g: f64) -> Result<Self> {
        if !(dry_g > 0.0) || !dry_g.is_finite() {
            return Err(Error::Domain(format!(
                "dry weight must be positive, got {dry_g}"
            )));
        }
        if !(fresh_g >= 0.0) || !fresh_g.is_finite() {
            return Err(Error::Domain(format!(
                "fresh weight must be non-negative, got {fresh_g}"
            )));
        }
        Ok(Self { fresh_g, dry_g })
    }
}

/// Water content as a percentage of dry mass.
///
/// A fresh weight below the dry weight yields a negative value. That is kept
/// as-is so that data-entry errors surface during validation.
pub fn compute_lfmc(weights: FreshDryWeights) -> Result<f64> {
    if !(weights.dry_g > 0.0) {
        return Err(Error::Domain(format!(
            "dry weight must be positive, got {}",
            weights.dry_g
        )));
    }
    Ok(100.0 * (weights.fresh_g - weights.dry_g) / weights.dry_g)
}

pub fn cap_lfmc(value: f64, cap: f64) -> Result<f64> {
    if !(value >= 0.0) {
        return Err(Error::Domain(format!("cannot cap negative LFMC {value}")));
    }
    Ok(value.min(cap))
}

/// Linear scaling of a capped LFMC value into `[0, 1]`.
pub fn normalize_target(value: f64, cap: f64) -> Result<f64> {
    if !(0.0..=cap).contains(&value) {
        return Err(Error::Domain(format!(
            "LFMC {value} outside the normalization range [0, {cap}]"
        )));
    }
    Ok(value / cap)
}

pub fn denormalize_target(normalized: f64, cap: f64) -> f64 {
    normalized * cap
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [
        Season::Winter,
        Season::Spring,
        Season::Summer,
        Season::Autumn,
    ];

    /// Meteorological season of a calendar month (1 = January).
    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Season::Winter => "Winter",
            Season::Spring => "Spring",
            Season::Summer => "Summer",
            Season::Autumn => "Autumn",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn season_of(date: NaiveDate) -> Season {
    Season::of_month(date.month())
}

/// WorldCover land cover classes, with their published raster codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LandCoverClass {
    Trees,
    Shrub,
    Grass,
    Cropland,
    BuiltUp,
    BareSparse,
    SnowIce,
    Water,
    Wetland,
    Mangroves,
    MossLichen,
}

impl LandCoverClass {
    pub const ALL: [LandCoverClass; 11] = [
        LandCoverClass::Trees,
        LandCoverClass::Shrub,
        LandCoverClass::Grass,
        LandCoverClass::Cropland,
        LandCoverClass::BuiltUp,
        LandCoverClass::BareSparse,
        LandCoverClass::SnowIce,
        LandCoverClass::Water,
        LandCoverClass::Wetland,
        LandCoverClass::Mangroves,
        LandCoverClass::MossLichen,
    ];

    pub fn code(self) -> u8 {
        match self {
            LandCoverClass::Trees => 10,
            LandCoverClass::Shrub => 20,
            LandCoverClass::Grass => 30,
            LandCoverClass::Cropland => 40,
            LandCoverClass::BuiltUp => 50,
            LandCoverClass::BareSparse => 60,
            LandCoverClass::SnowIce => 70,
            LandCoverClass::Water => 80,
            LandCoverClass::Wetland => 90,
            LandCoverClass::Mangroves => 95,
            LandCoverClass::MossLichen => 100,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.code() == code)
            .ok_or_else(|| Error::Domain(format!("unknown land cover code {code}")))
    }

    pub fn label(self) -> &'static str {
        match self {
            LandCoverClass::Trees => "Trees",
            LandCoverClass::Shrub => "Shrub",
            LandCoverClass::Grass => "Grass",
            LandCoverClass::Cropland => "Cropland",
            LandCoverClass::BuiltUp => "Built-up",
            LandCoverClass::BareSparse => "Bare / Sparse",
            LandCoverClass::SnowIce => "Snow and ice",
            LandCoverClass::Water => "Water",
            LandCoverClass::Wetland => "Wetland",
            LandCoverClass::Mangroves => "Mangroves",
            LandCoverClass::MossLichen => "Moss and lichen",
        }
    }
}

impl TryFrom<u8> for LandCoverClass {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Self::from_code(code)
    }
}

impl From<LandCoverClass> for u8 {
    fn from(class: LandCoverClass) -> u8 {
        class.code()
    }
}

impl fmt::Display for LandCoverClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Half-open elevation interval `[lower_m, lower_m + 500)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElevationBand {
    pub lower_m: i32,
}

impl ElevationBand {
    pub fn upper_m(self) -> i32 {
        self.lower_m + ELEVATION_BAND_WIDTH as i32
    }

    pub fn contains(self, elevation_m: f64) -> bool {
        elevation_m >= self.lower_m as f64 && elevation_m < self.upper_m() as f64
    }

    pub fn label(self) -> String {
        format!("{}-{}m", self.lower_m, self.upper_m())
    }
}

impl fmt::Display for ElevationBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn elevation_band(elevation_m: f64) -> ElevationBand {
    let lower = (elevation_m / ELEVATION_BAND_WIDTH).floor() * ELEVATION_BAND_WIDTH;
    ElevationBand {
        lower_m: lower as i32,
    }
}

/// Normalized difference vegetation index. `None` when both bands are zero.
pub fn ndvi(nir: f64, red: f64) -> Result<Option<f64>> {
    if nir < 0.0 || red < 0.0 {
        return Err(Error::Domain(format!(
            "negative reflectance (nir={nir}, red={red})"
        )));
    }
    let sum = nir + red;
    if sum == 0.0 {
        return Ok(None);
    }
    Ok(Some((nir - red) / sum))
}

/// A calendar month. Orders chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("validated month")
    }

    /// Months since year 0, for arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Inclusive consecutive range.
    pub fn range(start: YearMonth, end: YearMonth) -> Vec<YearMonth> {
        (start.ordinal()..=end.ordinal())
            .map(YearMonth::from_ordinal)
            .collect()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Config(format!("bad year in {s:?}")))?;
        let month = m
            .parse()
            .map_err(|_| Error::Config(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
