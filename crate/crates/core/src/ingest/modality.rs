use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input product families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    S2,
    S1,
    Viirs,
    Era5,
    TerraClimate,
    Srtm,
    Location,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::S2,
        Modality::S1,
        Modality::Viirs,
        Modality::Era5,
        Modality::TerraClimate,
        Modality::Srtm,
        Modality::Location,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::S2 => "S2",
            Modality::S1 => "S1",
            Modality::Viirs => "VIIRS",
            Modality::Era5 => "ERA5",
            Modality::TerraClimate => "TerraClimate",
            Modality::Srtm => "SRTM",
            Modality::Location => "Location",
        }
    }

    /// Short label used in ablation tables.
    pub fn short_label(self) -> &'static str {
        match self {
            Modality::TerraClimate => "TC",
            Modality::Location => "loc.",
            other => other.name(),
        }
    }

    pub fn variability(self) -> Variability {
        match self {
            Modality::S2 | Modality::S1 => Variability::SpaceTime,
            Modality::Viirs | Modality::Era5 | Modality::TerraClimate => Variability::TimeOnly,
            Modality::Srtm | Modality::Location => Variability::Static,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    /// Accepts canonical names and the short table labels, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let m = match s.trim().to_ascii_lowercase().as_str() {
            "s2" | "sentinel-2" | "sentinel2" => Modality::S2,
            "s1" | "sentinel-1" | "sentinel1" => Modality::S1,
            "viirs" => Modality::Viirs,
            "era5" | "era5-land" => Modality::Era5,
            "terraclimate" | "tc" => Modality::TerraClimate,
            "srtm" => Modality::Srtm,
            "location" | "loc" | "loc." => Modality::Location,
            _ => return Err(Error::Config(format!("unknown modality {s:?}"))),
        };
        Ok(m)
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variability {
    SpaceTime,
    TimeOnly,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregator {
    Mean,
    Sum,
    Median,
}

impl Aggregator {
    /// Reduces a set of valid values. Values are sorted first so the result
    /// does not depend on input order.
    pub fn reduce(self, values: &mut [f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        Some(match self {
            Aggregator::Sum => values.iter().sum(),
            Aggregator::Mean => values.iter().sum::<f64>() / n as f64,
            Aggregator::Median => {
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        })
    }
}

pub const S2_BANDS: [&str; 10] = [
    "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12",
];
pub const NDVI_BAND: &str = "NDVI";

/// Static description of one input product: its bands (as stored in the
/// input files), how it varies, and how sub-monthly data is reduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: Modality,
    pub bands: Vec<String>,
    pub variability: Variability,
    pub aggregators: Vec<Aggregator>,
    pub native_resolution_m: f64,
    /// Append an NDVI band computed from B8 (NIR) and B4 (red).
    #[serde(default)]
    pub derive_ndvi: bool,
}

impl ModalitySpec {
    pub fn default_for(modality: Modality) -> ModalitySpec {
        let (bands, aggregators, res, ndvi): (Vec<&str>, Vec<Aggregator>, f64, bool) =
            match modality {
                Modality::S2 => (S2_BANDS.to_vec(), vec![Aggregator::Median; 10], 10.0, true),
                Modality::S1 => (vec!["VV", "VH"], vec![Aggregator::Mean; 2], 10.0, false),
                Modality::Viirs => (vec!["DNB_avg"], vec![Aggregator::Mean], 463.8, false),
                Modality::Era5 => (
                    vec!["precipitation", "temperature"],
                    vec![Aggregator::Sum, Aggregator::Mean],
                    11_132.0,
                    false,
                ),
                Modality::TerraClimate => (
                    vec![
                        "climate_water_deficit",
                        "soil_moisture",
                        "actual_evapotranspiration",
                    ],
                    vec![Aggregator::Mean; 3],
                    4_638.3,
                    false,
                ),
                Modality::Srtm => (vec!["elevation"], vec![Aggregator::Mean], 30.0, false),
                Modality::Location => (vec!["latitude", "longitude"], vec![], 0.0, false),
            };
        ModalitySpec {
            name: modality,
            bands: bands.into_iter().map(String::from).collect(),
            variability: modality.variability(),
            aggregators,
            native_resolution_m: res,
            derive_ndvi: ndvi,
        }
    }

    pub fn defaults() -> Vec<ModalitySpec> {
        Modality::ALL.into_iter().map(Self::default_for).collect()
    }

    /// Bands present in the model features, including derived ones.
    /// Terrain gains a slope band derived from elevation.
    pub fn feature_bands(&self) -> Vec<String> {
        let mut bands = self.bands.clone();
        if self.derive_ndvi {
            bands.push(NDVI_BAND.to_string());
        }
        if self.name == Modality::Srtm {
            bands.push("slope".to_string());
        }
        bands
    }

    pub fn validate(&self) -> Result<()> {
        if self.variability != self.name.variability() {
            return Err(Error::Config(format!(
                "{} must have variability {:?}",
                self.name,
                self.name.variability()
            )));
        }
        if self.name != Modality::Location && self.aggregators.len() != self.bands.len() {
            return Err(Error::Config(format!(
                "{}: {} aggregators for {} bands",
                self.name,
                self.aggregators.len(),
                self.bands.len()
            )));
        }
        if self.derive_ndvi {
            for b in ["B4", "B8"] {
                if !self.bands.iter().any(|x| x == b) {
                    return Err(Error::Config(format!("{}: NDVI needs band {b}", self.name)));
                }
            }
        }
        Ok(())
    }

    pub fn band_index(&self, band: &str) -> Option<usize> {
        self.bands.iter().position(|b| b == band)
    }
}
