use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{cap_lfmc, LandCoverClass, LfmcSample};
use crate::error::{Error, Result};
use crate::geo::BBox;
use crate::raster::Raster;

/// Names of the label CSV columns. Defaults follow the Globe-LFMC 2.0 table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub site: String,
    pub latitude: String,
    pub longitude: String,
    pub date: String,
    pub lfmc: String,
    pub species: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            site: "Sitename".into(),
            latitude: "Latitude (WGS84, EPSG:4326)".into(),
            longitude: "Longitude (WGS84, EPSG:4326)".into(),
            date: "Sampling date (YYYYMMDD)".into(),
            lfmc: "LFMC value (%)".into(),
            species: Some("Species collected".into()),
        }
    }
}

/// A data row that could not be turned into a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLabels {
    pub samples: Vec<LfmcSample>,
    /// Source row of each entry in `samples`.
    pub rows: Vec<usize>,
    pub rejects: Vec<Reject>,
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%Y%m%d", "%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

/// Parses the label table. Malformed rows are collected as rejects; a missing
/// required column fails the whole parse.
pub fn parse_labels<R: Read>(reader: R, columns: &ColumnMap) -> Result<ParsedLabels> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("label table has no column {name:?}")))
    };
    let i_site = find(&columns.site)?;
    let i_lat = find(&columns.latitude)?;
    let i_lon = find(&columns.longitude)?;
    let i_date = find(&columns.date)?;
    let i_lfmc = find(&columns.lfmc)?;
    let i_species = match &columns.species {
        Some(name) => headers.iter().position(|h| h.trim() == name),
        None => None,
    };

    let mut out = ParsedLabels::default();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(Reject {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&record, i_site, i_lat, i_lon, i_date, i_lfmc, i_species) {
            Ok(sample) => {
                out.samples.push(sample);
                out.rows.push(row);
            }
            Err(reason) => out.rejects.push(Reject { row, reason }),
        }
    }
    Ok(out)
}

fn parse_row(
    record: &csv::StringRecord,
    i_site: usize,
    i_lat: usize,
    i_lon: usize,
    i_date: usize,
    i_lfmc: usize,
    i_species: Option<usize>,
) -> std::result::Result<LfmcSample, String> {
    let field = |i: usize, name: &str| -> std::result::Result<&str, String> {
        match record.get(i).map(str::trim) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(format!("missing {name}")),
        }
    };
    let number = |i: usize, name: &str| -> std::result::Result<f64, String> {
        let v = field(i, name)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("{name} {v:?} is not a number"))
    };
    let site_id = field(i_site, "site")?.to_string();
    let latitude = number(i_lat, "latitude")?;
    let longitude = number(i_lon, "longitude")?;
    let date_str = field(i_date, "date")?;
    let date = parse_date(date_str).ok_or_else(|| format!("unparseable date {date_str:?}"))?;
    let lfmc_percent = number(i_lfmc, "LFMC value")?;
    let species = i_species
        .and_then(|i| record.get(i))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from);
    let sample = LfmcSample {
        site_id,
        latitude,
        longitude,
        date,
        lfmc_percent,
        species,
        land_cover: None,
        elevation_m: None,
    };
    sample.validate().map_err(|e| e.to_string())?;
    Ok(sample)
}

pub fn parse_labels_file(path: &Path, columns: &ColumnMap) -> Result<ParsedLabels> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(std::io::BufReader::new(file), columns)
}

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let r = DateRange { start, end };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start > self.end {
            return Err(Error::Config(format!(
                "date range start {} is after end {}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Keeps samples inside `bbox` and `range` (both inclusive), in input order.
pub fn filter_samples(
    samples: &[LfmcSample],
    bbox: &BBox,
    range: &DateRange,
) -> Result<Vec<LfmcSample>> {
    bbox.validate()?;
    range.validate()?;
    Ok(samples
        .iter()
        .filter(|s| bbox.contains(s.latitude, s.longitude) && range.contains(s.date))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentFlags {
    pub land_cover_missing: bool,
    pub elevation_missing: bool,
}

/// One label per (site, day) after merging duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteObservation {
    #[serde(flatten)]
    pub sample: LfmcSample,
    pub n_merged: usize,
    #[serde(default)]
    pub flags: EnrichmentFlags,
}

impl SiteObservation {
    pub fn key(&self) -> (&str, NaiveDate) {
        (&self.sample.site_id, self.sample.date)
    }
}

/// Merges samples sharing (site, date): the LFMC values are averaged and the
/// mean is then capped. Output is sorted by (site, date).
pub fn aggregate_same_day_site(samples: &[LfmcSample], cap: f64) -> Result<Vec<SiteObservation>> {
    let mut groups: BTreeMap<(&str, NaiveDate), Vec<&LfmcSample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.site_id.as_str(), s.date))
            .or_default()
            .push(s);
    }
    groups
        .into_values()
        .map(|group| {
            let n = group.len();
            let mean =
                |f: fn(&LfmcSample) -> f64| group.iter().map(|s| f(s)).sum::<f64>() / n as f64;
            let first = group[0];
            let mut species: Vec<&str> =
                group.iter().filter_map(|s| s.species.as_deref()).collect();
            species.sort_unstable();
            species.dedup();
            let sample = LfmcSample {
                site_id: first.site_id.clone(),
                latitude: mean(|s| s.latitude),
                longitude: mean(|s| s.longitude),
                date: first.date,
                lfmc_percent: cap_lfmc(mean(|s| s.lfmc_percent), cap)?,
                species: (!species.is_empty()).then(|| species.join(";")),
                land_cover: first.land_cover,
                elevation_m: first.elevation_m,
            };
            Ok(SiteObservation {
                sample,
                n_merged: n,
                flags: EnrichmentFlags::default(),
            })
        })
        .collect()
}

/// Point lookup of the static site attributes.
pub trait StaticLookup {
    fn land_cover_code(&self, lat: f64, lon: f64) -> Option<u8>;
    fn elevation_m(&self, lat: f64, lon: f64) -> Option<f64>;
}

/// Static layers read from GeoTIFFs: a land cover code raster and an
/// elevation raster, each sampled at the nearest pixel.
#[derive(Debug, Clone, Default)]
pub struct StaticRasters {
    pub land_cover: Option<Raster>,
    pub elevation: Option<Raster>,
}

impl StaticRasters {
    pub fn open(land_cover: Option<&Path>, elevation: Option<&Path>) -> Result<Self> {
        Ok(StaticRasters {
            land_cover: land_cover.map(crate::raster::read_geotiff).transpose()?,
            elevation: elevation.map(crate::raster::read_geotiff).transpose()?,
        })
    }
}

fn sample_point(r: &Raster, lat: f64, lon: f64) -> Option<f32> {
    let (x, y) = r.grid.crs.from_wgs84(lat, lon);
    r.sample_nearest(0, x, y)
}

impl StaticLookup for StaticRasters {
    fn land_cover_code(&self, lat: f64, lon: f64) -> Option<u8> {
        let v = sample_point(self.land_cover.as_ref()?, lat, lon)?;
        (v >= 0.0 && v <= 255.0 && v.fract() == 0.0).then_some(v as u8)
    }

    fn elevation_m(&self, lat: f64, lon: f64) -> Option<f64> {
        sample_point(self.elevation.as_ref()?, lat, lon).map(f64::from)
    }
}

/// Attaches land cover and elevation. Observations whose lookup fails, or
/// whose land cover code is not a known class, are kept and flagged.
pub fn enrich_observations(
    observations: Vec<SiteObservation>,
    lookup: &dyn StaticLookup,
) -> Vec<SiteObservation> {
    observations
        .into_iter()
        .map(|mut o| {
            let (lat, lon) = (o.sample.latitude, o.sample.longitude);
            o.sample.land_cover = lookup
                .land_cover_code(lat, lon)
                .and_then(|c| LandCoverClass::from_code(c).ok());
            o.sample.elevation_m = lookup.elevation_m(lat, lon);
            o.flags = EnrichmentFlags {
                land_cover_missing: o.sample.land_cover.is_none(),
                elevation_missing: o.sample.elevation_m.is_none(),
            };
            o
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn sample(site: &str, date: NaiveDate, v: f64) -> LfmcSample {
        LfmcSample {
            site_id: site.into(),
            latitude: 34.0,
            longitude: -118.0,
            date,
            lfmc_percent: v,
            species: None,
            land_cover: None,
            elevation_m: None,
        }
    }

    const CSV: &str = r#"Sitename,"Latitude (WGS84, EPSG:4326)","Longitude (WGS84, EPSG:4326)",Sampling date (YYYYMMDD),LFMC value (%),Species collected
"Site A",34.1,-118.2,20190615,85.5,Adenostoma fasciculatum
Site B,34.2,-118.3,2019-07-01,120,
Site C,abc,-118.3,20190701,120,
Site D,34.2,-118.3,20190732,120,
Site E,34.2,-118.3,20190701,,
Site F,95.0,-118.3,20190701,100,
"#;

    #[test]
    fn parses_and_collects_rejects() {
        let p = parse_labels(CSV.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(p.samples.len(), 2);
        assert_eq!(p.rows, vec![1, 2]);
        assert_eq!(p.samples[0].site_id, "Site A");
        assert_eq!(p.samples[0].date, d(2019, 6, 15));
        assert_eq!(
            p.samples[0].species.as_deref(),
            Some("Adenostoma fasciculatum")
        );
        assert_eq!(p.samples[1].species, None);
        let rows: Vec<usize> = p.rejects.iter().map(|r| r.row).collect();
        assert_eq!(rows, vec![3, 4, 5, 6]);
        assert!(p.rejects[0].reason.contains("latitude"));
        assert!(p.rejects[3].reason.contains("latitude"));
    }

    #[test]
    fn missing_column_is_an_error() {
        let csv = "site,lat\nA,1\n";
        assert!(matches!(
            parse_labels(csv.as_bytes(), &ColumnMap::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn filter_is_inclusive_and_rejects_inverted_range() {
        let s = vec![
            sample("a", d(2019, 1, 1), 50.0),
            sample("a", d(2019, 12, 31), 50.0),
            sample("a", d(2020, 1, 1), 50.0),
        ];
        let r = DateRange::new(d(2019, 1, 1), d(2019, 12, 31)).unwrap();
        let kept = filter_samples(&s, &BBox::CONUS, &r).unwrap();
        assert_eq!(kept.len(), 2);
        let inverted = DateRange {
            start: d(2020, 1, 1),
            end: d(2019, 1, 1),
        };
        assert!(matches!(
            filter_samples(&s, &BBox::CONUS, &inverted),
            Err(Error::Config(_))
        ));
        let outside = LfmcSample {
            latitude: 10.0,
            ..s[0].clone()
        };
        assert!(filter_samples(&[outside], &BBox::CONUS, &r)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn aggregation_averages_then_caps() {
        let s = vec![
            sample("a", d(2019, 6, 1), 300.0),
            sample("a", d(2019, 6, 1), 320.0),
            sample("a", d(2019, 6, 2), 80.0),
            sample("b", d(2019, 6, 1), 90.0),
            sample("b", d(2019, 6, 1), 110.0),
        ];
        let obs = aggregate_same_day_site(&s, 302.0).unwrap();
        assert_eq!(obs.len(), 3);
        assert_eq!(obs[0].sample.lfmc_percent, 302.0);
        assert_eq!(obs[0].n_merged, 2);
        assert_eq!(obs[1].sample.lfmc_percent, 80.0);
        assert_eq!(obs[2].sample.lfmc_percent, 100.0);
    }

    struct Fixed(Option<u8>, Option<f64>);

    impl StaticLookup for Fixed {
        fn land_cover_code(&self, _: f64, _: f64) -> Option<u8> {
            self.0
        }
        fn elevation_m(&self, _: f64, _: f64) -> Option<f64> {
            self.1
        }
    }

    #[test]
    fn enrichment_flags_missing_values() {
        let obs = aggregate_same_day_site(&[sample("a", d(2019, 6, 1), 80.0)], 302.0).unwrap();
        let e = enrich_observations(obs.clone(), &Fixed(Some(20), Some(812.0)));
        assert_eq!(e[0].sample.land_cover, Some(LandCoverClass::Shrub));
        assert_eq!(e[0].sample.elevation_m, Some(812.0));
        assert_eq!(e[0].flags, EnrichmentFlags::default());
        let e = enrich_observations(obs, &Fixed(Some(7), None));
        assert!(e[0].flags.land_cover_missing && e[0].flags.elevation_missing);
        assert_eq!(e[0].sample.land_cover, None);
    }

    proptest! {
        #[test]
        fn aggregation_key_invariants(
            raw in prop::collection::vec((0usize..4, 0u32..5, 0.0f64..400.0), 1..60)
        ) {
            let samples: Vec<LfmcSample> = raw
                .iter()
                .map(|&(s, day, v)| sample(&format!("s{s}"), d(2020, 3, day + 1), v))
                .collect();
            let obs = aggregate_same_day_site(&samples, 302.0).unwrap();
            let keys: Vec<_> = obs.iter().map(|o| o.key()).collect();
            let mut sorted = keys.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(&keys, &sorted);
            prop_assert_eq!(obs.iter().map(|o| o.n_merged).sum::<usize>(), samples.len());
            for o in &obs {
                prop_assert!(o.sample.lfmc_percent <= 302.0 && o.sample.lfmc_percent >= 0.0);
            }
            let mut rev = samples.clone();
            rev.reverse();
            let obs_rev = aggregate_same_day_site(&rev, 302.0).unwrap();
            for (a, b) in obs.iter().zip(&obs_rev) {
                prop_assert!((a.sample.lfmc_percent - b.sample.lfmc_percent).abs() < 1e-9);
            }
        }
    }
}
