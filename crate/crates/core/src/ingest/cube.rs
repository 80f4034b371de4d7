use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::modality::{Aggregator, Modality, ModalitySpec, Variability, NDVI_BAND};
use crate::domain::{ndvi, YearMonth};
use crate::error::{Error, Result};
use crate::geo::{BBox, Crs, Grid};
use crate::raster::{read_geotiff, Raster};

/// Per-pixel monthly composites, laid out `[row][col][month][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeLayer {
    pub bands: Vec<String>,
    pub values: Vec<f32>,
    /// One flag per `[row][col][month]`; invalid cells hold 0.
    pub valid: Vec<bool>,
}

/// A regional monthly series, laid out `[month][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeOnlyLayer {
    pub bands: Vec<String>,
    pub values: Vec<f32>,
}

/// Terrain attributes, laid out `[row][col][band]` with bands elevation, slope.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainLayer {
    pub bands: Vec<String>,
    pub values: Vec<f32>,
    /// One flag per pixel.
    pub valid: Vec<bool>,
}

/// All inputs co-registered on one grid over a consecutive run of months.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCube {
    pub id: String,
    pub grid: Grid,
    pub months: Vec<YearMonth>,
    pub specs: Vec<ModalitySpec>,
    pub space_time: BTreeMap<Modality, SpaceTimeLayer>,
    pub time_only: BTreeMap<Modality, TimeOnlyLayer>,
    pub terrain: Option<TerrainLayer>,
    /// Land cover codes per pixel, 0 where unknown.
    pub land_cover: Option<Vec<u8>>,
}

impl InputCube {
    pub fn modalities(&self) -> Vec<Modality> {
        self.specs.iter().map(|s| s.name).collect()
    }

    pub fn spec(&self, m: Modality) -> Option<&ModalitySpec> {
        self.specs.iter().find(|s| s.name == m)
    }

    pub fn month_index(&self, ym: YearMonth) -> Option<usize> {
        let first = self.months.first()?;
        let i = ym.ordinal() - first.ordinal();
        (i >= 0 && (i as usize) < self.months.len()).then_some(i as usize)
    }

    /// Checks that every layer matches the grid, month count and specs.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let (n, t) = (self.grid.len(), self.months.len());
        if t == 0 {
            return Err(Error::Data("cube has no months".into()));
        }
        for w in self.months.windows(2) {
            if w[1].ordinal() != w[0].ordinal() + 1 {
                return Err(Error::Data(format!(
                    "cube months not consecutive at {}",
                    w[1]
                )));
            }
        }
        let check = |dimension: &'static str, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    dimension,
                    expected,
                    found,
                })
            }
        };
        for spec in &self.specs {
            let bands = spec.feature_bands().len();
            match spec.variability {
                Variability::SpaceTime => {
                    let l = self
                        .space_time
                        .get(&spec.name)
                        .ok_or_else(|| Error::Data(format!("cube lacks layer {}", spec.name)))?;
                    check("space-time bands", bands, l.bands.len())?;
                    check("space-time values", n * t * bands, l.values.len())?;
                    check("space-time mask", n * t, l.valid.len())?;
                }
                Variability::TimeOnly => {
                    let l = self
                        .time_only
                        .get(&spec.name)
                        .ok_or_else(|| Error::Data(format!("cube lacks layer {}", spec.name)))?;
                    check("time-only bands", bands, l.bands.len())?;
                    check("time-only values", t * bands, l.values.len())?;
                }
                Variability::Static if spec.name == Modality::Srtm => {
                    let l = self
                        .terrain
                        .as_ref()
                        .ok_or_else(|| Error::Data("cube lacks terrain layer".into()))?;
                    check("terrain values", n * 2, l.values.len())?;
                    check("terrain mask", n, l.valid.len())?;
                }
                Variability::Static => {}
            }
        }
        if let Some(lc) = &self.land_cover {
            check("land cover", n, lc.len())?;
        }
        Ok(())
    }

    /// True when every gridded input is valid at `(row, col)` for the
    /// `len` months ending at month index `end`.
    pub fn pixel_valid(&self, row: usize, col: usize, end: usize, len: usize) -> bool {
        let t = self.months.len();
        if len == 0 || end >= t || end + 1 < len {
            return false;
        }
        let p = row * self.grid.width + col;
        let months_ok = self.space_time.values().all(|l| {
            l.valid[p * t + end + 1 - len..=p * t + end]
                .iter()
                .all(|&v| v)
        });
        months_ok && self.terrain.as_ref().is_none_or(|l| l.valid[p])
    }
}

/// One line of a cube manifest: input files for a modality at a date.
/// Static modalities leave the date empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub modality: String,
    pub files: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<u32>,
}

impl ManifestEntry {
    fn date(&self) -> Result<Option<NaiveDate>> {
        match (self.year, self.month) {
            (Some(y), Some(m)) => NaiveDate::from_ymd_opt(y, m, self.day.unwrap_or(1))
                .map(Some)
                .ok_or_else(|| Error::Data(format!("manifest entry has invalid date {y}-{m}"))),
            (None, None) => Ok(None),
            _ => Err(Error::Data(format!(
                "manifest entry for {} needs both year and month",
                self.modality
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeManifest {
    pub entries: Vec<ManifestEntry>,
}

pub const LAND_COVER_ENTRY: &str = "LandCover";

/// Reads a manifest and resolves its file paths against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CubeManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(manifest
        .entries
        .into_iter()
        .map(|mut e| {
            e.files = e.files.into_iter().map(|f| base.join(f)).collect();
            e
        })
        .collect())
}

/// Reduces a dated series to one value per requested month. Non-finite values
/// are ignored; a month without values yields `None`.
pub fn resample_to_monthly(
    series: &[(NaiveDate, f64)],
    aggregator: Aggregator,
    months: &[YearMonth],
) -> Vec<Option<f64>> {
    let mut bins: BTreeMap<YearMonth, Vec<f64>> = BTreeMap::new();
    for &(d, v) in series {
        if v.is_finite() {
            bins.entry(YearMonth::of(d)).or_default().push(v);
        }
    }
    months
        .iter()
        .map(|m| bins.get_mut(m).and_then(|vals| aggregator.reduce(vals)))
        .collect()
}

/// Terrain slope in degrees from a 3×3 Horn kernel, with edge pixels
/// replicated. A pixel whose window touches an invalid elevation is invalid.
pub fn horn_slope_deg(
    elevation: &[f32],
    valid: &[bool],
    width: usize,
    height: usize,
    dx: f64,
    dy: f64,
) -> (Vec<f32>, Vec<bool>) {
    let mut slope = vec![0.0f32; width * height];
    let mut ok = vec![false; width * height];
    for r in 0..height {
        for c in 0..width {
            let mut z = [[0.0f64; 3]; 3];
            let mut all = true;
            for (i, dr) in [-1isize, 0, 1].into_iter().enumerate() {
                for (j, dc) in [-1isize, 0, 1].into_iter().enumerate() {
                    let rr = (r as isize + dr).clamp(0, height as isize - 1) as usize;
                    let cc = (c as isize + dc).clamp(0, width as isize - 1) as usize;
                    let p = rr * width + cc;
                    all &= valid[p];
                    z[i][j] = elevation[p] as f64;
                }
            }
            if !all {
                continue;
            }
            let dzdx = ((z[0][2] + 2.0 * z[1][2] + z[2][2]) - (z[0][0] + 2.0 * z[1][0] + z[2][0]))
                / (8.0 * dx);
            let dzdy = ((z[2][0] + 2.0 * z[2][1] + z[2][2]) - (z[0][0] + 2.0 * z[0][1] + z[0][2]))
                / (8.0 * dy);
            let p = r * width + c;
            slope[p] = dzdx.hypot(dzdy).atan().to_degrees() as f32;
            ok[p] = true;
        }
    }
    (slope, ok)
}

/// Target pixel centers expressed in the CRS of each source raster.
struct PixelCoords {
    grid: Grid,
    cache: Mutex<HashMap<Crs, Arc<Vec<(f64, f64)>>>>,
}

impl PixelCoords {
    fn new(grid: Grid) -> Self {
        PixelCoords {
            grid,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn in_crs(&self, crs: Crs) -> Arc<Vec<(f64, f64)>> {
        if let Some(c) = self.cache.lock().unwrap().get(&crs) {
            return c.clone();
        }
        let g = &self.grid;
        let mut pts = Vec::with_capacity(g.len());
        for r in 0..g.height {
            for c in 0..g.width {
                let (x, y) = g.pixel_center(r, c);
                pts.push(if crs == g.crs {
                    (x, y)
                } else {
                    let (lat, lon) = g.crs.to_wgs84(x, y);
                    crs.from_wgs84(lat, lon)
                });
            }
        }
        let pts = Arc::new(pts);
        self.cache.lock().unwrap().insert(crs, pts.clone());
        pts
    }

    /// Band planes resampled onto the target grid, NaN where invalid.
    fn resample(&self, raster: &Raster, bilinear: bool) -> Vec<Vec<f32>> {
        let pts = self.in_crs(raster.grid.crs);
        (0..raster.band_count())
            .map(|b| {
                pts.iter()
                    .map(|&(x, y)| {
                        let v = if bilinear {
                            raster.sample_bilinear(b, x, y)
                        } else {
                            raster.sample_nearest(b, x, y)
                        };
                        v.unwrap_or(f32::NAN)
                    })
                    .collect()
            })
            .collect()
    }
}

fn read_checked(path: &Path, bands: usize) -> Result<Raster> {
    let r = read_geotiff(path)?;
    if r.band_count() != bands {
        return Err(Error::raster(
            path,
            format!("expected {bands} bands, found {}", r.band_count()),
        ));
    }
    Ok(r)
}

/// Loads a cube on the UTM grid covering `bbox` at `pixel_size` meters.
pub fn load_cube(
    id: &str,
    entries: &[ManifestEntry],
    specs: &[ModalitySpec],
    months: &[YearMonth],
    bbox: &BBox,
    pixel_size: f64,
) -> Result<InputCube> {
    let grid = Grid::covering_bbox(bbox, pixel_size)?;
    load_cube_on_grid(id, entries, specs, months, grid)
}

/// Loads every modality in `specs` onto `grid` for the requested months.
/// Spatial inputs are resampled bilinearly and composited per month; regional
/// inputs are averaged over the grid and reduced per month.
pub fn load_cube_on_grid(
    id: &str,
    entries: &[ManifestEntry],
    specs: &[ModalitySpec],
    months: &[YearMonth],
    grid: Grid,
) -> Result<InputCube> {
    grid.validate()?;
    if months.is_empty() {
        return Err(Error::Config("cube needs at least one month".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let mut by_modality: BTreeMap<Modality, Vec<&ManifestEntry>> = BTreeMap::new();
    let mut land_cover_entries = Vec::new();
    for e in entries {
        if e.modality.eq_ignore_ascii_case(LAND_COVER_ENTRY) {
            land_cover_entries.push(e);
        } else {
            by_modality.entry(e.modality.parse()?).or_default().push(e);
        }
    }
    let coords = PixelCoords::new(grid);
    let mut cube = InputCube {
        id: id.to_string(),
        grid,
        months: months.to_vec(),
        specs: specs.to_vec(),
        space_time: BTreeMap::new(),
        time_only: BTreeMap::new(),
        terrain: None,
        land_cover: None,
    };
    for spec in specs {
        let es = by_modality
            .get(&spec.name)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        match spec.variability {
            Variability::SpaceTime => {
                let layer = load_space_time(spec, es, months, &coords)?;
                cube.space_time.insert(spec.name, layer);
            }
            Variability::TimeOnly => {
                let layer = load_time_only(spec, es, months, &coords)?;
                cube.time_only.insert(spec.name, layer);
            }
            Variability::Static if spec.name == Modality::Srtm => {
                cube.terrain = Some(load_terrain(spec, es, &coords)?);
            }
            Variability::Static => {}
        }
    }
    if !land_cover_entries.is_empty() {
        cube.land_cover = Some(load_land_cover(&land_cover_entries, &coords)?);
    }
    cube.validate()?;
    Ok(cube)
}

fn entries_by_month<'a>(
    spec: &ModalitySpec,
    entries: &[&'a ManifestEntry],
    months: &[YearMonth],
) -> Result<Vec<Vec<(NaiveDate, &'a Path)>>> {
    let first = months[0].ordinal();
    let mut per_month = vec![Vec::new(); months.len()];
    for e in entries {
        let date = e
            .date()?
            .ok_or_else(|| Error::Data(format!("{} entries need a year and month", spec.name)))?;
        let i = YearMonth::of(date).ordinal() - first;
        if i >= 0 && (i as usize) < months.len() {
            per_month[i as usize].extend(e.files.iter().map(|f| (date, f.as_path())));
        }
    }
    let gaps: Vec<String> = per_month
        .iter()
        .zip(months)
        .filter(|(f, _)| f.is_empty())
        .map(|(_, m)| m.to_string())
        .collect();
    if !gaps.is_empty() {
        return Err(Error::MissingMonths {
            modality: spec.name.to_string(),
            gaps,
        });
    }
    Ok(per_month)
}

fn load_space_time(
    spec: &ModalitySpec,
    entries: &[&ManifestEntry],
    months: &[YearMonth],
    coords: &PixelCoords,
) -> Result<SpaceTimeLayer> {
    let per_month = entries_by_month(spec, entries, months)?;
    let n_in = spec.bands.len();
    let bands = spec.feature_bands();
    let n_out = bands.len();
    let ndvi_idx = spec.derive_ndvi.then(|| {
        (
            spec.band_index("B8").unwrap(),
            spec.band_index("B4").unwrap(),
        )
    });
    let composites: Vec<(Vec<f32>, Vec<bool>)> = per_month
        .par_iter()
        .map(|files| -> Result<(Vec<f32>, Vec<bool>)> {
            let scenes: Vec<Vec<Vec<f32>>> = files
                .iter()
                .map(|(_, f)| Ok(coords.resample(&read_checked(f, n_in)?, true)))
                .collect::<Result<_>>()?;
            let n = coords.grid.len();
            let mut values = vec![0.0f32; n * n_out];
            let mut valid = vec![false; n];
            let mut buf = Vec::with_capacity(scenes.len());
            for p in 0..n {
                let usable: Vec<&Vec<Vec<f32>>> = scenes
                    .iter()
                    .filter(|s| s.iter().all(|plane| !plane[p].is_nan()))
                    .collect();
                if usable.is_empty() {
                    continue;
                }
                let out = &mut values[p * n_out..(p + 1) * n_out];
                for b in 0..n_in {
                    buf.clear();
                    buf.extend(usable.iter().map(|s| s[b][p] as f64));
                    out[b] = spec.aggregators[b].reduce(&mut buf).unwrap_or(0.0) as f32;
                }
                let mut ok = true;
                if let Some((nir, red)) = ndvi_idx {
                    match ndvi(out[nir] as f64, out[red] as f64) {
                        Ok(Some(v)) => out[n_in] = v as f32,
                        _ => ok = false,
                    }
                }
                if ok {
                    valid[p] = true;
                } else {
                    out.fill(0.0);
                }
            }
            Ok((values, valid))
        })
        .collect::<Result<_>>()?;

    let (n, t) = (coords.grid.len(), months.len());
    let mut values = vec![0.0f32; n * t * n_out];
    let mut valid = vec![false; n * t];
    for (ti, (mv, mok)) in composites.iter().enumerate() {
        for p in 0..n {
            valid[p * t + ti] = mok[p];
            let dst = (p * t + ti) * n_out;
            values[dst..dst + n_out].copy_from_slice(&mv[p * n_out..(p + 1) * n_out]);
        }
    }
    debug_assert!(bands.iter().filter(|b| *b == NDVI_BAND).count() <= 1);
    Ok(SpaceTimeLayer {
        bands,
        values,
        valid,
    })
}

fn load_time_only(
    spec: &ModalitySpec,
    entries: &[&ManifestEntry],
    months: &[YearMonth],
    coords: &PixelCoords,
) -> Result<TimeOnlyLayer> {
    let per_month = entries_by_month(spec, entries, months)?;
    let n_in = spec.bands.len();
    let files: Vec<(NaiveDate, &Path)> = per_month.into_iter().flatten().collect();
    let means: Vec<(NaiveDate, Vec<f64>)> = files
        .par_iter()
        .map(|&(date, path)| {
            let planes = coords.resample(&read_checked(path, n_in)?, false);
            let m = planes
                .iter()
                .map(|plane| {
                    let (sum, cnt) = plane
                        .iter()
                        .filter(|v| !v.is_nan())
                        .fold((0.0f64, 0usize), |(s, c), &v| (s + v as f64, c + 1));
                    if cnt == 0 {
                        f64::NAN
                    } else {
                        sum / cnt as f64
                    }
                })
                .collect();
            Ok((date, m))
        })
        .collect::<Result<_>>()?;

    let t = months.len();
    let mut values = vec![0.0f32; t * n_in];
    let mut gaps = Vec::new();
    for b in 0..n_in {
        let series: Vec<(NaiveDate, f64)> = means.iter().map(|(d, m)| (*d, m[b])).collect();
        for (ti, v) in resample_to_monthly(&series, spec.aggregators[b], months)
            .into_iter()
            .enumerate()
        {
            match v {
                Some(v) => values[ti * n_in + b] = v as f32,
                None => gaps.push(format!("{} ({})", months[ti], spec.bands[b])),
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingMonths {
            modality: spec.name.to_string(),
            gaps,
        });
    }
    Ok(TimeOnlyLayer {
        bands: spec.feature_bands(),
        values,
    })
}

fn load_terrain(
    spec: &ModalitySpec,
    entries: &[&ManifestEntry],
    coords: &PixelCoords,
) -> Result<TerrainLayer> {
    let mut paths: Vec<&Path> = entries
        .iter()
        .flat_map(|e| e.files.iter().map(PathBuf::as_path))
        .collect();
    if paths.is_empty() {
        return Err(Error::Data(format!("no input files for {}", spec.name)));
    }
    paths.sort();
    let n = coords.grid.len();
    let mut elev = vec![f32::NAN; n];
    for path in paths {
        let plane = coords.resample(&read_checked(path, 1)?, true).remove(0);
        for (dst, v) in elev.iter_mut().zip(plane) {
            if dst.is_nan() {
                *dst = v;
            }
        }
    }
    let valid_elev: Vec<bool> = elev.iter().map(|v| !v.is_nan()).collect();
    let g = &coords.grid;
    let (dx, dy) = g.pixel_size_m();
    let (slope, valid) = horn_slope_deg(&elev, &valid_elev, g.width, g.height, dx, dy);
    let mut values = vec![0.0f32; n * 2];
    for p in 0..n {
        if valid[p] {
            values[2 * p] = elev[p];
            values[2 * p + 1] = slope[p];
        }
    }
    Ok(TerrainLayer {
        bands: spec.feature_bands(),
        values,
        valid,
    })
}

fn load_land_cover(entries: &[&ManifestEntry], coords: &PixelCoords) -> Result<Vec<u8>> {
    let mut codes = vec![0u8; coords.grid.len()];
    let mut paths: Vec<&Path> = entries
        .iter()
        .flat_map(|e| e.files.iter().map(PathBuf::as_path))
        .collect();
    paths.sort();
    for path in paths {
        let plane = coords.resample(&read_checked(path, 1)?, false).remove(0);
        for (dst, v) in codes.iter_mut().zip(plane) {
            if *dst == 0 && v.is_finite() && (1.0..=255.0).contains(&v) {
                *dst = v as u8;
            }
        }
    }
    Ok(codes)
}
