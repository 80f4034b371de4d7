//! Deterministic synthetic scenes: a gridded region with seasonal vegetation,
//! weather and terrain, plus field labels consistent with it. Used for tests,
//! demos and benchmarks.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{FeatureLayout, InstanceMeta, TileInstance, TileShape};
use crate::domain::{normalize_target, LandCoverClass, LfmcSample, YearMonth, LFMC_CAP};
use crate::error::{Error, Result};
use crate::geo::{BBox, Crs, Grid};
use crate::ingest::horn_slope_deg;
use crate::ingest::labels::ColumnMap;
use crate::ingest::modality::NDVI_BAND;
use crate::ingest::{
    CubeManifest, EnrichmentFlags, InputCube, ManifestEntry, Modality, ModalitySpec,
    SiteObservation, SpaceTimeLayer, TerrainLayer, TimeOnlyLayer,
};
use crate::raster::{write_geotiff, GeoTiffOptions, Raster, SampleType};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneConfig {
    /// Grid height and width in pixels.
    pub size: usize,
    pub pixel_size: f64,
    pub start: YearMonth,
    pub months: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            size: 48,
            pixel_size: 10.0,
            start: YearMonth {
                year: 2021,
                month: 1,
            },
            months: 24,
            center_lat: 34.25,
            center_lon: -118.05,
            seed: 7,
        }
    }
}

pub struct Scene {
    pub config: SceneConfig,
    pub grid: Grid,
    pub months: Vec<YearMonth>,
    phase: (f64, f64),
}

/// Files written by [`Scene::write_files`].
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub labels_csv: PathBuf,
    pub land_cover: PathBuf,
    pub elevation: PathBuf,
}

const S2_BASE: [(f64, f64); 10] = [
    (0.05, 0.02),
    (0.08, 0.03),
    (0.12, -0.08),
    (0.14, 0.05),
    (0.20, 0.20),
    (0.22, 0.25),
    (0.15, 0.35),
    (0.16, 0.33),
    (0.30, -0.12),
    (0.25, -0.15),
];

impl Scene {
    pub fn new(config: SceneConfig) -> Scene {
        let crs = Crs::utm_for(config.center_lat, config.center_lon);
        let (cx, cy) = crs.from_wgs84(config.center_lat, config.center_lon);
        let half = config.size as f64 * config.pixel_size / 2.0;
        let snap = |v: f64| (v / config.pixel_size).round() * config.pixel_size;
        let grid = Grid {
            crs,
            origin_x: snap(cx - half),
            origin_y: snap(cy + half),
            pixel_width: config.pixel_size,
            pixel_height: config.pixel_size,
            width: config.size,
            height: config.size,
        };
        let months = YearMonth::range(config.start, config.start.offset(config.months as i64 - 1));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let phase = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
        Scene {
            config,
            grid,
            months,
            phase,
        }
    }

    /// Spatial vegetation vigor in [0.2, 0.8].
    pub fn vigor(&self, row: usize, col: usize) -> f64 {
        let n = self.config.size as f64;
        let a = 2.0 * PI * row as f64 / n + self.phase.0;
        let b = 2.0 * PI * col as f64 / n + self.phase.1;
        0.5 + 0.3 * a.sin() * b.cos()
    }

    /// Seasonal greenness in [0.2, 0.9], peaking in spring.
    pub fn greenness(&self, ym: YearMonth) -> f64 {
        0.55 + 0.35 * (2.0 * PI * (ym.month as f64 - 2.0) / 12.0).sin()
    }

    pub fn vegetation(&self, row: usize, col: usize, t: usize) -> f64 {
        self.vigor(row, col) * self.greenness(self.months[t])
    }

    /// Noise-free fuel moisture in percent.
    pub fn lfmc_percent(&self, row: usize, col: usize, t: usize) -> f64 {
        40.0 + 220.0 * self.vegetation(row, col, t)
    }

    pub fn elevation(&self, row: usize, col: usize) -> f64 {
        600.0 + 6.0 * row as f64 + 4.0 * col as f64
    }

    pub fn land_cover(&self, row: usize, col: usize) -> LandCoverClass {
        let h = self.config.size / 2;
        match (row < h, col < h) {
            (true, true) => LandCoverClass::Shrub,
            (true, false) => LandCoverClass::Trees,
            (false, true) => LandCoverClass::Grass,
            (false, false) => LandCoverClass::Shrub,
        }
    }

    fn s2_bands(veg: f64, scene: usize) -> [f64; 10] {
        let k = if scene == 0 { 0.98 } else { 1.02 };
        S2_BASE.map(|(a, b)| (a + b * veg) * k)
    }

    fn s1_bands(veg: f64) -> [f64; 2] {
        [-12.0 + 5.0 * veg, -19.0 + 6.0 * veg]
    }

    fn era5(&self, t: usize) -> [f64; 2] {
        let g = self.greenness(self.months[t]);
        [40.0 + 120.0 * g, 280.0 + 15.0 * (1.0 - g)]
    }

    fn terraclimate(&self, t: usize) -> [f64; 3] {
        let g = self.greenness(self.months[t]);
        [120.0 * (1.0 - g), 60.0 * g, 70.0 * g]
    }

    fn viirs(&self, t: usize) -> f64 {
        2.0 + 0.05 * t as f64
    }

    pub fn specs() -> Vec<ModalitySpec> {
        ModalitySpec::defaults()
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            min_lat: 90.0,
            max_lat: -90.0,
            min_lon: 180.0,
            max_lon: -180.0,
        };
        for (r, c) in [
            (0, 0),
            (0, self.grid.width - 1),
            (self.grid.height - 1, 0),
            (self.grid.height - 1, self.grid.width - 1),
        ] {
            let (lat, lon) = self.grid.pixel_center_wgs84(r, c);
            b.min_lat = b.min_lat.min(lat);
            b.max_lat = b.max_lat.max(lat);
            b.min_lon = b.min_lon.min(lon);
            b.max_lon = b.max_lon.max(lon);
        }
        b
    }

    /// The input cube built directly from the generating fields, as loading
    /// the written files would produce it on the scene grid.
    pub fn cube(&self) -> InputCube {
        let specs = Self::specs();
        let g = self.grid;
        let (n, t) = (g.len(), self.months.len());
        let mut space_time = BTreeMap::new();
        let mut s2 = vec![0.0f32; n * t * 11];
        let mut s1 = vec![0.0f32; n * t * 2];
        for r in 0..g.height {
            for c in 0..g.width {
                let p = r * g.width + c;
                for ti in 0..t {
                    let veg = self.vegetation(r, c, ti);
                    let a = Self::s2_bands(veg, 0);
                    let b = Self::s2_bands(veg, 1);
                    let dst = &mut s2[(p * t + ti) * 11..(p * t + ti + 1) * 11];
                    for i in 0..10 {
                        dst[i] = (0.5 * (a[i] as f32 as f64 + b[i] as f32 as f64)) as f32;
                    }
                    let (nir, red) = (dst[6] as f64, dst[2] as f64);
                    dst[10] = ((nir - red) / (nir + red)) as f32;
                    let v = Self::s1_bands(veg);
                    s1[(p * t + ti) * 2] = v[0] as f32;
                    s1[(p * t + ti) * 2 + 1] = v[1] as f32;
                }
            }
        }
        let bands = |m: Modality| ModalitySpec::default_for(m).feature_bands();
        space_time.insert(
            Modality::S2,
            SpaceTimeLayer {
                bands: bands(Modality::S2),
                values: s2,
                valid: vec![true; n * t],
            },
        );
        space_time.insert(
            Modality::S1,
            SpaceTimeLayer {
                bands: bands(Modality::S1),
                values: s1,
                valid: vec![true; n * t],
            },
        );
        let mut time_only = BTreeMap::new();
        time_only.insert(
            Modality::Viirs,
            TimeOnlyLayer {
                bands: bands(Modality::Viirs),
                values: (0..t).map(|ti| self.viirs(ti) as f32).collect(),
            },
        );
        time_only.insert(
            Modality::Era5,
            TimeOnlyLayer {
                bands: bands(Modality::Era5),
                values: (0..t)
                    .flat_map(|ti| self.era5(ti).map(|v| v as f32))
                    .collect(),
            },
        );
        time_only.insert(
            Modality::TerraClimate,
            TimeOnlyLayer {
                bands: bands(Modality::TerraClimate),
                values: (0..t)
                    .flat_map(|ti| self.terraclimate(ti).map(|v| v as f32))
                    .collect(),
            },
        );
        let elev: Vec<f32> = (0..n)
            .map(|p| self.elevation(p / g.width, p % g.width) as f32)
            .collect();
        let (slope, valid) = horn_slope_deg(
            &elev,
            &vec![true; n],
            g.width,
            g.height,
            g.pixel_width,
            g.pixel_height,
        );
        let terrain = TerrainLayer {
            bands: bands(Modality::Srtm),
            values: (0..n).flat_map(|p| [elev[p], slope[p]]).collect(),
            valid,
        };
        InputCube {
            id: format!("synthetic-{}", self.config.seed),
            grid: g,
            months: self.months.clone(),
            specs,
            space_time,
            time_only,
            terrain: Some(terrain),
            land_cover: Some(
                (0..n)
                    .map(|p| self.land_cover(p / g.width, p % g.width).code())
                    .collect(),
            ),
        }
    }

    /// Field labels at `n_sites` sites at least `margin` pixels from the edge,
    /// each sampled on `visits` distinct months from month index `first_month`
    /// on. Values carry seeded noise of up to `noise` percent.
    pub fn observations(
        &self,
        n_sites: usize,
        visits: usize,
        margin: usize,
        first_month: usize,
        noise: f64,
    ) -> Vec<SiteObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1));
        let size = self.config.size;
        let t = self.months.len();
        let mut out = Vec::new();
        for s in 0..n_sites {
            let row = rng.gen_range(margin..size - margin);
            let col = rng.gen_range(margin..size - margin);
            let (lat, lon) = self.grid.pixel_center_wgs84(row, col);
            let mut month_idx: Vec<usize> = (first_month.min(t)..t).collect();
            rand::seq::SliceRandom::shuffle(month_idx.as_mut_slice(), &mut rng);
            let mut chosen: Vec<usize> = month_idx.into_iter().take(visits).collect();
            chosen.sort_unstable();
            for ti in chosen {
                let day = rng.gen_range(1..=28);
                let ym = self.months[ti];
                let value =
                    (self.lfmc_percent(row, col, ti) + rng.gen_range(-noise..=noise)).max(0.0);
                out.push(SiteObservation {
                    sample: LfmcSample {
                        site_id: format!("site-{s:03}"),
                        latitude: lat,
                        longitude: lon,
                        date: NaiveDate::from_ymd_opt(ym.year, ym.month, day).unwrap(),
                        lfmc_percent: value,
                        species: Some("Adenostoma fasciculatum".into()),
                        land_cover: Some(self.land_cover(row, col)),
                        elevation_m: Some(self.elevation(row, col)),
                    },
                    n_merged: 1,
                    flags: EnrichmentFlags::default(),
                });
            }
        }
        out.sort_by(|a, b| a.key().cmp(&b.key()));
        out.dedup_by(|a, b| a.key() == b.key());
        out
    }

    /// Writes GeoTIFF inputs, a cube manifest, static layers and a label CSV.
    /// The label table repeats the first sample of each site on the same day
    /// and contains one malformed row.
    pub fn write_files(&self, dir: &Path, observations: &[SiteObservation]) -> Result<SceneFiles> {
        let g = self.grid;
        let n = g.len();
        let t = self.months.len();
        let opts = GeoTiffOptions {
            tile_size: 64,
            ..GeoTiffOptions::default()
        };
        let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        for sub in ["s2", "s1", "viirs", "era5", "terraclimate", "static"] {
            mkdir(&dir.join(sub))?;
        }
        let mut entries = Vec::new();
        let rel = |p: &str| PathBuf::from(p);

        for ti in 0..t {
            let ym = self.months[ti];
            for (scene, day) in [(0usize, 6u32), (1, 21)] {
                let mut bands = vec![vec![0.0f32; n]; 10];
                for p in 0..n {
                    let v = Self::s2_bands(self.vegetation(p / g.width, p % g.width, ti), scene);
                    for b in 0..10 {
                        bands[b][p] = v[b] as f32;
                    }
                }
                let name = format!("s2/{}_{day:02}.tif", ym);
                write_geotiff(
                    &dir.join(&name),
                    &Raster::new(g, bands, Some(-9999.0))?,
                    &opts,
                )?;
                entries.push(dated("S2", rel(&name), ym, day));
            }
            let mut s1 = vec![vec![0.0f32; n]; 2];
            for p in 0..n {
                let v = Self::s1_bands(self.vegetation(p / g.width, p % g.width, ti));
                s1[0][p] = v[0] as f32;
                s1[1][p] = v[1] as f32;
            }
            let name = format!("s1/{}.tif", ym);
            write_geotiff(&dir.join(&name), &Raster::new(g, s1, Some(-9999.0))?, &opts)?;
            entries.push(dated("S1", rel(&name), ym, 12));

            let viirs_grid = self.coarse_utm_grid(500.0);
            let name = format!("viirs/{}.tif", ym);
            let r = Raster::new(
                viirs_grid,
                vec![vec![self.viirs(ti) as f32; viirs_grid.len()]],
                None,
            )?;
            write_geotiff(&dir.join(&name), &r, &opts)?;
            entries.push(dated("VIIRS", rel(&name), ym, 1));

            let geo = self.coarse_geographic_grid(0.1);
            let e = self.era5(ti);
            for (half, day) in [(0usize, 1u32), (1, 16)] {
                let precip = if half == 0 { 0.4 * e[0] } else { 0.6 * e[0] };
                let name = format!("era5/{}_{day:02}.tif", ym);
                let r = Raster::new(
                    geo,
                    vec![vec![precip as f32; geo.len()], vec![e[1] as f32; geo.len()]],
                    None,
                )?;
                write_geotiff(&dir.join(&name), &r, &opts)?;
                entries.push(dated("ERA5", rel(&name), ym, day));
            }
            let tc = self.terraclimate(ti);
            let geo = self.coarse_geographic_grid(1.0 / 24.0);
            let name = format!("terraclimate/{}.tif", ym);
            let r = Raster::new(
                geo,
                tc.iter().map(|&v| vec![v as f32; geo.len()]).collect(),
                None,
            )?;
            write_geotiff(&dir.join(&name), &r, &opts)?;
            entries.push(dated("TerraClimate", rel(&name), ym, 1));
        }

        let elevation = dir.join("static/elevation.tif");
        let elev: Vec<f32> = (0..n)
            .map(|p| self.elevation(p / g.width, p % g.width) as f32)
            .collect();
        write_geotiff(
            &elevation,
            &Raster::new(g, vec![elev], Some(-32768.0))?,
            &opts,
        )?;
        entries.push(ManifestEntry {
            modality: "SRTM".into(),
            files: vec![rel("static/elevation.tif")],
            year: None,
            month: None,
            day: None,
        });
        let land_cover = dir.join("static/land_cover.tif");
        let codes: Vec<f32> = (0..n)
            .map(|p| self.land_cover(p / g.width, p % g.width).code() as f32)
            .collect();
        let lc_opts = GeoTiffOptions {
            sample_type: SampleType::U8,
            ..opts.clone()
        };
        write_geotiff(
            &land_cover,
            &Raster::new(g, vec![codes], Some(0.0))?,
            &lc_opts,
        )?;
        entries.push(ManifestEntry {
            modality: "LandCover".into(),
            files: vec![rel("static/land_cover.tif")],
            year: None,
            month: None,
            day: None,
        });

        let manifest = dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(&CubeManifest { entries })?;
        fs::write(&manifest, json).map_err(|e| Error::io(&manifest, e))?;

        let labels_csv = dir.join("labels.csv");
        write_labels_csv(&labels_csv, observations)?;
        Ok(SceneFiles {
            dir: dir.to_path_buf(),
            manifest,
            labels_csv,
            land_cover,
            elevation,
        })
    }

    fn coarse_utm_grid(&self, pixel: f64) -> Grid {
        let g = self.grid;
        let x0 = (g.origin_x / pixel).floor() * pixel - pixel;
        let y0 = (g.origin_y / pixel).ceil() * pixel + pixel;
        let ext_x = g.origin_x + g.width as f64 * g.pixel_width;
        let ext_y = g.origin_y - g.height as f64 * g.pixel_height;
        Grid {
            crs: g.crs,
            origin_x: x0,
            origin_y: y0,
            pixel_width: pixel,
            pixel_height: pixel,
            width: ((ext_x - x0) / pixel).ceil() as usize + 1,
            height: ((y0 - ext_y) / pixel).ceil() as usize + 1,
        }
    }

    fn coarse_geographic_grid(&self, deg: f64) -> Grid {
        let b = self.bbox();
        let lon0 = (b.min_lon / deg).floor() * deg - deg;
        let lat0 = (b.max_lat / deg).ceil() * deg + deg;
        Grid {
            crs: Crs::Wgs84,
            origin_x: lon0,
            origin_y: lat0,
            pixel_width: deg,
            pixel_height: deg,
            width: ((b.max_lon - lon0) / deg).ceil() as usize + 1,
            height: ((lat0 - b.min_lat) / deg).ceil() as usize + 1,
        }
    }
}

fn dated(modality: &str, file: PathBuf, ym: YearMonth, day: u32) -> ManifestEntry {
    ManifestEntry {
        modality: modality.into(),
        files: vec![file],
        year: Some(ym.year),
        month: Some(ym.month),
        day: Some(day),
    }
}

/// Writes observations as a label table with the default column names.
/// Each site's first observation is split into two same-day samples whose
/// mean equals the original value, and one malformed row is appended.
pub fn write_labels_csv(path: &Path, observations: &[SiteObservation]) -> Result<()> {
    let cols = ColumnMap::default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        cols.site.as_str(),
        cols.latitude.as_str(),
        cols.longitude.as_str(),
        cols.date.as_str(),
        cols.lfmc.as_str(),
        cols.species.as_deref().unwrap_or("Species collected"),
    ])?;
    let mut seen = std::collections::BTreeSet::new();
    for o in observations {
        let s = &o.sample;
        let date = s.date.format("%Y%m%d").to_string();
        let species = s.species.clone().unwrap_or_default();
        let mut row = |v: f64| {
            w.write_record([
                s.site_id.clone(),
                format!("{:.6}", s.latitude),
                format!("{:.6}", s.longitude),
                date.clone(),
                format!("{v:.3}"),
                species.clone(),
            ])
        };
        if seen.insert(s.site_id.clone()) {
            row(s.lfmc_percent - 4.0)?;
            row(s.lfmc_percent + 4.0)?;
        } else {
            row(s.lfmc_percent)?;
        }
    }
    w.write_record([
        "broken-row",
        "not-a-latitude",
        "-118.0",
        "20210101",
        "90",
        "",
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn instance_meta(i: usize, date: NaiveDate, lfmc_percent: f64) -> InstanceMeta {
    InstanceMeta {
        site_id: format!("inst-{i:05}"),
        date,
        latitude: 34.0,
        longitude: -118.0,
        lfmc_percent: Some(lfmc_percent),
        n_merged: 1,
        land_cover: Some(LandCoverClass::Shrub),
        elevation_m: Some(800.0),
        cube_id: "synthetic".into(),
        row: 0,
        col: 0,
    }
}

/// Instances over all default modalities whose target is a clamped affine
/// function of the tile-mean NDVI at the last timestep. All other values are
/// constant.
pub fn linear_ndvi_instances(n: usize, shape: TileShape, seed: u64) -> Vec<TileInstance> {
    let layout = Arc::new(FeatureLayout::new(&ModalitySpec::defaults(), shape));
    let s2 = layout.block_index(Modality::S2).expect("S2 block");
    let nb = layout.blocks[s2].bands.len();
    let ndvi = layout.blocks[s2]
        .bands
        .iter()
        .position(|b| b == NDVI_BAND)
        .expect("NDVI band");
    let (cells, t) = (shape.height * shape.width, shape.timesteps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut blocks: Vec<Vec<f32>> =
                layout.blocks.iter().map(|b| vec![0.5; b.len()]).collect();
            let level: f64 = rng.gen_range(0.05..0.95);
            let mut sum = 0.0f64;
            for c in 0..cells {
                let v = (level + rng.gen_range(-0.05..0.05)) as f32;
                blocks[s2][(c * t + t - 1) * nb + ndvi] = v;
                sum += v as f64;
            }
            let pooled = sum / cells as f64;
            let target = (0.1 + 0.8 * pooled).clamp(0.0, 1.0) as f32;
            let date = NaiveDate::from_ymd_opt(2021, rng.gen_range(1..=12), 15).unwrap();
            TileInstance {
                masks: vec![None; blocks.len()],
                blocks,
                target: Some(target),
                meta: instance_meta(i, date, target as f64 * LFMC_CAP),
                layout: layout.clone(),
            }
        })
        .collect()
}

/// Minimal 1x1x1 instances with the given (month, LFMC percent) labels.
pub fn monthly_instances(labels: &[(u32, f64)]) -> Vec<TileInstance> {
    let shape = TileShape::new(1, 1, 1).expect("valid shape");
    let layout = Arc::new(FeatureLayout::new(&ModalitySpec::defaults(), shape));
    labels
        .iter()
        .enumerate()
        .map(|(i, &(month, pct))| {
            let capped = pct.min(LFMC_CAP);
            TileInstance {
                blocks: layout.blocks.iter().map(|b| vec![0.5; b.len()]).collect(),
                masks: vec![None; layout.blocks.len()],
                target: Some(normalize_target(capped, LFMC_CAP).expect("valid label") as f32),
                meta: instance_meta(i, NaiveDate::from_ymd_opt(2021, month, 1).unwrap(), capped),
                layout: layout.clone(),
            }
        })
        .collect()
}

/// A dataset built from a scene's cube and observations: `n_sites` sites
/// with up to `visits` labels each, tiles of `shape`, random split seeded
/// by `seed`.
pub fn scene_dataset(
    config: SceneConfig,
    n_sites: usize,
    visits: usize,
    shape: TileShape,
    seed: u64,
) -> Result<crate::dataset::DatasetContainer> {
    let scene = Scene::new(config);
    let margin = shape.height.max(shape.width) / 2 + 1;
    let obs = scene.observations(n_sites, visits, margin, shape.timesteps - 1, 5.0);
    let split = crate::dataset::SplitConfig {
        seed,
        ..Default::default()
    };
    crate::dataset::build_dataset(&obs, &[scene.cube()], shape, &split, LFMC_CAP)
}

/// A pipeline configuration for a scene written with [`Scene::write_files`].
/// Labels are kept from the month the tiles' history first fits in the
/// cube; maps cover the last month. Training is kept short.
pub fn scene_pipeline_config(
    scene: &Scene,
    files: &SceneFiles,
    output: &Path,
    shape: TileShape,
) -> serde_json::Value {
    let t = scene.months.len();
    let first = scene.months[shape.timesteps.saturating_sub(1).min(t - 1)];
    let last = scene.months[t - 1];
    let end = last.offset(1).first_day().pred_opt().expect("valid date");
    serde_json::json!({
        "version": crate::config::CONFIG_VERSION,
        "paths": {
            "labels": files.labels_csv,
            "manifests": [files.manifest],
            "land_cover": files.land_cover,
            "elevation": files.elevation,
            "output": output,
        },
        "region": scene.bbox(),
        "dates": {"start": first.first_day(), "end": end},
        "dataset": {"shape": shape, "pixel_size_m": scene.config.pixel_size},
        "train": {"max_epochs": 6, "patience": 3, "batch_size": 16, "learning_rate": 0.01, "hidden": [8]},
        "eval": {"permutations": 99},
        "map": {"months": [last]},
    })
}
