//! Wall-to-wall maps: tiling plans, batched tile inference, mosaicking and
//! regional monthly means.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{extract_window, BlockKind, FeatureLayout, InstanceMeta, TileInstance};
use crate::domain::{denormalize_target, YearMonth, LFMC_CAP};
use crate::error::{Error, Result};
use crate::geo::{BBox, Grid};
use crate::ingest::InputCube;
use crate::model::Predictor;
use crate::raster::{
    read_geotiff, read_geotiff_metadata, write_geotiff, GeoTiffOptions, Raster, SampleType,
};

pub const MAP_NODATA: f32 = -1.0;

/// How windows that would overhang the grid edge are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Shift edge windows inward so every window is full-size.
    #[default]
    Clamp,
    /// Require the windows to tile the grid exactly.
    Strict,
}

/// How tile predictions become pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrideMode {
    /// Each pixel takes the prediction of the one window that owns it.
    Owned,
    /// Each pixel averages the predictions of all windows covering it.
    Sliding,
}

impl fmt::Display for StrideMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrideMode::Owned => "owned",
            StrideMode::Sliding => "sliding",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileWindow {
    pub row0: usize,
    pub col0: usize,
    /// Pixels this window writes in owned mode.
    pub own_rows: Range<usize>,
    pub own_cols: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub grid_height: usize,
    pub grid_width: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub stride: usize,
    pub edge: EdgePolicy,
    /// Row-major windows.
    pub windows: Vec<TileWindow>,
}

impl TilePlan {
    pub fn mode(&self) -> StrideMode {
        if self.stride < self.tile_height || self.stride < self.tile_width {
            StrideMode::Sliding
        } else {
            StrideMode::Owned
        }
    }
}

fn axis_origins(
    n: usize,
    tile: usize,
    stride: usize,
    edge: EdgePolicy,
    axis: &str,
) -> Result<Vec<usize>> {
    if tile > n {
        return Err(Error::Config(format!(
            "tile {axis} {tile} exceeds the grid {axis} {n}"
        )));
    }
    let mut origins: Vec<usize> = (0..=n - tile).step_by(stride).collect();
    let last = *origins.last().expect("at least one origin");
    if last + tile < n {
        match edge {
            EdgePolicy::Clamp => origins.push(n - tile),
            EdgePolicy::Strict => {
                return Err(Error::Config(format!(
                    "tiles of {axis} {tile} at stride {stride} do not cover a grid {axis} of {n} without clamping"
                )))
            }
        }
    }
    Ok(origins)
}

fn owned_ranges(origins: &[usize], n: usize) -> Vec<Range<usize>> {
    origins
        .iter()
        .enumerate()
        .map(|(i, &o)| o..origins.get(i + 1).copied().unwrap_or(n))
        .collect()
}

/// Plans row-major windows of `tile` = (height, width) at `stride` over a
/// `height` x `width` grid. A pixel is owned by the last window in row-major
/// order that covers it.
pub fn plan_tiles(
    height: usize,
    width: usize,
    tile: (usize, usize),
    stride: usize,
    edge: EdgePolicy,
) -> Result<TilePlan> {
    let (th, tw) = tile;
    if th == 0 || tw == 0 || height == 0 || width == 0 {
        return Err(Error::Config(
            "grid and tile dimensions must be positive".into(),
        ));
    }
    if stride == 0 || stride > th || stride > tw {
        return Err(Error::Config(format!(
            "stride {stride} must lie in 1..={} so windows cover the grid",
            th.min(tw)
        )));
    }
    let rows = axis_origins(height, th, stride, edge, "height")?;
    let cols = axis_origins(width, tw, stride, edge, "width")?;
    let own_r = owned_ranges(&rows, height);
    let own_c = owned_ranges(&cols, width);
    let mut windows = Vec::with_capacity(rows.len() * cols.len());
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            windows.push(TileWindow {
                row0: r,
                col0: c,
                own_rows: own_r[i].clone(),
                own_cols: own_c[j].clone(),
            });
        }
    }
    Ok(TilePlan {
        grid_height: height,
        grid_width: width,
        tile_height: th,
        tile_width: tw,
        stride,
        edge,
        windows,
    })
}

/// Plan matching a predictor's input shape over a cube's grid.
pub fn plan_for(
    grid: &Grid,
    layout: &FeatureLayout,
    stride: Option<usize>,
    edge: EdgePolicy,
) -> Result<TilePlan> {
    let s = layout.shape;
    plan_tiles(
        grid.height,
        grid.width,
        (s.height, s.width),
        stride.unwrap_or(s.height.min(s.width)),
        edge,
    )
}

/// A monthly map of LFMC in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct LfmcMap {
    pub grid: Grid,
    /// Row-major percent values; `MAP_NODATA` where inputs were missing.
    pub values: Vec<f32>,
    pub month: YearMonth,
    pub model_id: String,
    pub cube_id: String,
    pub mode: StrideMode,
    pub stride: usize,
}

impl LfmcMap {
    pub fn nodata(&self) -> f32 {
        MAP_NODATA
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.values[i] != MAP_NODATA
    }

    pub fn valid_count(&self) -> usize {
        (0..self.values.len()).filter(|&i| self.is_valid(i)).count()
    }

    pub fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("LFMC_MONTH".into(), self.month.to_string()),
            ("LFMC_MODEL_ID".into(), self.model_id.clone()),
            ("LFMC_CUBE_ID".into(), self.cube_id.clone()),
            ("LFMC_STRIDE_MODE".into(), self.mode.to_string()),
            ("LFMC_STRIDE".into(), self.stride.to_string()),
            ("LFMC_UNITS".into(), "percent".into()),
        ]
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            grid: self.grid,
            bands: vec![self.values.clone()],
            nodata: Some(MAP_NODATA as f64),
        }
    }

    /// Float32 GeoTIFF, deflate-compressed, 256x256 tiles, with the month,
    /// model id, cube id and stride mode as metadata items.
    pub fn write(&self, path: &Path) -> Result<()> {
        let opts = GeoTiffOptions {
            sample_type: SampleType::F32,
            deflate: true,
            tile_size: 256,
            metadata: self.metadata(),
        };
        write_geotiff(path, &self.to_raster(), &opts)
    }

    pub fn read(path: &Path) -> Result<LfmcMap> {
        let raster = read_geotiff(path)?;
        let meta = read_geotiff_metadata(path)?;
        let get = |k: &str| {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::raster(path, format!("missing metadata item {k}")))
        };
        let mode = match get("LFMC_STRIDE_MODE")?.as_str() {
            "owned" => StrideMode::Owned,
            "sliding" => StrideMode::Sliding,
            other => return Err(Error::raster(path, format!("unknown stride mode {other}"))),
        };
        let bad = |k: &str| Error::raster(path, format!("malformed metadata item {k}"));
        Ok(LfmcMap {
            grid: raster.grid,
            values: raster
                .bands
                .into_iter()
                .next()
                .ok_or_else(|| Error::raster(path, "no bands"))?,
            month: get("LFMC_MONTH")?.parse().map_err(|_| bad("LFMC_MONTH"))?,
            model_id: get("LFMC_MODEL_ID")?,
            cube_id: get("LFMC_CUBE_ID")?,
            mode,
            stride: get("LFMC_STRIDE")?
                .parse()
                .map_err(|_| bad("LFMC_STRIDE"))?,
        })
    }
}

/// Number of times each pixel of a map was written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapTrace {
    pub writes: Vec<u32>,
    /// Windows whose prediction reached each pixel.
    pub contributions: Vec<u32>,
}

/// Whether a pixel has every input the layout needs over `len` months
/// ending at `end`.
fn pixel_has_inputs(
    cube: &InputCube,
    layout: &FeatureLayout,
    p: usize,
    end: usize,
    len: usize,
) -> bool {
    let t = cube.months.len();
    layout.blocks.iter().all(|b| match b.kind {
        BlockKind::SpaceTime => cube.space_time.get(&b.modality).is_some_and(|l| {
            l.valid[p * t + end + 1 - len..=p * t + end]
                .iter()
                .all(|&v| v)
        }),
        BlockKind::Terrain => cube.terrain.as_ref().is_some_and(|l| l.valid[p]),
        BlockKind::TimeOnly | BlockKind::Location => true,
    })
}

fn window_instance(
    cube: &InputCube,
    layout: &Arc<FeatureLayout>,
    w: &TileWindow,
    end: usize,
) -> Result<TileInstance> {
    let s = layout.shape;
    let (row, col) = (w.row0 + s.height / 2, w.col0 + s.width / 2);
    let (lat, lon) = cube.grid.pixel_center_wgs84(row, col);
    let (blocks, masks) = extract_window(cube, layout, w.row0, w.col0, end, (lat, lon))?;
    Ok(TileInstance {
        layout: layout.clone(),
        blocks,
        masks,
        target: None,
        meta: InstanceMeta {
            site_id: format!("tile-{}-{}", w.row0, w.col0),
            date: cube.months[end].first_day(),
            latitude: lat,
            longitude: lon,
            lfmc_percent: None,
            n_merged: 0,
            land_cover: None,
            elevation_m: None,
            cube_id: cube.id.clone(),
            row,
            col,
        },
    })
}

/// `generate_map` that also reports per-pixel write counts.
pub fn generate_map_traced<P: Predictor + ?Sized>(
    cube: &InputCube,
    predictor: &P,
    plan: &TilePlan,
    month_index: usize,
) -> Result<(LfmcMap, MapTrace)> {
    let layout = Arc::new(predictor.layout().clone());
    let shape = layout.shape;
    let g = cube.grid;
    if plan.grid_height != g.height || plan.grid_width != g.width {
        return Err(Error::ShapeMismatch {
            dimension: "grid",
            expected: g.height * g.width,
            found: plan.grid_height * plan.grid_width,
        });
    }
    if plan.tile_height != shape.height {
        return Err(Error::ShapeMismatch {
            dimension: "tile height",
            expected: shape.height,
            found: plan.tile_height,
        });
    }
    if plan.tile_width != shape.width {
        return Err(Error::ShapeMismatch {
            dimension: "tile width",
            expected: shape.width,
            found: plan.tile_width,
        });
    }
    let Some(month) = cube.months.get(month_index).copied() else {
        return Err(Error::Data(format!(
            "month index {month_index} is outside the {}-month cube",
            cube.months.len()
        )));
    };
    if month_index + 1 < shape.timesteps {
        return Err(Error::Data(format!(
            "mapping {month} needs {} months of history but the cube starts at {}",
            shape.timesteps, cube.months[0]
        )));
    }
    let valid: Vec<bool> = (0..g.len())
        .into_par_iter()
        .map(|p| pixel_has_inputs(cube, &layout, p, month_index, shape.timesteps))
        .collect();

    let predictions: Vec<Option<f32>> = plan
        .windows
        .par_iter()
        .map(|w| {
            let any_valid = (w.row0..w.row0 + shape.height)
                .any(|r| (w.col0..w.col0 + shape.width).any(|c| valid[r * g.width + c]));
            if !any_valid {
                return Ok(None);
            }
            let inst = window_instance(cube, &layout, w, month_index)?;
            let y = predictor.predict(&inst)?;
            Ok(Some(
                denormalize_target(y.clamp(0.0, 1.0) as f64, LFMC_CAP) as f32
            ))
        })
        .collect::<Result<_>>()?;

    let n = g.len();
    let mut values = vec![MAP_NODATA; n];
    let mut writes = vec![0u32; n];
    let mut contributions = vec![0u32; n];
    let mode = plan.mode();
    match mode {
        StrideMode::Owned => {
            for (w, pred) in plan.windows.iter().zip(&predictions) {
                for r in w.own_rows.clone() {
                    for c in w.own_cols.clone() {
                        let p = r * g.width + c;
                        writes[p] += 1;
                        if let Some(v) = pred {
                            contributions[p] += 1;
                            if valid[p] {
                                values[p] = *v;
                            }
                        }
                    }
                }
            }
        }
        StrideMode::Sliding => {
            let mut sums = vec![0.0f64; n];
            for (w, pred) in plan.windows.iter().zip(&predictions) {
                let Some(v) = pred else { continue };
                for r in w.row0..w.row0 + shape.height {
                    for c in w.col0..w.col0 + shape.width {
                        let p = r * g.width + c;
                        sums[p] += *v as f64;
                        contributions[p] += 1;
                    }
                }
            }
            for p in 0..n {
                writes[p] += 1;
                if valid[p] && contributions[p] > 0 {
                    values[p] = (sums[p] / contributions[p] as f64) as f32;
                }
            }
        }
    }
    let map = LfmcMap {
        grid: g,
        values,
        month,
        model_id: predictor.model_id(),
        cube_id: cube.id.clone(),
        mode,
        stride: plan.stride,
    };
    Ok((
        map,
        MapTrace {
            writes,
            contributions,
        },
    ))
}

/// Predicts every window of `plan` for the month at `month_index` and
/// mosaics the results. Pixels missing a required input are nodata. The
/// output does not depend on the number of worker threads.
pub fn generate_map<P: Predictor + ?Sized>(
    cube: &InputCube,
    predictor: &P,
    plan: &TilePlan,
    month_index: usize,
) -> Result<LfmcMap> {
    generate_map_traced(cube, predictor, plan, month_index).map(|(m, _)| m)
}

/// One map per requested month, in the given order.
pub fn map_series<P: Predictor + ?Sized>(
    cube: &InputCube,
    predictor: &P,
    plan: &TilePlan,
    months: &[YearMonth],
) -> Result<Vec<LfmcMap>> {
    months
        .iter()
        .map(|&m| {
            let idx = cube.month_index(m).ok_or_else(|| {
                Error::Data(format!("month {m} is not covered by cube {}", cube.id))
            })?;
            generate_map(cube, predictor, plan, idx)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    BBox(BBox),
    /// Row-major pixel mask over the map grid.
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalMean {
    pub month: YearMonth,
    /// `None` when the region has no valid pixel that month.
    pub mean_lfmc_percent: Option<f64>,
    pub n_valid: usize,
}

fn region_mask(grid: &Grid, region: &Region) -> Result<Vec<bool>> {
    let mask = match region {
        Region::BBox(b) => {
            b.validate()?;
            (0..grid.len())
                .map(|p| {
                    let (lat, lon) = grid.pixel_center_wgs84(p / grid.width, p % grid.width);
                    b.contains(lat, lon)
                })
                .collect()
        }
        Region::Mask(m) => {
            if m.len() != grid.len() {
                return Err(Error::ShapeMismatch {
                    dimension: "region mask",
                    expected: grid.len(),
                    found: m.len(),
                });
            }
            m.clone()
        }
    };
    if !mask.iter().any(|&v| v) {
        return Err(Error::Data(
            "the region does not intersect the map grid".into(),
        ));
    }
    Ok(mask)
}

/// Mean over the valid pixels of `region` for each map.
pub fn regional_mean_series(maps: &[LfmcMap], region: &Region) -> Result<Vec<RegionalMean>> {
    let Some(first) = maps.first() else {
        return Ok(Vec::new());
    };
    let mask = region_mask(&first.grid, region)?;
    maps.iter()
        .map(|m| {
            if m.grid != first.grid {
                return Err(Error::Data(format!(
                    "map for {} is on a different grid",
                    m.month
                )));
            }
            let (mut sum, mut n) = (0.0f64, 0usize);
            for (i, _) in mask.iter().enumerate().filter(|(_, &inside)| inside) {
                if m.is_valid(i) {
                    sum += m.values[i] as f64;
                    n += 1;
                }
            }
            Ok(RegionalMean {
                month: m.month,
                mean_lfmc_percent: (n > 0).then(|| sum / n as f64),
                n_valid: n,
            })
        })
        .collect()
}

/// CSV with columns month, mean_lfmc_percent, n_valid. Months without valid
/// pixels leave the mean empty.
pub fn write_regional_csv(path: &Path, series: &[RegionalMean]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::raster(path, e.to_string()))?;
    w.write_record(["month", "mean_lfmc_percent", "n_valid"])?;
    for s in series {
        let mean = s
            .mean_lfmc_percent
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        w.write_record([s.month.to_string(), mean, s.n_valid.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::TileShape;
    use crate::ingest::Modality;
    use crate::model::ModelKind;
    use crate::synthetic::{Scene, SceneConfig};

    struct Constant {
        layout: FeatureLayout,
        value: f32,
    }

    impl Predictor for Constant {
        fn kind(&self) -> ModelKind {
            ModelKind::MonthlyAverage
        }
        fn layout(&self) -> &FeatureLayout {
            &self.layout
        }
        fn predict(&self, inst: &TileInstance) -> Result<f32> {
            self.layout.check_compatible(&inst.layout)?;
            Ok(self.value)
        }
        fn model_id(&self) -> String {
            format!("constant-{}", self.value)
        }
    }

    /// Predicts the tile's pooled NDVI at the last month, so tiles differ.
    struct Greenness {
        layout: FeatureLayout,
    }

    impl Predictor for Greenness {
        fn kind(&self) -> ModelKind {
            ModelKind::ReferenceRegressor
        }
        fn layout(&self) -> &FeatureLayout {
            &self.layout
        }
        fn predict(&self, inst: &TileInstance) -> Result<f32> {
            let x = crate::model::pool_features(inst, &[])?;
            Ok(x[10 + 11 * (inst.shape().timesteps - 1)].clamp(0.0, 1.0) as f32)
        }
        fn model_id(&self) -> String {
            "greenness".into()
        }
    }

    fn scene(size: usize) -> (InputCube, FeatureLayout) {
        let s = Scene::new(SceneConfig {
            size,
            months: 6,
            ..Default::default()
        });
        let layout = FeatureLayout::new(&Scene::specs(), TileShape::new(8, 8, 3).unwrap());
        (s.cube(), layout)
    }

    #[test]
    fn plan_examples() {
        let p = plan_tiles(64, 64, (32, 32), 32, EdgePolicy::Clamp).unwrap();
        assert_eq!(p.windows.len(), 4);
        let p = plan_tiles(33, 33, (32, 32), 32, EdgePolicy::Clamp).unwrap();
        assert_eq!(p.windows.len(), 4);
        assert_eq!((p.windows[3].row0, p.windows[3].col0), (1, 1));
        assert_eq!(p.windows[0].own_rows, 0..1);
        assert_eq!(p.windows[3].own_rows, 1..33);
        assert_eq!(
            plan_tiles(32, 32, (32, 32), 32, EdgePolicy::Strict)
                .unwrap()
                .windows
                .len(),
            1
        );
        assert!(matches!(
            plan_tiles(31, 40, (32, 32), 32, EdgePolicy::Clamp),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            plan_tiles(33, 33, (32, 32), 32, EdgePolicy::Strict),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            plan_tiles(64, 64, (32, 32), 40, EdgePolicy::Clamp),
            Err(Error::Config(_))
        ));
        assert_eq!(
            plan_tiles(64, 64, (32, 32), 16, EdgePolicy::Clamp)
                .unwrap()
                .mode(),
            StrideMode::Sliding
        );
    }

    proptest! {
        #[test]
        fn plan_covers_every_pixel_once(
            h in 1usize..60, w in 1usize..60, th in 1usize..20, tw in 1usize..20, s in 1usize..20,
        ) {
            prop_assume!(th <= h && tw <= w && s <= th.min(tw));
            let p = plan_tiles(h, w, (th, tw), s, EdgePolicy::Clamp).unwrap();
            let mut owned = vec![0u32; h * w];
            let mut covered = vec![false; h * w];
            for win in &p.windows {
                prop_assert!(win.row0 + th <= h && win.col0 + tw <= w);
                for r in win.own_rows.clone() {
                    for c in win.own_cols.clone() {
                        prop_assert!(r >= win.row0 && r < win.row0 + th && c >= win.col0 && c < win.col0 + tw);
                        owned[r * w + c] += 1;
                    }
                }
                for r in win.row0..win.row0 + th {
                    for c in win.col0..win.col0 + tw {
                        covered[r * w + c] = true;
                    }
                }
            }
            prop_assert!(owned.iter().all(|&n| n == 1));
            prop_assert!(covered.iter().all(|&c| c));
            // The owner of each pixel is the last covering window in row-major order.
            for r in 0..h {
                for c in 0..w {
                    let last = p.windows.iter().rposition(|x| {
                        (x.row0..x.row0 + th).contains(&r) && (x.col0..x.col0 + tw).contains(&c)
                    }).unwrap();
                    prop_assert!(p.windows[last].own_rows.contains(&r) && p.windows[last].own_cols.contains(&c));
                }
            }
        }
    }

    #[test]
    fn constant_predictor_maps() {
        let (mut cube, layout) = scene(20);
        let s2 = cube.space_time.get_mut(&Modality::S2).unwrap();
        let t = cube.months.len();
        s2.valid[(3 * 20 + 4) * t + 5] = false;
        s2.valid[(10 * 20 + 10) * t + 1] = false;
        let pred = Constant { layout, value: 0.5 };
        let plan = plan_for(&cube.grid, &pred.layout, None, EdgePolicy::Clamp).unwrap();
        let (map, trace) = generate_map_traced(&cube, &pred, &plan, 5).unwrap();
        assert!(trace.writes.iter().all(|&n| n == 1));
        for (i, &v) in map.values.iter().enumerate() {
            if i == 3 * 20 + 4 {
                assert_eq!(v, MAP_NODATA);
            } else {
                assert_eq!(v, 151.0);
            }
        }
        let earlier = generate_map(&cube, &pred, &plan, 3).unwrap();
        assert_eq!(earlier.values[10 * 20 + 10], MAP_NODATA);
        assert_eq!(earlier.values[3 * 20 + 4], 151.0);
        assert!(matches!(
            generate_map(&cube, &pred, &plan, 1),
            Err(Error::Data(_))
        ));
        let series = regional_mean_series(&[map, earlier], &Region::Mask(vec![true; 400])).unwrap();
        assert_eq!(series[0].n_valid, 399);
        assert_eq!(series[0].mean_lfmc_percent, Some(151.0));
    }

    #[test]
    fn sliding_mode_averages_and_threads_agree() {
        let (cube, layout) = scene(24);
        let pred = Greenness { layout };
        let owned = plan_for(&cube.grid, &pred.layout, None, EdgePolicy::Clamp).unwrap();
        let sliding = plan_for(&cube.grid, &pred.layout, Some(4), EdgePolicy::Clamp).unwrap();
        let (m, trace) = generate_map_traced(&cube, &pred, &sliding, 4).unwrap();
        assert_eq!(m.mode, StrideMode::Sliding);
        assert!(trace.writes.iter().all(|&n| n == 1));
        assert_eq!(trace.contributions[0], 1);
        assert_eq!(trace.contributions[8 * 24 + 8], 4);
        for plan in [&owned, &sliding] {
            let one = with_threads(Some(1), || generate_map(&cube, &pred, plan, 4))
                .unwrap()
                .unwrap();
            let three = with_threads(Some(3), || generate_map(&cube, &pred, plan, 4))
                .unwrap()
                .unwrap();
            let a: Vec<u32> = one.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = three.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert!(one.values.iter().all(|&v| (0.0..=302.0).contains(&v)));
        }
    }

    #[test]
    fn series_and_geotiff_roundtrip() {
        let (cube, layout) = scene(16);
        let pred = Constant {
            layout,
            value: 100.0 / 302.0,
        };
        let plan = plan_for(&cube.grid, &pred.layout, None, EdgePolicy::Clamp).unwrap();
        assert!(map_series(&cube, &pred, &plan, &[]).unwrap().is_empty());
        let months = &cube.months[2..6];
        let maps = map_series(&cube, &pred, &plan, months).unwrap();
        assert_eq!(maps.len(), 4);
        assert_eq!(maps, map_series(&cube, &pred, &plan, months).unwrap());
        let series = regional_mean_series(&maps, &Region::Mask(vec![true; 256])).unwrap();
        for s in &series {
            assert!((s.mean_lfmc_percent.unwrap() - 100.0).abs() < 1e-4);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tif");
        maps[0].write(&path).unwrap();
        assert_eq!(LfmcMap::read(&path).unwrap(), maps[0]);
        let bad = YearMonth::new(2030, 1).unwrap();
        assert!(matches!(
            map_series(&cube, &pred, &plan, &[bad]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn regional_means() {
        let (cube, layout) = scene(16);
        let pred = Constant { layout, value: 0.5 };
        let plan = plan_for(&cube.grid, &pred.layout, None, EdgePolicy::Clamp).unwrap();
        let mut map = generate_map(&cube, &pred, &plan, 5).unwrap();
        for (i, v) in map.values.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 100.0 } else { 200.0 };
        }
        let all = Region::BBox(BBox::new(-89.0, 89.0, -179.0, 179.0).unwrap());
        let s = regional_mean_series(std::slice::from_ref(&map), &all).unwrap();
        assert_eq!((s[0].mean_lfmc_percent, s[0].n_valid), (Some(150.0), 256));
        let mut empty = map.clone();
        empty.values.fill(MAP_NODATA);
        let s = regional_mean_series(&[empty], &all).unwrap();
        assert_eq!((s[0].mean_lfmc_percent, s[0].n_valid), (None, 0));
        let far = Region::BBox(BBox::new(10.0, 11.0, 10.0, 11.0).unwrap());
        assert!(regional_mean_series(&[map], &far).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_regional_csv(
            &p,
            &[RegionalMean {
                month: cube.months[0],
                mean_lfmc_percent: None,
                n_valid: 0,
            }],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "month,mean_lfmc_percent,n_valid\n2021-01,,0\n"
        );
    }
}
