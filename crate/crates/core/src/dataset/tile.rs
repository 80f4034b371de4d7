use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{
    elevation_band, normalize_target, season_of, ElevationBand, LandCoverClass, Season,
};
use crate::error::{Error, Result};
use crate::ingest::{InputCube, Modality, ModalitySpec, SiteObservation, Variability};

/// Spatial and temporal extent of a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileShape {
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
}

impl TileShape {
    pub fn new(height: usize, width: usize, timesteps: usize) -> Result<Self> {
        let s = TileShape {
            height,
            width,
            timesteps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.timesteps == 0 {
            return Err(Error::Config(format!(
                "tile shape {self} has a zero dimension"
            )));
        }
        Ok(())
    }

    /// True when `self` fits inside `other` in every dimension.
    pub fn fits_in(&self, other: &TileShape) -> bool {
        self.height <= other.height
            && self.width <= other.width
            && self.timesteps <= other.timesteps
    }
}

impl fmt::Display for TileShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.timesteps)
    }
}

impl FromStr for TileShape {
    type Err = Error;

    /// Parses `HxWxT`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X', '×']).collect();
        let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
        match nums.as_deref() {
            Some(&[h, w, t]) => TileShape::new(h, w, t),
            _ => Err(Error::Config(format!(
                "tile shape {s:?} is not of the form HxWxT"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// `[row][col][month][band]`
    SpaceTime,
    /// `[month][band]`
    TimeOnly,
    /// `[row][col][band]`
    Terrain,
    /// `[latitude, longitude]`, scaled to [-1, 1].
    Location,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub modality: Modality,
    pub kind: BlockKind,
    pub bands: Vec<String>,
    pub dims: Vec<usize>,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The ordered per-modality blocks of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub shape: TileShape,
    pub blocks: Vec<BlockSpec>,
}

impl FeatureLayout {
    pub fn new(specs: &[ModalitySpec], shape: TileShape) -> Self {
        let blocks = specs
            .iter()
            .map(|s| {
                let bands = s.feature_bands();
                let nb = bands.len();
                let TileShape {
                    height: h,
                    width: w,
                    timesteps: t,
                } = shape;
                let (kind, dims) = match (s.variability, s.name) {
                    (Variability::SpaceTime, _) => (BlockKind::SpaceTime, vec![h, w, t, nb]),
                    (Variability::TimeOnly, _) => (BlockKind::TimeOnly, vec![t, nb]),
                    (Variability::Static, Modality::Location) => (BlockKind::Location, vec![2]),
                    (Variability::Static, _) => (BlockKind::Terrain, vec![h, w, nb]),
                };
                BlockSpec {
                    modality: s.name,
                    kind,
                    bands,
                    dims,
                }
            })
            .collect();
        FeatureLayout { shape, blocks }
    }

    pub fn with_shape(&self, shape: TileShape) -> Self {
        let mut l = self.clone();
        l.shape = shape;
        for b in &mut l.blocks {
            let nb = b.bands.len();
            b.dims = match b.kind {
                BlockKind::SpaceTime => vec![shape.height, shape.width, shape.timesteps, nb],
                BlockKind::TimeOnly => vec![shape.timesteps, nb],
                BlockKind::Terrain => vec![shape.height, shape.width, nb],
                BlockKind::Location => vec![2],
            };
        }
        l
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.blocks.iter().map(|b| b.modality).collect()
    }

    pub fn block_index(&self, m: Modality) -> Option<usize> {
        self.blocks.iter().position(|b| b.modality == m)
    }

    /// Number of feature values, excluding the target.
    pub fn feature_len(&self) -> usize {
        self.blocks.iter().map(BlockSpec::len).sum()
    }

    /// Checks that `other` has the same blocks and shape, reporting the first
    /// differing dimension.
    pub fn check_compatible(&self, other: &FeatureLayout) -> Result<()> {
        let dims = [
            ("tile height", self.shape.height, other.shape.height),
            ("tile width", self.shape.width, other.shape.width),
            ("timesteps", self.shape.timesteps, other.shape.timesteps),
            ("modality blocks", self.blocks.len(), other.blocks.len()),
        ];
        for (dimension, expected, found) in dims {
            if expected != found {
                return Err(Error::ShapeMismatch {
                    dimension,
                    expected,
                    found,
                });
            }
        }
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            if a.modality != b.modality || a.bands != b.bands {
                return Err(Error::Data(format!(
                    "input block {} ({} bands) does not match expected {} ({} bands)",
                    b.modality,
                    b.bands.len(),
                    a.modality,
                    a.bands.len()
                )));
            }
        }
        Ok(())
    }
}

/// Descriptive fields of an instance, used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub site_id: String,
    pub date: NaiveDate,
    pub latitude: f64,
    pub longitude: f64,
    /// Capped label in percent.
    pub lfmc_percent: Option<f64>,
    pub n_merged: usize,
    pub land_cover: Option<LandCoverClass>,
    pub elevation_m: Option<f64>,
    pub cube_id: String,
    /// Cube pixel of the tile center.
    pub row: usize,
    pub col: usize,
}

impl InstanceMeta {
    pub fn season(&self) -> Season {
        season_of(self.date)
    }

    pub fn elevation_band(&self) -> Option<ElevationBand> {
        self.elevation_m.map(elevation_band)
    }
}

/// One model input: a block per modality, the normalized target and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TileInstance {
    pub layout: Arc<FeatureLayout>,
    pub blocks: Vec<Vec<f32>>,
    /// Validity per spatial-temporal cell for gridded blocks; `None` means
    /// all values are valid.
    pub masks: Vec<Option<Vec<bool>>>,
    pub target: Option<f32>,
    pub meta: InstanceMeta,
}

impl TileInstance {
    pub fn shape(&self) -> TileShape {
        self.layout.shape
    }

    pub fn block(&self, m: Modality) -> Option<&[f32]> {
        self.layout
            .block_index(m)
            .map(|i| self.blocks[i].as_slice())
    }

    pub fn is_complete(&self) -> bool {
        self.masks.iter().flatten().all(|m| m.iter().all(|&v| v))
    }

    /// Center crop to a smaller shape, keeping the most recent months. The
    /// result equals extracting the smaller shape directly at the same site.
    pub fn crop(&self, shape: TileShape) -> Result<TileInstance> {
        shape.validate()?;
        let old = self.shape();
        if !shape.fits_in(&old) {
            return Err(Error::Config(format!(
                "cannot crop a {old} instance to {shape}"
            )));
        }
        let r_off = old.height / 2 - shape.height / 2;
        let c_off = old.width / 2 - shape.width / 2;
        let t_off = old.timesteps - shape.timesteps;
        let layout = Arc::new(self.layout.with_shape(shape));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut masks = Vec::with_capacity(self.blocks.len());
        for (i, spec) in self.layout.blocks.iter().enumerate() {
            let nb = spec.bands.len();
            let src = &self.blocks[i];
            let mask = self.masks[i].as_ref();
            let (block, m) = match spec.kind {
                BlockKind::SpaceTime => {
                    let mut out =
                        Vec::with_capacity(shape.height * shape.width * shape.timesteps * nb);
                    let mut mo = mask.map(|_| Vec::new());
                    for r in 0..shape.height {
                        for c in 0..shape.width {
                            let cell = (r + r_off) * old.width + (c + c_off);
                            let start = (cell * old.timesteps + t_off) * nb;
                            out.extend_from_slice(&src[start..start + shape.timesteps * nb]);
                            if let (Some(mo), Some(mask)) = (mo.as_mut(), mask) {
                                let ms = cell * old.timesteps + t_off;
                                mo.extend_from_slice(&mask[ms..ms + shape.timesteps]);
                            }
                        }
                    }
                    (out, mo)
                }
                BlockKind::TimeOnly => (src[t_off * nb..].to_vec(), None),
                BlockKind::Terrain => {
                    let mut out = Vec::with_capacity(shape.height * shape.width * nb);
                    let mut mo = mask.map(|_| Vec::new());
                    for r in 0..shape.height {
                        for c in 0..shape.width {
                            let cell = (r + r_off) * old.width + (c + c_off);
                            out.extend_from_slice(&src[cell * nb..(cell + 1) * nb]);
                            if let (Some(mo), Some(mask)) = (mo.as_mut(), mask) {
                                mo.push(mask[cell]);
                            }
                        }
                    }
                    (out, mo)
                }
                BlockKind::Location => (src.clone(), None),
            };
            blocks.push(block);
            masks.push(m);
        }
        Ok(TileInstance {
            layout,
            blocks,
            masks,
            target: self.target,
            meta: self.meta.clone(),
        })
    }

    /// Copy with the given modality's block replaced by zeros.
    pub fn without_modality(&self, m: Modality) -> TileInstance {
        let mut out = self.clone();
        if let Some(i) = self.layout.block_index(m) {
            out.blocks[i].fill(0.0);
            out.masks[i] = None;
        }
        out
    }
}

/// Location features of a point.
pub fn location_features(lat: f64, lon: f64) -> [f32; 2] {
    [(lat / 90.0) as f32, (lon / 180.0) as f32]
}

/// Cuts a window from `cube`: rows `row0..row0+H`, columns `col0..col0+W` and
/// the `T` months ending at month index `end`.
pub fn extract_window(
    cube: &InputCube,
    layout: &Arc<FeatureLayout>,
    row0: usize,
    col0: usize,
    end: usize,
    location: (f64, f64),
) -> Result<(Vec<Vec<f32>>, Vec<Option<Vec<bool>>>)> {
    let shape = layout.shape;
    let g = &cube.grid;
    let ct = cube.months.len();
    if row0 + shape.height > g.height || col0 + shape.width > g.width {
        return Err(Error::Data(format!(
            "window at ({row0}, {col0}) of shape {shape} exceeds the {}x{} cube",
            g.height, g.width
        )));
    }
    if end >= ct || end + 1 < shape.timesteps {
        return Err(Error::Data(format!(
            "{} months of history ending at index {end} are not available in a {ct}-month cube",
            shape.timesteps
        )));
    }
    let t0 = end + 1 - shape.timesteps;
    let mut blocks = Vec::with_capacity(layout.blocks.len());
    let mut masks = Vec::with_capacity(layout.blocks.len());
    for spec in &layout.blocks {
        let nb = spec.bands.len();
        let missing = || Error::Data(format!("cube {} has no {} layer", cube.id, spec.modality));
        match spec.kind {
            BlockKind::SpaceTime => {
                let l = cube.space_time.get(&spec.modality).ok_or_else(missing)?;
                if l.bands.len() != nb {
                    return Err(Error::ShapeMismatch {
                        dimension: "bands",
                        expected: nb,
                        found: l.bands.len(),
                    });
                }
                let mut out = Vec::with_capacity(spec.len());
                let mut mask = Vec::with_capacity(shape.height * shape.width * shape.timesteps);
                for r in row0..row0 + shape.height {
                    for c in col0..col0 + shape.width {
                        let p = r * g.width + c;
                        let s = (p * ct + t0) * nb;
                        out.extend_from_slice(&l.values[s..s + shape.timesteps * nb]);
                        mask.extend_from_slice(&l.valid[p * ct + t0..=p * ct + end]);
                    }
                }
                blocks.push(out);
                masks.push(Some(mask));
            }
            BlockKind::TimeOnly => {
                let l = cube.time_only.get(&spec.modality).ok_or_else(missing)?;
                blocks.push(l.values[t0 * nb..(end + 1) * nb].to_vec());
                masks.push(None);
            }
            BlockKind::Terrain => {
                let l = cube.terrain.as_ref().ok_or_else(missing)?;
                let mut out = Vec::with_capacity(spec.len());
                let mut mask = Vec::with_capacity(shape.height * shape.width);
                for r in row0..row0 + shape.height {
                    for c in col0..col0 + shape.width {
                        let p = r * g.width + c;
                        out.extend_from_slice(&l.values[p * nb..(p + 1) * nb]);
                        mask.push(l.valid[p]);
                    }
                }
                blocks.push(out);
                masks.push(Some(mask));
            }
            BlockKind::Location => {
                blocks.push(location_features(location.0, location.1).to_vec());
                masks.push(None);
            }
        }
    }
    Ok((blocks, masks))
}

/// Window origin and end month of the tile centered on an observation, or
/// `None` when the observation's tile does not fit in the cube.
pub fn locate(
    cube: &InputCube,
    obs: &SiteObservation,
    shape: TileShape,
) -> Option<(usize, usize, usize)> {
    let (r, c) = cube
        .grid
        .pixel_of_wgs84(obs.sample.latitude, obs.sample.longitude)?;
    let row0 = r.checked_sub(shape.height / 2)?;
    let col0 = c.checked_sub(shape.width / 2)?;
    if row0 + shape.height > cube.grid.height || col0 + shape.width > cube.grid.width {
        return None;
    }
    let end = cube.month_index(crate::domain::YearMonth::of(obs.sample.date))?;
    (end + 1 >= shape.timesteps).then_some((row0, col0, end))
}

/// Builds the instance for an observation: the tile centered on the site's
/// pixel over the months ending with the sampling month.
pub fn extract_instance(
    cube: &InputCube,
    obs: &SiteObservation,
    layout: &Arc<FeatureLayout>,
    cap: f64,
) -> Result<TileInstance> {
    let (row0, col0, end) = locate(cube, obs, layout.shape).ok_or_else(|| {
        Error::Data(format!(
            "observation {} on {} has no {} tile in cube {}",
            obs.sample.site_id, obs.sample.date, layout.shape, cube.id
        ))
    })?;
    let s = &obs.sample;
    let (blocks, masks) = extract_window(cube, layout, row0, col0, end, (s.latitude, s.longitude))?;
    let target = normalize_target(s.lfmc_percent.min(cap), cap)? as f32;
    Ok(TileInstance {
        layout: layout.clone(),
        blocks,
        masks,
        target: Some(target),
        meta: InstanceMeta {
            site_id: s.site_id.clone(),
            date: s.date,
            latitude: s.latitude,
            longitude: s.longitude,
            lfmc_percent: Some(s.lfmc_percent.min(cap)),
            n_merged: obs.n_merged,
            land_cover: s.land_cover,
            elevation_m: s.elevation_m,
            cube_id: cube.id.clone(),
            row: row0 + layout.shape.height / 2,
            col: col0 + layout.shape.width / 2,
        },
    })
}
