//! Pipeline configuration: one JSON file drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitFractions, SplitMode, TileShape};
use crate::domain::{YearMonth, LFMC_CAP};
use crate::error::{Error, Result};
use crate::eval::{default_shape_grid, EvalConfig, DEFAULT_REMOVALS};
use crate::geo::BBox;
use crate::ingest::labels::{ColumnMap, DateRange};
use crate::ingest::{Modality, ModalitySpec};
use crate::mapper::EdgePolicy;
use crate::model::{ModelKind, TrainingConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Input and output locations. Relative paths resolve against the directory
/// of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub labels: PathBuf,
    /// One cube manifest per input region.
    pub manifests: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub land_cover: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub shape: TileShape,
    pub fractions: SplitFractions,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub cap_percent: f64,
    pub pixel_size_m: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            shape: TileShape {
                height: 32,
                width: 32,
                timesteps: 12,
            },
            fractions: SplitFractions::default(),
            split_mode: SplitMode::Random,
            split_seed: 0,
            cap_percent: LFMC_CAP,
            pixel_size_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainStageConfig {
    pub models: Vec<ModelKind>,
    #[serde(flatten)]
    pub training: TrainingConfig,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        TrainStageConfig {
            models: vec![ModelKind::MonthlyAverage, ModelKind::ReferenceRegressor],
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Months to map; each needs the model's history inside the cube.
    pub months: Vec<YearMonth>,
    /// Window stride in pixels; the tile size when absent.
    pub stride: Option<usize>,
    pub edge: EdgePolicy,
    /// Model used for maps.
    pub model: ModelKind,
    /// Index into `paths.manifests` of the cube to map.
    pub cube: usize,
    /// Region of the monthly mean series; the whole region when absent.
    pub region: Option<BBox>,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            months: Vec::new(),
            stride: None,
            edge: EdgePolicy::Clamp,
            model: ModelKind::ReferenceRegressor,
            cube: 0,
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub shapes: Vec<TileShape>,
    pub removals: Vec<Modality>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            shapes: default_shape_grid(),
            removals: DEFAULT_REMOVALS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub paths: PathsConfig,
    #[serde(default)]
    pub columns: ColumnMap,
    pub region: BBox,
    pub dates: DateRange,
    #[serde(default = "ModalitySpec::defaults")]
    pub modalities: Vec<ModalitySpec>,
    /// When set, replaces the split, training and evaluation seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainStageConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid configuration JSON: {e}")))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    expected: CONFIG_VERSION,
                })
            }
            None => return Err(Error::Config("configuration has no version field".into())),
        }
        let mut cfg: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read configuration {}: {e}", path.display()))
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        PipelineConfig::from_json(&text, &base)
    }

    /// Replaces every stage seed with `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.dataset.split_seed = s;
            self.train.training.seed = s;
            self.eval.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        if self.paths.manifests.is_empty() {
            return Err(Error::Config(
                "paths.manifests lists no cube manifest".into(),
            ));
        }
        self.region.validate()?;
        self.dates.validate()?;
        if self.modalities.is_empty() {
            return Err(Error::Config("no modalities configured".into()));
        }
        for m in &self.modalities {
            m.validate()?;
        }
        self.dataset.shape.validate()?;
        self.dataset.fractions.validate()?;
        if !(self.dataset.cap_percent > 0.0) {
            return Err(Error::Config(format!(
                "cap {} must be positive",
                self.dataset.cap_percent
            )));
        }
        if !(self.dataset.pixel_size_m > 0.0 && self.dataset.pixel_size_m.is_finite()) {
            return Err(Error::Config(format!(
                "pixel size {} must be positive",
                self.dataset.pixel_size_m
            )));
        }
        if self.train.models.is_empty() {
            return Err(Error::Config("train.models is empty".into()));
        }
        self.train.training.validate()?;
        self.eval.validate()?;
        if self.map.cube >= self.paths.manifests.len() {
            return Err(Error::Config(format!(
                "map.cube {} has no manifest",
                self.map.cube
            )));
        }
        if let Some(r) = &self.map.region {
            r.validate()?;
        }
        if self.map.stride == Some(0) {
            return Err(Error::Config("map.stride must be at least 1".into()));
        }
        for s in &self.ablation.shapes {
            s.validate()?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output)
    }

    /// Months a cube must hold: every labeled month and every mapped month,
    /// each with its history.
    pub fn cube_months(&self) -> Vec<YearMonth> {
        let back = self.dataset.shape.timesteps as i64 - 1;
        let mut start = YearMonth::of(self.dates.start).offset(-back);
        let mut end = YearMonth::of(self.dates.end);
        for m in &self.map.months {
            start = start.min(m.offset(-back));
            end = end.max(*m);
        }
        YearMonth::range(start, end)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "paths": {"labels": "labels.csv", "manifests": ["cube/manifest.json"], "output": "out"},
        "region": {"min_lat": 34.0, "max_lat": 34.5, "min_lon": -118.5, "max_lon": -118.0},
        "dates": {"start": "2021-06-01", "end": "2021-12-31"}
    }"#;

    #[test]
    fn defaults_and_roundtrip() {
        let cfg = PipelineConfig::from_json(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(
            cfg.dataset.shape,
            TileShape {
                height: 32,
                width: 32,
                timesteps: 12
            }
        );
        assert_eq!(cfg.eval.k, 8);
        assert_eq!(cfg.eval.permutations, 999);
        assert_eq!(cfg.train.training.patience, 5);
        assert_eq!(cfg.ablation.shapes.len(), 6);
        assert_eq!(cfg.output_dir(), Path::new("/data/out"));
        let months = cfg.cube_months();
        assert_eq!(months.first().unwrap().to_string(), "2020-07");
        assert_eq!(months.last().unwrap().to_string(), "2021-12");
        let back = PipelineConfig::from_json(&cfg.to_json(), Path::new("/data")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configurations() {
        let v2 = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            PipelineConfig::from_json(&v2, Path::new(".")),
            Err(Error::VersionMismatch { .. })
        ));
        let typo = MINIMAL.replace("\"dates\"", "\"datez\"");
        assert!(matches!(
            PipelineConfig::from_json(&typo, Path::new(".")),
            Err(Error::Config(_))
        ));
        let inverted = MINIMAL.replace("2021-06-01", "2022-06-01");
        assert!(matches!(
            PipelineConfig::from_json(&inverted, Path::new(".")),
            Err(Error::Config(_))
        ));
        let k = MINIMAL.replace("\"version\": 1,", "\"version\": 1, \"eval\": {\"k\": 0},");
        assert!(matches!(
            PipelineConfig::from_json(&k, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = PipelineConfig::from_json(MINIMAL, Path::new(".")).unwrap();
        cfg.set_seed(17);
        assert_eq!(
            (
                cfg.dataset.split_seed,
                cfg.train.training.seed,
                cfg.eval.seed
            ),
            (17, 17, 17)
        );
    }
}
