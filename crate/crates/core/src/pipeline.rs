//! The staged pipeline: prepare, train, evaluate, map and ablate. Each stage
//! reads the outputs of earlier stages from the configured output directory
//! and writes its own subdirectory with a resolved configuration snapshot and
//! a provenance record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dataset::{build_dataset, locate, DatasetContainer, SplitConfig, SplitCounts, SplitTag};
use crate::domain::YearMonth;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, run_modality_ablation, run_shape_ablation, write_ablation_csv, write_metric_csv,
    write_predictions_csv, AblationRow, EvaluationReport, MetricRow, Stratifier,
};
use crate::ingest::labels::{
    aggregate_same_day_site, enrich_observations, filter_samples, parse_labels_file, StaticRasters,
};
use crate::ingest::{load_cube, read_manifest, InputCube, SiteObservation};
use crate::mapper::{
    map_series, plan_for, regional_mean_series, write_regional_csv, LfmcMap, Region, RegionalMean,
};
use crate::model::{
    fit_monthly_baseline, load_model, save_model, train_on_dataset, AnyPredictor, ModelKind,
    Predictor, ReferenceRegressor, TrainingHistory,
};

pub const PREPARE_DIR: &str = "prepare";
pub const TRAIN_DIR: &str = "train";
pub const EVALUATE_DIR: &str = "evaluate";
pub const MAP_DIR: &str = "map";
pub const DATASET_DIR: &str = "dataset";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Replace an existing stage directory.
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Shape,
    Modality,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Shape => "shape",
            AblationMode::Modality => "modality",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shape" => Ok(AblationMode::Shape),
            "modality" => Ok(AblationMode::Modality),
            other => Err(Error::Config(format!(
                "unknown ablation mode {other:?} (expected shape or modality)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

struct StageDir {
    path: PathBuf,
    name: &'static str,
}

impl StageDir {
    /// Creates the stage directory, refusing to replace a non-empty one
    /// unless overwriting.
    fn create(cfg: &PipelineConfig, name: &'static str, opts: RunOptions) -> Result<StageDir> {
        let path = cfg.output_dir().join(name);
        if path.exists() {
            let non_empty = fs::read_dir(&path)
                .map_err(|e| Error::io(&path, e))?
                .next()
                .is_some();
            if non_empty && !opts.overwrite {
                return Err(Error::Config(format!(
                    "{} already exists; pass --overwrite to replace it",
                    path.display()
                )));
            }
            fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        }
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(StageDir { path, name })
    }

    fn join(&self, p: &str) -> PathBuf {
        self.path.join(p)
    }

    /// Writes the resolved configuration and the provenance record covering
    /// every file in the stage directory.
    fn finish(&self, cfg: &PipelineConfig, inputs: &[(String, PathBuf)]) -> Result<()> {
        write_json(&self.join(RESOLVED_CONFIG_FILE), cfg)?;
        let mut files = Vec::new();
        files_under(&self.path, &mut files)?;
        let outputs = files
            .iter()
            .map(|f| {
                let rel = f.strip_prefix(&self.path).unwrap_or(f);
                Ok(FileDigest {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_file(f)?,
                })
            })
            .collect::<Result<_>>()?;
        let inputs = inputs
            .iter()
            .map(|(label, p)| {
                Ok(FileDigest {
                    path: label.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let seeds = BTreeMap::from([
            ("split".to_string(), cfg.dataset.split_seed),
            ("training".to_string(), cfg.train.training.seed),
            ("eval".to_string(), cfg.eval.seed),
        ]);
        let prov = Provenance {
            tool: "lfmc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stage: self.name.into(),
            seeds,
            inputs,
            outputs,
        };
        write_json(&self.join(PROVENANCE_FILE), &prov)
    }
}

fn require_file(cfg: &PipelineConfig, p: &Path, what: &str) -> Result<(String, PathBuf)> {
    let full = cfg.resolve(p);
    if !full.is_file() {
        return Err(Error::Config(format!(
            "{what} {} does not exist",
            full.display()
        )));
    }
    Ok((p.to_string_lossy().into_owned(), full))
}

fn cube_id(index: usize) -> String {
    format!("cube-{index}")
}

/// Loads the cube of manifest `index` over the configured region and months.
pub fn load_config_cube(cfg: &PipelineConfig, index: usize) -> Result<InputCube> {
    let manifest = cfg
        .paths
        .manifests
        .get(index)
        .ok_or_else(|| Error::Config(format!("no manifest at index {index}")))?;
    let path = cfg.resolve(manifest);
    let entries = read_manifest(&path)?;
    load_cube(
        &cube_id(index),
        &entries,
        &cfg.modalities,
        &cfg.cube_months(),
        &cfg.region,
        cfg.dataset.pixel_size_m,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub stratum: String,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub rows_parsed: usize,
    pub rows_rejected: usize,
    pub samples_in_region: usize,
    pub observations: usize,
    /// Samples folded into another sample of the same site and day.
    pub merged_duplicates: usize,
    pub outside_cubes: usize,
    pub excluded_nodata: usize,
    pub instances: usize,
    pub split: SplitCounts,
    pub census: BTreeMap<String, Vec<CensusRow>>,
}

fn census(ds: &DatasetContainer, stratifier: Stratifier) -> Vec<CensusRow> {
    let mut rows: BTreeMap<(i64, String), CensusRow> = BTreeMap::new();
    for (inst, tag) in ds.instances.iter().zip(&ds.tags) {
        let key = stratifier
            .stratum(&inst.meta)
            .unwrap_or((i64::MAX, "Unknown".into()));
        let row = rows.entry(key.clone()).or_insert_with(|| CensusRow {
            stratum: key.1.clone(),
            train: 0,
            val: 0,
            test: 0,
            total: 0,
        });
        match tag {
            SplitTag::Train => row.train += 1,
            SplitTag::Val => row.val += 1,
            SplitTag::Test => row.test += 1,
        }
        row.total += 1;
    }
    rows.into_values().collect()
}

fn write_census_csv(path: &Path, rows: &[CensusRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    w.write_record(["stratum", "train", "val", "test", "total"])?;
    for r in rows {
        w.write_record([
            r.stratum.clone(),
            r.train.to_string(),
            r.val.to_string(),
            r.test.to_string(),
            r.total.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses, filters, aggregates and enriches the labels, loads the cubes and
/// writes the dataset container with a preparation report.
pub fn prepare(cfg: &PipelineConfig, opts: RunOptions) -> Result<PrepareReport> {
    let mut inputs = vec![require_file(cfg, &cfg.paths.labels, "labels file")?];
    for m in &cfg.paths.manifests {
        inputs.push(require_file(cfg, m, "cube manifest")?);
    }
    let land_cover = cfg
        .paths
        .land_cover
        .as_ref()
        .map(|p| require_file(cfg, p, "land cover raster"))
        .transpose()?;
    let elevation = cfg
        .paths
        .elevation
        .as_ref()
        .map(|p| require_file(cfg, p, "elevation raster"))
        .transpose()?;
    inputs.extend(land_cover.clone());
    inputs.extend(elevation.clone());

    let parsed =
        parse_labels_file(&inputs[0].1, &cfg.columns).map_err(|e| e.in_stage("parse labels"))?;
    let in_region = filter_samples(&parsed.samples, &cfg.region, &cfg.dates)
        .map_err(|e| e.in_stage("filter"))?;
    let cap = cfg.dataset.cap_percent;
    let observations =
        aggregate_same_day_site(&in_region, cap).map_err(|e| e.in_stage("aggregate"))?;
    let statics = StaticRasters::open(
        land_cover.as_ref().map(|p| p.1.as_path()),
        elevation.as_ref().map(|p| p.1.as_path()),
    )
    .map_err(|e| e.in_stage("enrich"))?;
    let observations = enrich_observations(observations, &statics);
    let n_obs = observations.len();

    let cubes: Vec<InputCube> = (0..cfg.paths.manifests.len())
        .map(|i| load_config_cube(cfg, i))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("load cubes"))?;
    let shape = cfg.dataset.shape;
    let located: Vec<SiteObservation> = observations
        .into_iter()
        .filter(|o| cubes.iter().any(|c| locate(c, o, shape).is_some()))
        .collect();
    let outside = n_obs - located.len();
    let split = SplitConfig {
        fractions: cfg.dataset.fractions,
        seed: cfg.dataset.split_seed,
        mode: cfg.dataset.split_mode,
    };
    let ds = build_dataset(&located, &cubes, shape, &split, cap)
        .map_err(|e| e.in_stage("build dataset"))?;

    let stage = StageDir::create(cfg, PREPARE_DIR, opts)?;
    ds.write(&stage.join(DATASET_DIR))?;
    let report = PrepareReport {
        rows_parsed: parsed.samples.len() + parsed.rejects.len(),
        rows_rejected: parsed.rejects.len(),
        samples_in_region: in_region.len(),
        observations: n_obs,
        merged_duplicates: in_region.len() - n_obs,
        outside_cubes: outside,
        excluded_nodata: ds.excluded_nodata,
        instances: ds.instances.len(),
        split: ds.counts(),
        census: Stratifier::ALL
            .iter()
            .map(|&s| (s.name().to_string(), census(&ds, s)))
            .collect(),
    };
    for (name, rows) in &report.census {
        write_census_csv(&stage.join(&format!("census_{name}.csv")), rows)?;
    }
    let rejects_path = stage.join("rejects.csv");
    let mut w = csv::Writer::from_path(&rejects_path)
        .map_err(|e| Error::corrupt(&rejects_path, e.to_string()))?;
    w.write_record(["row", "reason"])?;
    for r in &parsed.rejects {
        w.write_record([r.row.to_string(), r.reason.clone()])?;
    }
    w.flush().map_err(|e| Error::io(&rejects_path, e))?;
    write_json(&stage.join("report.json"), &report)?;
    stage.finish(cfg, &inputs)?;
    log::info!(
        "prepared {} instances from {} observations",
        report.instances,
        report.observations
    );
    Ok(report)
}

fn dataset_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir().join(PREPARE_DIR).join(DATASET_DIR)
}

fn read_dataset(cfg: &PipelineConfig) -> Result<DatasetContainer> {
    let path = dataset_path(cfg);
    if !path.is_dir() {
        return Err(Error::Config(format!(
            "no dataset at {}; run prepare first",
            path.display()
        )));
    }
    DatasetContainer::read(&path)
}

fn dataset_inputs(cfg: &PipelineConfig) -> Vec<(String, PathBuf)> {
    let p = dataset_path(cfg);
    ["manifest.json", "tensors.bin"]
        .iter()
        .map(|f| (format!("{PREPARE_DIR}/{DATASET_DIR}/{f}"), p.join(f)))
        .collect()
}

fn model_path(cfg: &PipelineConfig, kind: ModelKind) -> PathBuf {
    cfg.output_dir().join(TRAIN_DIR).join(kind.dir_name())
}

fn model_inputs(cfg: &PipelineConfig, kind: ModelKind) -> Vec<(String, PathBuf)> {
    let p = model_path(cfg, kind);
    ["model.json", "weights.bin"]
        .iter()
        .map(|f| (format!("{TRAIN_DIR}/{}/{f}", kind.dir_name()), p.join(f)))
        .collect()
}

fn read_model(cfg: &PipelineConfig, kind: ModelKind) -> Result<AnyPredictor> {
    let path = model_path(cfg, kind);
    if !path.is_dir() {
        return Err(Error::Config(format!(
            "no {} model at {}; run train first",
            kind.label(),
            path.display()
        )));
    }
    load_model(&path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub models: Vec<(ModelKind, String)>,
    pub history: Option<TrainingHistory>,
}

fn write_history_csv(path: &Path, h: &TrainingHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    w.write_record(["epoch", "train_loss", "val_loss", "best"])?;
    for e in &h.epochs {
        w.write_record([
            e.epoch.to_string(),
            format!("{:e}", e.train_loss),
            format!("{:e}", e.val_loss),
            (e.epoch == h.best_epoch).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fits the configured models on the train split (the regressor with early
/// stopping on the val split) and saves them.
pub fn train(cfg: &PipelineConfig, opts: RunOptions) -> Result<TrainSummary> {
    let ds = read_dataset(cfg).map_err(|e| e.in_stage("train"))?;
    let stage = StageDir::create(cfg, TRAIN_DIR, opts)?;
    let mut summary = TrainSummary {
        models: Vec::new(),
        history: None,
    };
    let tc = &cfg.train.training;
    for &kind in &cfg.train.models {
        let model = match kind {
            ModelKind::MonthlyAverage => AnyPredictor::MonthlyAverage(
                fit_monthly_baseline(&ds.subset(SplitTag::Train))
                    .map_err(|e| e.in_stage("train"))?,
            ),
            ModelKind::ReferenceRegressor => {
                let reg = ReferenceRegressor::new((*ds.layout).clone(), &tc.hidden, tc.seed)?;
                let (reg, history) =
                    train_on_dataset(reg, &ds, tc).map_err(|e| e.in_stage("train"))?;
                write_history_csv(&stage.join("history.csv"), &history)?;
                write_json(&stage.join("history.json"), &history)?;
                summary.history = Some(history);
                AnyPredictor::Regressor(reg)
            }
        };
        let training = (kind == ModelKind::ReferenceRegressor).then_some(tc);
        save_model(&model, &stage.join(kind.dir_name()), training)?;
        summary.models.push((kind, model.model_id()));
    }
    stage.finish(cfg, &dataset_inputs(cfg))?;
    Ok(summary)
}

/// Scores every trained model on the test split and writes overall,
/// stratified, spatial-autocorrelation and per-observation tables.
pub fn evaluate_models(cfg: &PipelineConfig, opts: RunOptions) -> Result<Vec<EvaluationReport>> {
    let ds = read_dataset(cfg).map_err(|e| e.in_stage("evaluate"))?;
    let models: Vec<(ModelKind, AnyPredictor)> = cfg
        .train
        .models
        .iter()
        .map(|&k| Ok((k, read_model(cfg, k)?)))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("evaluate"))?;
    let test = ds.subset(SplitTag::Test);
    let stage = StageDir::create(cfg, EVALUATE_DIR, opts)?;
    let mut inputs = dataset_inputs(cfg);
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for (kind, model) in &models {
        let (report, preds) =
            evaluate(model, &test, &cfg.eval).map_err(|e| e.in_stage("evaluate"))?;
        let dir = stage.join(kind.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_metric_csv(
            &dir.join("overall.csv"),
            std::slice::from_ref(&report.overall),
        )?;
        for s in &report.strata {
            if s.rows.len() == 1 {
                log::info!(
                    "{}: no test observation has a known {}",
                    kind.label(),
                    s.stratifier
                );
            }
            write_metric_csv(&dir.join(format!("{}.csv", s.stratifier.name())), &s.rows)?;
        }
        write_json(&dir.join("moran.json"), &report.moran)?;
        write_predictions_csv(&dir.join("predictions.csv"), &preds)?;
        write_json(&dir.join("report.json"), &report)?;
        summary.push(MetricRow {
            stratum: kind.label().into(),
            ..report.overall.clone()
        });
        inputs.extend(model_inputs(cfg, *kind));
        reports.push(report);
    }
    write_metric_csv(&stage.join("summary.csv"), &summary)?;
    write_json(&stage.join("summary.json"), &summary)?;
    stage.finish(cfg, &inputs)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOutput {
    pub files: Vec<PathBuf>,
    pub series: Vec<RegionalMean>,
}

/// Months mapped when none are configured: the last labeled month.
pub fn map_months(cfg: &PipelineConfig) -> Vec<YearMonth> {
    if cfg.map.months.is_empty() {
        vec![YearMonth::of(cfg.dates.end)]
    } else {
        cfg.map.months.clone()
    }
}

/// Writes one GeoTIFF per configured month and the regional mean series.
pub fn map(cfg: &PipelineConfig, opts: RunOptions) -> Result<MapOutput> {
    let model = read_model(cfg, cfg.map.model).map_err(|e| e.in_stage("map"))?;
    let manifest = require_file(cfg, &cfg.paths.manifests[cfg.map.cube], "cube manifest")?;
    let cube = load_config_cube(cfg, cfg.map.cube).map_err(|e| e.in_stage("load cubes"))?;
    let plan = plan_for(&cube.grid, model.layout(), cfg.map.stride, cfg.map.edge)?;
    let maps: Vec<LfmcMap> =
        map_series(&cube, &model, &plan, &map_months(cfg)).map_err(|e| e.in_stage("map"))?;
    let bbox = cfg.map.region.unwrap_or(cfg.region);
    let series = regional_mean_series(&maps, &Region::BBox(bbox)).map_err(|e| {
        Error::Data(format!(
            "region [{}, {}] x [{}, {}] has no pixel in cube {}: {e}",
            bbox.min_lat, bbox.max_lat, bbox.min_lon, bbox.max_lon, cube.id
        ))
        .in_stage("map")
    })?;
    let stage = StageDir::create(cfg, MAP_DIR, opts)?;
    let mut files = Vec::new();
    for m in &maps {
        let path = stage.join(&format!("lfmc_{}.tif", m.month));
        m.write(&path)?;
        files.push(path);
    }
    write_regional_csv(&stage.join("regional_mean.csv"), &series)?;
    write_json(&stage.join("regional_mean.json"), &series)?;
    let mut inputs = model_inputs(cfg, cfg.map.model);
    inputs.push(manifest);
    stage.finish(cfg, &inputs)?;
    Ok(MapOutput { files, series })
}

/// Runs the shape or modality ablation on the prepared dataset.
pub fn ablate(
    cfg: &PipelineConfig,
    mode: AblationMode,
    opts: RunOptions,
) -> Result<Vec<AblationRow>> {
    let ds = read_dataset(cfg).map_err(|e| e.in_stage("ablate"))?;
    let tc = &cfg.train.training;
    let rows = match mode {
        AblationMode::Shape => run_shape_ablation(&ds, &cfg.ablation.shapes, tc),
        AblationMode::Modality => run_modality_ablation(&ds, &cfg.ablation.removals, tc),
    }
    .map_err(|e| e.in_stage("ablate"))?;
    let stage = StageDir::create(
        cfg,
        if mode == AblationMode::Shape {
            "ablate-shape"
        } else {
            "ablate-modality"
        },
        opts,
    )?;
    write_ablation_csv(&stage.join(&format!("{}.csv", mode.name())), &rows)?;
    write_json(&stage.join(&format!("{}.json", mode.name())), &rows)?;
    stage.finish(cfg, &dataset_inputs(cfg))?;
    Ok(rows)
}
