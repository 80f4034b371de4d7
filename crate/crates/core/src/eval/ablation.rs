use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{predict_split, MetricRow};
use crate::dataset::{DatasetContainer, SplitTag, TileShape};
use crate::error::{Error, Result};
use crate::ingest::Modality;
use crate::model::{train_on_dataset, ReferenceRegressor, TrainingConfig, TrainingHistory};

/// Shapes compared by the shape ablation: full tiles, shorter histories and
/// smaller footprints down to a single pixel.
pub fn default_shape_grid() -> Vec<TileShape> {
    [
        (32, 32, 12),
        (32, 32, 6),
        (32, 32, 3),
        (16, 16, 12),
        (8, 8, 12),
        (1, 1, 12),
    ]
    .into_iter()
    .map(|(h, w, t)| TileShape {
        height: h,
        width: w,
        timesteps: t,
    })
    .collect()
}

pub const DEFAULT_REMOVALS: [Modality; 6] = [
    Modality::S2,
    Modality::S1,
    Modality::Era5,
    Modality::TerraClimate,
    Modality::Srtm,
    Modality::Location,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub shape: TileShape,
    pub removed: Option<Modality>,
    pub metrics: MetricRow,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Trains a fresh regressor on the train and val splits, initialized from
/// `config.seed`, and scores it on the test split.
pub fn fit_and_score(
    dataset: &DatasetContainer,
    config: &TrainingConfig,
) -> Result<(ReferenceRegressor, TrainingHistory, MetricRow)> {
    let reg = ReferenceRegressor::new((*dataset.layout).clone(), &config.hidden, config.seed)?;
    let (reg, history) = train_on_dataset(reg, dataset, config)?;
    let test = predict_split(&reg, &dataset.subset(SplitTag::Test))?;
    let row = MetricRow::compute("Overall", &test.preds, &test.targets)?;
    Ok((reg, history, row))
}

fn row(
    label: String,
    shape: TileShape,
    removed: Option<Modality>,
    ds: &DatasetContainer,
    cfg: &TrainingConfig,
) -> Result<AblationRow> {
    let (_, h, mut metrics) = fit_and_score(ds, cfg)?;
    metrics.stratum = label.clone();
    log::info!(
        "ablation {label}: rmse {:.3} mae {:.3}",
        metrics.rmse,
        metrics.mae
    );
    Ok(AblationRow {
        label,
        shape,
        removed,
        metrics,
        best_epoch: h.best_epoch,
        stopped_epoch: h.stopped_epoch,
    })
}

/// One row per shape: the dataset center-cropped to that shape, trained
/// with the same seed and scored on the test split.
pub fn run_shape_ablation(
    dataset: &DatasetContainer,
    shapes: &[TileShape],
    config: &TrainingConfig,
) -> Result<Vec<AblationRow>> {
    let stored = dataset.layout.shape;
    for s in shapes {
        s.validate()?;
        if !s.fits_in(&stored) {
            return Err(Error::Config(format!(
                "ablation shape {s} exceeds the stored dataset shape {stored}"
            )));
        }
    }
    shapes
        .iter()
        .map(|&s| {
            let ds = if s == stored {
                dataset.clone()
            } else {
                dataset.crop(s)?
            };
            row(s.to_string(), s, None, &ds, config)
        })
        .collect()
}

/// A "None" row on the full dataset followed by one row per removed
/// modality, whose features are zero-filled before training.
pub fn run_modality_ablation(
    dataset: &DatasetContainer,
    removals: &[Modality],
    config: &TrainingConfig,
) -> Result<Vec<AblationRow>> {
    for m in removals {
        if dataset.layout.block_index(*m).is_none() {
            return Err(Error::Config(format!(
                "modality {m} is not part of the dataset"
            )));
        }
    }
    let shape = dataset.layout.shape;
    let mut rows = vec![row("None".into(), shape, None, dataset, config)?];
    for &m in removals {
        rows.push(row(
            m.short_label().into(),
            shape,
            Some(m),
            &dataset.without_modality(m),
            config,
        )?);
    }
    Ok(rows)
}

/// CSV with columns label, shape, removed, n, rmse, mae, r2, best_epoch, stopped_epoch.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    w.write_record([
        "label",
        "shape",
        "removed",
        "n",
        "rmse",
        "mae",
        "r2",
        "best_epoch",
        "stopped_epoch",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.shape.to_string(),
            r.removed.map(|m| m.name().to_string()).unwrap_or_default(),
            r.metrics.n.to_string(),
            format!("{:.6}", r.metrics.rmse),
            format!("{:.6}", r.metrics.mae),
            r.metrics.r2.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.best_epoch.to_string(),
            r.stopped_epoch.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
