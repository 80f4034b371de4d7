//! Evaluation: regression metrics, stratified reports, spatial
//! autocorrelation of residuals and ablation harnesses.

pub mod ablation;
pub mod metrics;
pub mod spatial;

use std::borrow::Borrow;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablation::{
    default_shape_grid, fit_and_score, run_modality_ablation, run_shape_ablation,
    write_ablation_csv, AblationRow, DEFAULT_REMOVALS,
};
pub use metrics::{
    mae, percent_error, r2, rmse, stratified_report, write_metric_csv, MetricRow, Stratifier,
};
pub use spatial::{
    knn_weights, morans_i, morans_i_pvalue, Alternative, MoranResult, SpatialWeights,
};

use crate::dataset::{InstanceMeta, TileInstance};
use crate::domain::{denormalize_target, LFMC_CAP};
use crate::error::{Error, Result};
use crate::model::{predict_batch, ModelKind, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Neighbors per point in the spatial weights.
    pub k: usize,
    pub permutations: usize,
    pub alternative: Alternative,
    pub seed: u64,
    pub stratifiers: Vec<Stratifier>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 8,
            permutations: 999,
            alternative: Alternative::Greater,
            seed: 0,
            stratifiers: Stratifier::ALL.to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.k) {
            return Err(Error::Config(format!("k = {} must lie in 1..=32", self.k)));
        }
        if self.permutations < spatial::MIN_PERMUTATIONS {
            return Err(Error::Config(format!(
                "{} permutations requested; at least {} are required",
                self.permutations,
                spatial::MIN_PERMUTATIONS
            )));
        }
        Ok(())
    }
}

/// Predictions and labels of a split, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub preds: Vec<f64>,
    pub targets: Vec<f64>,
    pub metas: Vec<InstanceMeta>,
}

impl Predictions {
    pub fn residuals(&self) -> Vec<f64> {
        self.preds
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| p - t)
            .collect()
    }
}

/// Predicts every instance and pairs it with its capped label.
pub fn predict_split<P, I>(predictor: &P, instances: &[I]) -> Result<Predictions>
where
    P: Predictor + ?Sized,
    I: Borrow<TileInstance> + Sync,
{
    let raw = predict_batch(predictor, instances)?;
    let mut out = Predictions {
        preds: Vec::new(),
        targets: Vec::new(),
        metas: Vec::new(),
    };
    for (y, inst) in raw.into_iter().zip(instances) {
        let inst = inst.borrow();
        let target = match (inst.meta.lfmc_percent, inst.target) {
            (Some(v), _) => v.min(LFMC_CAP),
            (None, Some(t)) => denormalize_target(t as f64, LFMC_CAP),
            (None, None) => {
                return Err(Error::Data(format!(
                    "instance {} has no label",
                    inst.meta.site_id
                )))
            }
        };
        out.preds.push(denormalize_target(y as f64, LFMC_CAP));
        out.targets.push(target);
        out.metas.push(inst.meta.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedRows {
    pub stratifier: Stratifier,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_kind: ModelKind,
    pub model_id: String,
    pub n: usize,
    pub overall: MetricRow,
    pub strata: Vec<StratifiedRows>,
    /// Moran's I of the residuals; absent when it cannot be computed.
    pub moran: Option<MoranResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moran_note: Option<String>,
}

/// Scores a predictor on a labeled split: overall and stratified metrics
/// plus Moran's I of the residuals under KNN weights.
pub fn evaluate<P, I>(
    predictor: &P,
    instances: &[I],
    config: &EvalConfig,
) -> Result<(EvaluationReport, Predictions)>
where
    P: Predictor + ?Sized,
    I: Borrow<TileInstance> + Sync,
{
    config.validate()?;
    let p = predict_split(predictor, instances)?;
    let overall = MetricRow::compute("Overall", &p.preds, &p.targets)?;
    let strata = config
        .stratifiers
        .iter()
        .map(|&s| {
            Ok(StratifiedRows {
                stratifier: s,
                rows: stratified_report(&p.preds, &p.targets, &p.metas, s)?,
            })
        })
        .collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = p.metas.iter().map(|m| (m.latitude, m.longitude)).collect();
    let residuals = p.residuals();
    let moran = knn_weights(&points, config.k).and_then(|w| {
        morans_i_pvalue(
            &residuals,
            &w,
            config.permutations,
            config.seed,
            config.alternative,
        )
    });
    let (moran, moran_note) = match moran {
        Ok(m) => (Some(m), None),
        Err(e @ Error::Data(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let report = EvaluationReport {
        model_kind: predictor.kind(),
        model_id: predictor.model_id(),
        n: p.preds.len(),
        overall,
        strata,
        moran,
        moran_note,
    };
    Ok((report, p))
}

/// Per-observation CSV: site, date, location, label, prediction, signed
/// error and percent error.
pub fn write_predictions_csv(path: &Path, p: &Predictions) -> Result<()> {
    let pe = percent_error(&p.preds, &p.targets).unwrap_or_default();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    w.write_record([
        "site_id",
        "date",
        "latitude",
        "longitude",
        "lfmc_percent",
        "predicted_percent",
        "error",
        "percent_error",
    ])?;
    for (i, m) in p.metas.iter().enumerate() {
        w.write_record([
            m.site_id.clone(),
            m.date.to_string(),
            format!("{:.6}", m.latitude),
            format!("{:.6}", m.longitude),
            format!("{:.6}", p.targets[i]),
            format!("{:.6}", p.preds[i]),
            format!("{:.6}", p.preds[i] - p.targets[i]),
            pe.get(i)
                .copied()
                .flatten()
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
