use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::{check_input, ModelKind, Predictor};
use crate::dataset::{FeatureLayout, TileInstance};
use crate::error::{Error, Result};

/// Predicts the mean training target of the instance's calendar month,
/// falling back to the overall training mean for months never seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyAverageModel {
    pub layout: FeatureLayout,
    /// Normalized means for January through December.
    pub month_means: [f32; 12],
    pub month_counts: [u32; 12],
    pub global_mean: f32,
}

pub fn fit_monthly_baseline<I: std::borrow::Borrow<TileInstance>>(
    train: &[I],
) -> Result<MonthlyAverageModel> {
    let first = train
        .first()
        .ok_or_else(|| {
            Error::Data("cannot fit the monthly baseline on an empty training set".into())
        })?
        .borrow();
    let mut sums = [0.0f64; 12];
    let mut counts = [0u32; 12];
    let (mut total, mut n) = (0.0f64, 0usize);
    for inst in train {
        let inst = inst.borrow();
        let t = inst.target.ok_or_else(|| {
            Error::Data(format!(
                "training instance {} has no target",
                inst.meta.site_id
            ))
        })?;
        let m = inst.meta.date.month0() as usize;
        sums[m] += t as f64;
        counts[m] += 1;
        total += t as f64;
        n += 1;
    }
    let global = (total / n as f64).clamp(0.0, 1.0) as f32;
    let mut month_means = [global; 12];
    for m in 0..12 {
        if counts[m] > 0 {
            month_means[m] = (sums[m] / counts[m] as f64).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(MonthlyAverageModel {
        layout: (*first.layout).clone(),
        month_means,
        month_counts: counts,
        global_mean: global,
    })
}

impl Predictor for MonthlyAverageModel {
    fn kind(&self) -> ModelKind {
        ModelKind::MonthlyAverage
    }

    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn predict(&self, instance: &TileInstance) -> Result<f32> {
        check_input(&self.layout, instance)?;
        Ok(self.month_means[instance.meta.date.month0() as usize])
    }

    fn model_id(&self) -> String {
        super::model_id(&super::AnyPredictor::MonthlyAverage(self.clone()))
    }
}
