//! Predictors: the monthly-average baseline and the pooled-feature reference
//! regressor, with its training loop and the model container format.

pub mod baseline;
pub mod persist;
pub mod regressor;
pub mod train;

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baseline::{fit_monthly_baseline, MonthlyAverageModel};
pub use persist::{
    load_model, model_id, read_header, save_model, ModelHeader, MODEL_FORMAT_VERSION,
};
pub use regressor::{
    gradient_check, gradient_check_with, pool_features, pooled_len, GradientCheckOptions,
    GradientCheckReport, ReferenceRegressor, DEFAULT_HIDDEN,
};
pub use train::{
    run_with_early_stopping, train, train_on_dataset, EarlyStopping, EpochLoss, EpochOutcome,
    TrainingConfig, TrainingHistory,
};

use crate::dataset::{FeatureLayout, TileInstance, TileShape};
use crate::error::Result;
use crate::ingest::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MonthlyAverage,
    ReferenceRegressor,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::MonthlyAverage => "Monthly average",
            ModelKind::ReferenceRegressor => "Reference regressor",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            ModelKind::MonthlyAverage => "baseline",
            ModelKind::ReferenceRegressor => "regressor",
        }
    }
}

/// A fitted model mapping an instance to a normalized LFMC in [0, 1].
pub trait Predictor: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn layout(&self) -> &FeatureLayout;

    fn input_shape(&self) -> TileShape {
        self.layout().shape
    }

    fn modalities(&self) -> Vec<Modality> {
        self.layout().modalities()
    }

    fn predict(&self, instance: &TileInstance) -> Result<f32>;

    /// Content digest identifying the fitted model.
    fn model_id(&self) -> String;
}

pub(crate) fn check_input(layout: &FeatureLayout, instance: &TileInstance) -> Result<()> {
    layout.check_compatible(&instance.layout)
}

/// Predicts every instance, in order. Fails on the first incompatible instance.
pub fn predict_batch<P, I>(predictor: &P, instances: &[I]) -> Result<Vec<f32>>
where
    P: Predictor + ?Sized,
    I: Borrow<TileInstance> + Sync,
{
    instances
        .par_iter()
        .map(|i| predictor.predict(i.borrow()))
        .collect()
}

/// Either model kind, as loaded from a container.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPredictor {
    MonthlyAverage(MonthlyAverageModel),
    Regressor(ReferenceRegressor),
}

impl Predictor for AnyPredictor {
    fn kind(&self) -> ModelKind {
        match self {
            AnyPredictor::MonthlyAverage(m) => m.kind(),
            AnyPredictor::Regressor(m) => m.kind(),
        }
    }

    fn layout(&self) -> &FeatureLayout {
        match self {
            AnyPredictor::MonthlyAverage(m) => m.layout(),
            AnyPredictor::Regressor(m) => m.layout(),
        }
    }

    fn predict(&self, instance: &TileInstance) -> Result<f32> {
        match self {
            AnyPredictor::MonthlyAverage(m) => m.predict(instance),
            AnyPredictor::Regressor(m) => m.predict(instance),
        }
    }

    fn model_id(&self) -> String {
        persist::model_id(self)
    }
}
