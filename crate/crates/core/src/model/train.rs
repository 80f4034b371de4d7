use std::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::regressor::{
    loss_and_grad, mean_loss, pool_features, target_of, ReferenceRegressor, DEFAULT_HIDDEN,
};
use crate::dataset::{DatasetContainer, SplitTag, TileInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_epochs: 100,
            patience: 5,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs, patience and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

impl TrainingHistory {
    pub fn best(&self) -> &EpochLoss {
        &self.epochs[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochOutcome {
    Improved,
    NotImproved,
    Stop,
}

/// Patience-based stopping: any strictly lower validation loss is an
/// improvement; `patience` consecutive non-improvements stop training.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub epochs_seen: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_seen: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> EpochOutcome {
        self.epochs_seen += 1;
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = self.epochs_seen;
            self.bad_epochs = 0;
            EpochOutcome::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                EpochOutcome::Stop
            } else {
                EpochOutcome::NotImproved
            }
        }
    }
}

/// Runs epochs until early stopping or `max_epochs`. `epoch` advances the
/// state and returns (train loss, val loss); `snapshot` captures the state
/// whenever validation loss improves, and the best snapshot is returned.
pub fn run_with_early_stopping<T, S>(
    max_epochs: usize,
    patience: usize,
    state: &mut T,
    mut epoch: impl FnMut(&mut T, usize) -> Result<(f64, f64)>,
    snapshot: impl Fn(&T) -> S,
) -> Result<(S, TrainingHistory)> {
    let mut stopper = EarlyStopping::new(patience);
    let mut epochs = Vec::new();
    let mut best = None;
    let mut early_stopped = false;
    for e in 1..=max_epochs {
        let (train_loss, val_loss) = epoch(state, e)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: e,
                batch: 0,
                loss: val_loss,
            });
        }
        epochs.push(EpochLoss {
            epoch: e,
            train_loss,
            val_loss,
        });
        match stopper.observe(val_loss) {
            EpochOutcome::Improved => best = Some(snapshot(state)),
            EpochOutcome::NotImproved => {}
            EpochOutcome::Stop => {
                early_stopped = true;
                break;
            }
        }
    }
    let stopped_epoch = epochs.len();
    let best = best.ok_or_else(|| Error::Data("no epoch completed".into()))?;
    Ok((
        best,
        TrainingHistory {
            epochs,
            best_epoch: stopper.best_epoch,
            stopped_epoch,
            early_stopped,
        },
    ))
}

fn pooled<I: Borrow<TileInstance>>(
    reg: &ReferenceRegressor,
    instances: &[I],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(instances.len());
    let mut ts = Vec::with_capacity(instances.len());
    for inst in instances {
        let inst = inst.borrow();
        super::check_input(&reg.layout, inst)?;
        xs.push(pool_features(inst, &reg.removed_modalities)?);
        ts.push(target_of(inst)?);
    }
    Ok((xs, ts))
}

struct SgdState {
    params: Vec<f64>,
    velocity: Vec<f64>,
    stored: Vec<f32>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

/// Fits the regressor by minibatch SGD with momentum on mean squared error,
/// with early stopping on the validation loss. Features are standardized
/// with statistics of the training split. The returned regressor carries the
/// parameters of the best epoch.
pub fn train<I: Borrow<TileInstance>>(
    mut regressor: ReferenceRegressor,
    train_set: &[I],
    val_set: &[I],
    config: &TrainingConfig,
) -> Result<(ReferenceRegressor, TrainingHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and val splits (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let (raw_train, ts_train) = pooled(&regressor, train_set)?;
    let (raw_val, ts_val) = pooled(&regressor, val_set)?;
    regressor.fit_standardizer(&raw_train);
    let xs_train: Vec<Vec<f64>> = raw_train.iter().map(|x| regressor.standardize(x)).collect();
    let xs_val: Vec<Vec<f64>> = raw_val.iter().map(|x| regressor.standardize(x)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut state = SgdState {
        params: regressor.params_f64(),
        velocity: vec![0.0; regressor.params.len()],
        stored: regressor.params.clone(),
        rng,
        order: (0..xs_train.len()).collect(),
    };
    let reg = &regressor;
    let (best, history) = run_with_early_stopping(
        config.max_epochs,
        config.patience,
        &mut state,
        |s, epoch| {
            s.order.shuffle(&mut s.rng);
            let mut total = 0.0;
            for (bi, chunk) in s.order.chunks(config.batch_size).enumerate() {
                let xs: Vec<&[f64]> = chunk.iter().map(|&i| xs_train[i].as_slice()).collect();
                let ts: Vec<f64> = chunk.iter().map(|&i| ts_train[i]).collect();
                let (loss, grad) = loss_and_grad(reg, &s.params, &xs, &ts, 1.0);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Divergence {
                        epoch,
                        batch: bi + 1,
                        loss,
                    });
                }
                total += loss * chunk.len() as f64;
                for ((p, v), g) in s.params.iter_mut().zip(&mut s.velocity).zip(&grad) {
                    *v = config.momentum * *v - config.learning_rate * g;
                    *p += *v;
                }
            }
            s.stored = s.params.iter().map(|&p| p as f32).collect();
            let rounded: Vec<f64> = s.stored.iter().map(|&p| p as f64).collect();
            let val = mean_loss(reg, &rounded, &xs_val, &ts_val);
            Ok((total / xs_train.len() as f64, val))
        },
        |s| s.stored.clone(),
    )?;
    regressor.params = best;
    Ok((regressor, history))
}

/// Trains on the train and val splits of a dataset.
/// Modalities zero-filled in the dataset stay zero-filled at prediction time.
pub fn train_on_dataset(
    mut regressor: ReferenceRegressor,
    dataset: &DatasetContainer,
    config: &TrainingConfig,
) -> Result<(ReferenceRegressor, TrainingHistory)> {
    regressor.removed_modalities = dataset.removed_modalities.clone();
    train(
        regressor,
        &dataset.subset(SplitTag::Train),
        &dataset.subset(SplitTag::Val),
        config,
    )
}
