use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, ModelKind, Predictor};
use crate::dataset::{BlockKind, FeatureLayout, TileInstance};
use crate::error::{Error, Result};
use crate::ingest::Modality;

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];

/// Pools a tile into a flat feature vector: the spatial mean of every band at
/// every timestep for gridded blocks, the raw values of regional series and
/// location. Masked cells are skipped; a slot with no valid cell is an error.
/// Blocks of `removed` modalities contribute zeros.
pub fn pool_features(instance: &TileInstance, removed: &[Modality]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, spec) in instance.layout.blocks.iter().enumerate() {
        let block = &instance.blocks[i];
        let mask = instance.masks[i].as_deref();
        let zero = removed.contains(&spec.modality);
        let nb = spec.bands.len();
        match spec.kind {
            BlockKind::SpaceTime | BlockKind::Terrain => {
                let (cells, steps) = match spec.kind {
                    BlockKind::SpaceTime => (spec.dims[0] * spec.dims[1], spec.dims[2]),
                    _ => (spec.dims[0] * spec.dims[1], 1),
                };
                let mut sums = vec![0.0f64; steps * nb];
                let mut counts = vec![0usize; steps];
                for cell in 0..cells {
                    for t in 0..steps {
                        let k = cell * steps + t;
                        if mask.is_some_and(|m| !m[k]) {
                            continue;
                        }
                        counts[t] += 1;
                        for b in 0..nb {
                            sums[t * nb + b] += block[k * nb + b] as f64;
                        }
                    }
                }
                for t in 0..steps {
                    if counts[t] == 0 && !zero {
                        return Err(Error::Data(format!(
                            "{} has no valid pixel at timestep {t} of the tile",
                            spec.modality
                        )));
                    }
                    for b in 0..nb {
                        out.push(if zero {
                            0.0
                        } else {
                            sums[t * nb + b] / counts[t] as f64
                        });
                    }
                }
            }
            BlockKind::TimeOnly | BlockKind::Location => {
                out.extend(block.iter().map(|&v| if zero { 0.0 } else { v as f64 }));
            }
        }
    }
    Ok(out)
}

/// Number of pooled features a layout produces.
pub fn pooled_len(layout: &FeatureLayout) -> usize {
    layout
        .blocks
        .iter()
        .map(|b| match b.kind {
            BlockKind::SpaceTime => b.dims[2] * b.dims[3],
            BlockKind::Terrain => b.dims[2],
            BlockKind::TimeOnly | BlockKind::Location => b.len(),
        })
        .sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Fully connected network with tanh hidden layers and a sigmoid output.
/// Parameters are stored layer by layer: weights (row per output) then biases.
pub(crate) struct Mlp<'a> {
    pub dims: &'a [usize],
}

impl Mlp<'_> {
    /// Forward pass; `acts` receives the input and every layer's activations.
    pub fn forward(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        let layers = self.dims.len() - 1;
        acts.clear();
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            let w = &params[off..off + ni * no];
            let b = &params[off + ni * no..off + ni * no + no];
            off += ni * no + no;
            let a = &acts[l];
            let z: Vec<f64> = (0..no)
                .map(|r| {
                    let s = w[r * ni..(r + 1) * ni]
                        .iter()
                        .zip(a)
                        .fold(b[r], |s, (wi, ai)| s + wi * ai);
                    if l + 1 < layers {
                        s.tanh()
                    } else {
                        sigmoid(s)
                    }
                })
                .collect();
            acts.push(z);
        }
        acts[layers][0]
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to the output is `dy`.
    pub fn backward(&self, params: &[f64], acts: &[Vec<f64>], dy: f64, grad: &mut [f64]) {
        let layers = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.dims[l] * self.dims[l + 1] + self.dims[l + 1];
        }
        let y = acts[layers][0];
        let mut delta = vec![dy * y * (1.0 - y)];
        for l in (0..layers).rev() {
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            let w_off = offsets[l];
            let b_off = w_off + ni * no;
            let a = &acts[l];
            for (r, &d) in delta.iter().enumerate() {
                for (g, &ak) in grad[w_off + r * ni..w_off + (r + 1) * ni].iter_mut().zip(a) {
                    *g += d * ak;
                }
                grad[b_off + r] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0f64; ni];
                for (r, &d) in delta.iter().enumerate() {
                    for (p, &wk) in prev
                        .iter_mut()
                        .zip(&params[w_off + r * ni..w_off + (r + 1) * ni])
                    {
                        *p += wk * d;
                    }
                }
                for (p, &ak) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - ak * ak;
                }
                delta = prev;
            }
        }
    }
}

/// Pooled-feature regressor: standardized pooled features feed a small
/// fully connected network whose sigmoid output is the normalized LFMC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRegressor {
    pub layout: FeatureLayout,
    pub hidden: Vec<usize>,
    pub removed_modalities: Vec<Modality>,
    pub input_mean: Vec<f32>,
    pub input_scale: Vec<f32>,
    pub params: Vec<f32>,
}

impl ReferenceRegressor {
    /// A fresh network with weights drawn uniformly from
    /// ±sqrt(3 / fan_in) using `seed`, zero biases and identity standardization.
    pub fn new(layout: FeatureLayout, hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid hidden layer widths {hidden:?}"
            )));
        }
        let d = pooled_len(&layout);
        let mut dims = vec![d];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(&dims));
        for w in dims.windows(2) {
            let limit = (3.0 / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.gen_range(-limit..limit) as f32);
            }
            params.extend(std::iter::repeat_n(0.0f32, w[1]));
        }
        Ok(ReferenceRegressor {
            layout,
            hidden: hidden.to_vec(),
            removed_modalities: Vec::new(),
            input_mean: vec![0.0; d],
            input_scale: vec![1.0; d],
            params,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_mean.len()];
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }

    /// Sets the standardization from training features: per-feature mean and
    /// population standard deviation, with constant features left unscaled.
    pub fn fit_standardizer(&mut self, features: &[Vec<f64>]) {
        let d = self.input_mean.len();
        let n = features.len().max(1) as f64;
        for j in 0..d {
            let mean = features.iter().map(|f| f[j]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            self.input_mean[j] = mean as f32;
            self.input_scale[j] = if sd > 1e-12 && sd.is_finite() {
                sd as f32
            } else {
                1.0
            };
        }
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(&v, (&m, &s))| (v - m as f64) / s as f64)
            .collect()
    }

    /// Standardized features of an instance.
    pub fn features(&self, instance: &TileInstance) -> Result<Vec<f64>> {
        check_input(&self.layout, instance)?;
        Ok(self.standardize(&pool_features(instance, &self.removed_modalities)?))
    }

    pub(crate) fn output(&self, params: &[f64], x: &[f64]) -> f64 {
        let dims = self.dims();
        let mut acts = Vec::new();
        Mlp { dims: &dims }.forward(params, x, &mut acts)
    }

    /// Mean squared error on instances with targets.
    pub fn mse<I: std::borrow::Borrow<TileInstance>>(&self, instances: &[I]) -> Result<f64> {
        let mut xs = Vec::with_capacity(instances.len());
        let mut ts = Vec::with_capacity(instances.len());
        for inst in instances {
            let inst = inst.borrow();
            xs.push(self.features(inst)?);
            ts.push(target_of(inst)?);
        }
        Ok(mean_loss(self, &self.params_f64(), &xs, &ts))
    }
}

pub(crate) fn target_of(inst: &TileInstance) -> Result<f64> {
    inst.target.map(f64::from).ok_or_else(|| {
        Error::Data(format!(
            "instance {} on {} has no target",
            inst.meta.site_id, inst.meta.date
        ))
    })
}

pub(crate) fn mean_loss(
    reg: &ReferenceRegressor,
    params: &[f64],
    xs: &[Vec<f64>],
    ts: &[f64],
) -> f64 {
    let dims = reg.dims();
    let mlp = Mlp { dims: &dims };
    let mut acts = Vec::new();
    let sum: f64 = xs
        .iter()
        .zip(ts)
        .map(|(x, &t)| (mlp.forward(params, x, &mut acts) - t).powi(2))
        .sum();
    sum / xs.len().max(1) as f64
}

/// Mean squared error over a batch, times `scale`, and its gradient.
pub(crate) fn loss_and_grad(
    reg: &ReferenceRegressor,
    params: &[f64],
    xs: &[&[f64]],
    ts: &[f64],
    scale: f64,
) -> (f64, Vec<f64>) {
    let dims = reg.dims();
    let mlp = Mlp { dims: &dims };
    let mut grad = vec![0.0f64; params.len()];
    let mut acts = Vec::new();
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &t) in xs.iter().zip(ts) {
        let y = mlp.forward(params, x, &mut acts);
        loss += (y - t).powi(2);
        mlp.backward(params, &acts, scale * 2.0 * (y - t) / n, &mut grad);
    }
    (scale * loss / n, grad)
}

impl Predictor for ReferenceRegressor {
    fn kind(&self) -> ModelKind {
        ModelKind::ReferenceRegressor
    }

    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    fn predict(&self, instance: &TileInstance) -> Result<f32> {
        let x = self.features(instance)?;
        let y = self.output(&self.params_f64(), &x);
        if !y.is_finite() {
            return Err(Error::Data(format!(
                "non-finite prediction for {}",
                instance.meta.site_id
            )));
        }
        Ok(y.clamp(0.0, 1.0) as f32)
    }

    fn model_id(&self) -> String {
        super::model_id(&super::AnyPredictor::Regressor(self.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheckOptions {
    pub epsilon: f64,
    /// Number of parameters compared.
    pub samples: usize,
    pub seed: u64,
    pub loss_scale: f64,
}

impl Default for GradientCheckOptions {
    fn default() -> Self {
        GradientCheckOptions {
            epsilon: 1e-5,
            samples: 64,
            seed: 0,
            loss_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub checked: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Denominator floor of the relative error, so parameters with vanishing
/// gradients are compared on an absolute scale.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of the squared error on one instance with
/// central finite differences, for a seeded random subset of parameters.
pub fn gradient_check(
    reg: &ReferenceRegressor,
    instance: &TileInstance,
    epsilon: f64,
) -> Result<f64> {
    let opts = GradientCheckOptions {
        epsilon,
        ..GradientCheckOptions::default()
    };
    Ok(gradient_check_with(reg, instance, &opts)?.max_relative_error)
}

pub fn gradient_check_with(
    reg: &ReferenceRegressor,
    instance: &TileInstance,
    opts: &GradientCheckOptions,
) -> Result<GradientCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(Error::Config(format!(
            "epsilon {} outside [1e-7, 1e-3]",
            opts.epsilon
        )));
    }
    let x = reg.features(instance)?;
    let t = instance.target.map(f64::from).unwrap_or(0.5);
    let mut params = reg.params_f64();
    let (_, grad) = loss_and_grad(reg, &params, &[&x], &[t], opts.loss_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = params.len();
    let mut checked: Vec<usize> = sample(&mut rng, n, opts.samples.min(n)).into_vec();
    checked.sort_unstable();
    let loss = |p: &[f64]| opts.loss_scale * (reg.output(p, &x) - t).powi(2);
    let mut numeric = Vec::with_capacity(checked.len());
    let mut analytic = Vec::with_capacity(checked.len());
    let mut worst = 0.0f64;
    for &i in &checked {
        let orig = params[i];
        params[i] = orig + opts.epsilon;
        let up = loss(&params);
        params[i] = orig - opts.epsilon;
        let down = loss(&params);
        params[i] = orig;
        let num = (up - down) / (2.0 * opts.epsilon);
        let ana = grad[i];
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(GRADIENT_CHECK_FLOOR);
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        numeric.push(num);
        analytic.push(ana);
    }
    Ok(GradientCheckReport {
        max_relative_error: worst,
        checked,
        analytic,
        numeric,
    })
}
