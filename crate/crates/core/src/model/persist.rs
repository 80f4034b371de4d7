use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::baseline::MonthlyAverageModel;
use super::regressor::{param_count, pooled_len, ReferenceRegressor};
use super::train::TrainingConfig;
use super::{AnyPredictor, ModelKind};
use crate::dataset::FeatureLayout;
use crate::error::{Error, Result};
use crate::ingest::Modality;

pub const MODEL_FORMAT: &str = "lfmc-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub layout: FeatureLayout,
    #[serde(default)]
    pub removed_modalities: Vec<Modality>,
    /// Hidden layer widths of the regressor.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Counts of the consecutive `f32` arrays in the weights file.
    pub weight_arrays: Vec<(String, usize)>,
    #[serde(default)]
    pub month_counts: Option<[u32; 12]>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
}

fn encode(model: &AnyPredictor, training: Option<&TrainingConfig>) -> (ModelHeader, Vec<u8>) {
    let mut arrays: Vec<(String, &[f32])> = Vec::new();
    let header = match model {
        AnyPredictor::MonthlyAverage(m) => {
            arrays.push(("month_means".into(), &m.month_means));
            arrays.push(("global_mean".into(), std::slice::from_ref(&m.global_mean)));
            ModelHeader {
                format: MODEL_FORMAT.into(),
                version: MODEL_FORMAT_VERSION,
                kind: ModelKind::MonthlyAverage,
                layout: m.layout.clone(),
                removed_modalities: Vec::new(),
                hidden: Vec::new(),
                weight_arrays: Vec::new(),
                month_counts: Some(m.month_counts),
                training: None,
            }
        }
        AnyPredictor::Regressor(r) => {
            arrays.push(("input_mean".into(), &r.input_mean));
            arrays.push(("input_scale".into(), &r.input_scale));
            arrays.push(("params".into(), &r.params));
            ModelHeader {
                format: MODEL_FORMAT.into(),
                version: MODEL_FORMAT_VERSION,
                kind: ModelKind::ReferenceRegressor,
                layout: r.layout.clone(),
                removed_modalities: r.removed_modalities.clone(),
                hidden: r.hidden.clone(),
                weight_arrays: Vec::new(),
                month_counts: None,
                training: training.cloned(),
            }
        }
    };
    let mut header = header;
    let mut bytes = Vec::new();
    for (name, a) in arrays {
        header.weight_arrays.push((name, a.len()));
        for v in a {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (header, bytes)
}

/// Writes a model directory. The training configuration, when given, is
/// recorded alongside the weights.
pub fn save_model(
    model: &AnyPredictor,
    dir: &Path,
    training: Option<&TrainingConfig>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (header, bytes) = encode(model, training);
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MODEL_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&mpath, e))
}

/// Content digest of a model, stable across save and load.
pub fn model_id(model: &AnyPredictor) -> String {
    let (header, bytes) = encode(model, None);
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&header).expect("header serializes"));
    h.update(&bytes);
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn read_header(dir: &Path) -> Result<ModelHeader> {
    let mpath = dir.join(MODEL_FILE);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| Error::corrupt(&mpath, e.to_string()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
        return Err(Error::corrupt(&mpath, "not a model container"));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::corrupt(&mpath, e.to_string()))
}

pub fn load_model(dir: &Path) -> Result<AnyPredictor> {
    let header = read_header(dir)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let expected: usize = header.weight_arrays.iter().map(|(_, n)| n * 4).sum();
    if bytes.len() != expected {
        return Err(Error::corrupt(
            &wpath,
            format!(
                "expected {expected} bytes of weights, found {}",
                bytes.len()
            ),
        ));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut arrays = std::collections::BTreeMap::new();
    let mut pos = 0;
    for (name, n) in &header.weight_arrays {
        arrays.insert(name.as_str(), floats[pos..pos + n].to_vec());
        pos += n;
    }
    let mut take = |name: &str, len: usize| -> Result<Vec<f32>> {
        let a = arrays
            .remove(name)
            .ok_or_else(|| Error::corrupt(&wpath, format!("missing weight array {name}")))?;
        if a.len() != len {
            return Err(Error::corrupt(
                &wpath,
                format!("{name} has {} values, expected {len}", a.len()),
            ));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::corrupt(
                &wpath,
                format!("{name} contains non-finite values"),
            ));
        }
        Ok(a)
    };
    match header.kind {
        ModelKind::MonthlyAverage => {
            let means = take("month_means", 12)?;
            let global = take("global_mean", 1)?[0];
            let mut month_means = [0.0f32; 12];
            month_means.copy_from_slice(&means);
            Ok(AnyPredictor::MonthlyAverage(MonthlyAverageModel {
                layout: header.layout,
                month_means,
                month_counts: header.month_counts.unwrap_or_default(),
                global_mean: global,
            }))
        }
        ModelKind::ReferenceRegressor => {
            let d = pooled_len(&header.layout);
            if header.hidden.is_empty() {
                return Err(Error::corrupt(dir, "regressor has no hidden layers"));
            }
            let mut dims = vec![d];
            dims.extend_from_slice(&header.hidden);
            dims.push(1);
            Ok(AnyPredictor::Regressor(ReferenceRegressor {
                input_mean: take("input_mean", d)?,
                input_scale: take("input_scale", d)?,
                params: take("params", param_count(&dims))?,
                layout: header.layout,
                hidden: header.hidden,
                removed_modalities: header.removed_modalities,
            }))
        }
    }
}
