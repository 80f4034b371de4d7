use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{split, SplitConfig, SplitCounts, SplitTag};
use super::tile::{extract_instance, locate, FeatureLayout, InstanceMeta, TileInstance, TileShape};
use crate::error::{Error, Result};
use crate::ingest::{InputCube, Modality, SiteObservation};

pub const DATASET_FORMAT: &str = "lfmc-dataset";
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub split: SplitTag,
    /// Byte offset of the record in the tensor file.
    pub offset: u64,
    pub target: Option<f32>,
    #[serde(flatten)]
    pub meta: InstanceMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub layout: FeatureLayout,
    pub cap_percent: f64,
    pub split: SplitConfig,
    pub counts: SplitCounts,
    /// Observations dropped because their tile contained nodata.
    pub excluded_nodata: usize,
    /// Modalities whose blocks were zero-filled.
    #[serde(default)]
    pub removed_modalities: Vec<Modality>,
    /// Floats per record: all feature blocks followed by the target.
    pub record_floats: usize,
    pub instances: Vec<InstanceRecord>,
}

/// Instances with their split membership, stored as a directory holding a
/// JSON manifest and a little-endian `f32` tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    pub layout: Arc<FeatureLayout>,
    pub cap_percent: f64,
    pub split: SplitConfig,
    pub excluded_nodata: usize,
    pub removed_modalities: Vec<Modality>,
    pub instances: Vec<TileInstance>,
    pub tags: Vec<SplitTag>,
}

/// Extracts one instance per observation and assigns splits. Each observation
/// is taken from the first cube whose extent and months hold its tile;
/// instances containing nodata are dropped and counted.
pub fn build_dataset(
    observations: &[SiteObservation],
    cubes: &[InputCube],
    shape: TileShape,
    split_config: &SplitConfig,
    cap: f64,
) -> Result<DatasetContainer> {
    shape.validate()?;
    let first = cubes
        .first()
        .ok_or_else(|| Error::Config("no input cubes to build a dataset from".into()))?;
    for c in &cubes[1..] {
        if c.specs != first.specs {
            return Err(Error::Data(format!(
                "cube {} has different modalities than cube {}",
                c.id, first.id
            )));
        }
    }
    let layout = Arc::new(FeatureLayout::new(&first.specs, shape));
    let assignment = split(observations, split_config)?;

    let extracted: Vec<Option<TileInstance>> = observations
        .par_iter()
        .map(|obs| {
            let cube = cubes
                .iter()
                .find(|c| locate(c, obs, shape).is_some())
                .ok_or_else(|| {
                    Error::Data(format!(
                        "observation {} on {} is not covered by any cube with a {shape} tile",
                        obs.sample.site_id, obs.sample.date
                    ))
                })?;
            let inst = extract_instance(cube, obs, &layout, cap)?;
            Ok(inst.is_complete().then_some(inst))
        })
        .collect::<Result<_>>()?;

    let mut instances = Vec::new();
    let mut tags = Vec::new();
    let mut excluded = 0;
    for (obs, inst) in observations.iter().zip(extracted) {
        match inst {
            Some(mut i) => {
                i.masks.iter_mut().for_each(|m| *m = None);
                tags.push(
                    assignment
                        .tag(&obs.sample.site_id, obs.sample.date)
                        .expect("assigned"),
                );
                instances.push(i);
            }
            None => excluded += 1,
        }
    }
    Ok(DatasetContainer {
        layout,
        cap_percent: cap,
        split: *split_config,
        excluded_nodata: excluded,
        removed_modalities: Vec::new(),
        instances,
        tags,
    })
}

impl DatasetContainer {
    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for &t in &self.tags {
            c.add(t);
        }
        c
    }

    pub fn subset(&self, tag: SplitTag) -> Vec<&TileInstance> {
        self.instances
            .iter()
            .zip(&self.tags)
            .filter(|(_, &t)| t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn record_floats(&self) -> usize {
        self.layout.feature_len() + 1
    }

    /// Center-crops every instance to a smaller shape.
    pub fn crop(&self, shape: TileShape) -> Result<DatasetContainer> {
        let instances: Vec<TileInstance> = self
            .instances
            .par_iter()
            .map(|i| i.crop(shape))
            .collect::<Result<_>>()?;
        let layout = Arc::new(self.layout.with_shape(shape));
        Ok(DatasetContainer {
            layout: layout.clone(),
            instances: instances
                .into_iter()
                .map(|mut i| {
                    i.layout = layout.clone();
                    i
                })
                .collect(),
            ..self.clone_without_instances()
        })
    }

    /// Zero-fills one modality in every instance.
    pub fn without_modality(&self, m: Modality) -> DatasetContainer {
        let mut out = self.clone_without_instances();
        out.instances = self
            .instances
            .iter()
            .map(|i| i.without_modality(m))
            .collect();
        if self.layout.block_index(m).is_some() && !out.removed_modalities.contains(&m) {
            out.removed_modalities.push(m);
        }
        out
    }

    fn clone_without_instances(&self) -> DatasetContainer {
        DatasetContainer {
            layout: self.layout.clone(),
            cap_percent: self.cap_percent,
            split: self.split,
            excluded_nodata: self.excluded_nodata,
            removed_modalities: self.removed_modalities.clone(),
            instances: Vec::new(),
            tags: self.tags.clone(),
        }
    }

    pub fn manifest(&self) -> DatasetManifest {
        let rec_bytes = (self.record_floats() * 4) as u64;
        DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_FORMAT_VERSION,
            layout: (*self.layout).clone(),
            cap_percent: self.cap_percent,
            split: self.split,
            counts: self.counts(),
            excluded_nodata: self.excluded_nodata,
            removed_modalities: self.removed_modalities.clone(),
            record_floats: self.record_floats(),
            instances: self
                .instances
                .iter()
                .zip(&self.tags)
                .enumerate()
                .map(|(i, (inst, &split))| InstanceRecord {
                    split,
                    offset: i as u64 * rec_bytes,
                    target: inst.target,
                    meta: inst.meta.clone(),
                })
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tpath = dir.join(TENSORS_FILE);
        let file = fs::File::create(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let mut w = BufWriter::new(file);
        for inst in &self.instances {
            for block in &inst.blocks {
                for v in block {
                    w.write_all(&v.to_le_bytes())
                        .map_err(|e| Error::io(&tpath, e))?;
                }
            }
            let t = inst.target.unwrap_or(f32::NAN);
            w.write_all(&t.to_le_bytes())
                .map_err(|e| Error::io(&tpath, e))?;
        }
        w.flush().map_err(|e| Error::io(&tpath, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&self.manifest())?;
        fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
    }

    pub fn read(dir: &Path) -> Result<DatasetContainer> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let value: serde_json::Value =
            serde_json::from_slice(&text).map_err(|e| Error::corrupt(&mpath, e.to_string()))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(DATASET_FORMAT) {
            return Err(Error::corrupt(&mpath, "not a dataset manifest"));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let m: DatasetManifest =
            serde_json::from_value(value).map_err(|e| Error::corrupt(&mpath, e.to_string()))?;
        let layout = Arc::new(m.layout.clone());
        let rec = layout.feature_len() + 1;
        if m.record_floats != rec {
            return Err(Error::corrupt(
                &mpath,
                format!(
                    "record length {} does not match layout ({rec})",
                    m.record_floats
                ),
            ));
        }
        let tpath = dir.join(TENSORS_FILE);
        let bytes = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let rec_bytes = rec * 4;
        if bytes.len() != rec_bytes * m.instances.len() {
            return Err(Error::corrupt(
                &tpath,
                format!(
                    "expected {} bytes for {} records, found {}",
                    rec_bytes * m.instances.len(),
                    m.instances.len(),
                    bytes.len()
                ),
            ));
        }
        let mut instances = Vec::with_capacity(m.instances.len());
        let mut tags = Vec::with_capacity(m.instances.len());
        for (i, r) in m.instances.iter().enumerate() {
            if r.offset != (i * rec_bytes) as u64 {
                return Err(Error::corrupt(
                    &mpath,
                    format!("record {i} has offset {}", r.offset),
                ));
            }
            let chunk = &bytes[i * rec_bytes..(i + 1) * rec_bytes];
            let floats: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let mut blocks = Vec::with_capacity(layout.blocks.len());
            let mut pos = 0;
            for b in &layout.blocks {
                blocks.push(floats[pos..pos + b.len()].to_vec());
                pos += b.len();
            }
            let target = floats[pos];
            let target = (!target.is_nan()).then_some(target);
            if target != r.target {
                return Err(Error::corrupt(
                    &tpath,
                    format!("record {i} target disagrees with manifest"),
                ));
            }
            instances.push(TileInstance {
                layout: layout.clone(),
                masks: vec![None; blocks.len()],
                blocks,
                target,
                meta: r.meta.clone(),
            });
            tags.push(r.split);
        }
        Ok(DatasetContainer {
            layout,
            cap_percent: m.cap_percent,
            split: m.split,
            excluded_nodata: m.excluded_nodata,
            removed_modalities: m.removed_modalities,
            instances,
            tags,
        })
    }
}
