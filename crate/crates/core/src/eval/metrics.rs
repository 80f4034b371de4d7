use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::InstanceMeta;
use crate::domain::{LandCoverClass, Season};
use crate::error::{Error, Result};

fn check_pair(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            dimension: "predictions",
            expected: targets.len(),
            found: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Data("metrics need at least one prediction".into()));
    }
    Ok(())
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let sse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

/// Coefficient of determination. Undefined, and an error, when the targets
/// have zero variance.
pub fn r2(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let sst: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if sst == 0.0 {
        return Err(Error::Data(
            "R² is undefined for targets with zero variance".into(),
        ));
    }
    let sse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - sse / sst)
}

/// Signed error of each prediction as a percentage of its target; `None`
/// where the target is zero.
pub fn percent_error(preds: &[f64], targets: &[f64]) -> Result<Vec<Option<f64>>> {
    check_pair(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (*t != 0.0).then(|| 100.0 * (p - t) / t))
        .collect())
}

/// Metrics of one stratum, in percent LFMC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub stratum: String,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the stratum's targets have zero variance.
    pub r2: Option<f64>,
}

impl MetricRow {
    pub fn compute(
        stratum: impl Into<String>,
        preds: &[f64],
        targets: &[f64],
    ) -> Result<MetricRow> {
        Ok(MetricRow {
            stratum: stratum.into(),
            n: preds.len(),
            rmse: rmse(preds, targets)?,
            mae: mae(preds, targets)?,
            r2: match r2(preds, targets) {
                Ok(v) => Some(v),
                Err(Error::Data(_)) => None,
                Err(e) => return Err(e),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratifier {
    Season,
    LandCover,
    ElevationBand,
}

impl Stratifier {
    pub const ALL: [Stratifier; 3] = [
        Stratifier::Season,
        Stratifier::LandCover,
        Stratifier::ElevationBand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stratifier::Season => "season",
            Stratifier::LandCover => "land_cover",
            Stratifier::ElevationBand => "elevation_band",
        }
    }

    /// Sort key and label of the stratum an instance falls in, if known.
    pub fn stratum(self, meta: &InstanceMeta) -> Option<(i64, String)> {
        match self {
            Stratifier::Season => {
                let s = meta.season();
                Some((
                    Season::ALL.iter().position(|&x| x == s)? as i64,
                    s.label().to_string(),
                ))
            }
            Stratifier::LandCover => {
                let c = meta.land_cover?;
                Some((
                    LandCoverClass::ALL.iter().position(|&x| x == c)? as i64,
                    c.label().to_string(),
                ))
            }
            Stratifier::ElevationBand => {
                meta.elevation_band().map(|b| (b.lower_m as i64, b.label()))
            }
        }
    }
}

impl fmt::Display for Stratifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stratifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stratifier::ALL
            .into_iter()
            .find(|x| x.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown stratifier {s:?}")))
    }
}

/// An "Overall" row followed by one row per non-empty stratum, in the
/// stratifier's natural order. Instances lacking the attribute count in
/// the overall row only.
pub fn stratified_report(
    preds: &[f64],
    targets: &[f64],
    metas: &[InstanceMeta],
    stratifier: Stratifier,
) -> Result<Vec<MetricRow>> {
    check_pair(preds, targets)?;
    if metas.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            dimension: "observations",
            expected: preds.len(),
            found: metas.len(),
        });
    }
    let mut groups: BTreeMap<(i64, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((p, t), m) in preds.iter().zip(targets).zip(metas) {
        if let Some(key) = stratifier.stratum(m) {
            let g = groups.entry(key).or_default();
            g.0.push(*p);
            g.1.push(*t);
        }
    }
    let mut rows = vec![MetricRow::compute("Overall", preds, targets)?];
    for ((_, label), (p, t)) in groups {
        rows.push(MetricRow::compute(label, &p, &t)?);
    }
    Ok(rows)
}

/// CSV with columns stratum, n, rmse, mae, r2 (empty when undefined).
pub fn write_metric_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::corrupt(path, e.to_string()))?;
    w.write_record(["stratum", "n", "rmse", "mae", "r2"])?;
    for r in rows {
        w.write_record([
            r.stratum.clone(),
            r.n.to_string(),
            format!("{:.6}", r.rmse),
            format!("{:.6}", r.mae),
            r.r2.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
