use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SiteObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "{name} fraction {f} must lie in (0, 1)"
                )));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Observations are assigned independently.
    #[default]
    Random,
    /// All observations of a site share one subset.
    SiteGrouped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub fractions: SplitFractions,
    pub seed: u64,
    pub mode: SplitMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn add(&mut self, tag: SplitTag) {
        match tag {
            SplitTag::Train => self.train += 1,
            SplitTag::Val => self.val += 1,
            SplitTag::Test => self.test += 1,
        }
    }
}

pub type ObservationKey = (String, NaiveDate);

/// Subset membership of every observation key.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub config: SplitConfig,
    pub tags: BTreeMap<ObservationKey, SplitTag>,
}

impl SplitAssignment {
    pub fn tag(&self, site: &str, date: NaiveDate) -> Option<SplitTag> {
        self.tags.get(&(site.to_string(), date)).copied()
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for &t in self.tags.values() {
            c.add(t);
        }
        c
    }
}

/// Subset sizes: validation and test sizes are rounded down, training takes
/// the remainder.
pub fn split_sizes(n: usize, f: &SplitFractions) -> SplitCounts {
    let val = (n as f64 * f.val + 1e-9).floor() as usize;
    let test = (n as f64 * f.test + 1e-9).floor() as usize;
    SplitCounts {
        train: n - val - test,
        val,
        test,
    }
}

/// Seeded partition of observations into training, validation and test sets.
/// Keys are sorted before shuffling so the result does not depend on input order.
pub fn split(observations: &[SiteObservation], config: &SplitConfig) -> Result<SplitAssignment> {
    config.fractions.validate()?;
    let mut keys: Vec<ObservationKey> = observations
        .iter()
        .map(|o| (o.sample.site_id.clone(), o.sample.date))
        .collect();
    keys.sort();
    if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!(
            "duplicate observation for site {} on {}",
            w[0].0, w[0].1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sizes = split_sizes(keys.len(), &config.fractions);
    let mut tags = BTreeMap::new();
    match config.mode {
        SplitMode::Random => {
            keys.shuffle(&mut rng);
            for (i, k) in keys.into_iter().enumerate() {
                let tag = if i < sizes.val {
                    SplitTag::Val
                } else if i < sizes.val + sizes.test {
                    SplitTag::Test
                } else {
                    SplitTag::Train
                };
                tags.insert(k, tag);
            }
        }
        SplitMode::SiteGrouped => {
            let mut by_site: BTreeMap<&str, Vec<&ObservationKey>> = BTreeMap::new();
            for k in &keys {
                by_site.entry(k.0.as_str()).or_default().push(k);
            }
            let mut sites: Vec<(&str, Vec<&ObservationKey>)> = by_site.into_iter().collect();
            sites.shuffle(&mut rng);
            let mut filled = SplitCounts::default();
            for (_, ks) in sites {
                let tag = if filled.val < sizes.val {
                    SplitTag::Val
                } else if filled.test < sizes.test {
                    SplitTag::Test
                } else {
                    SplitTag::Train
                };
                for k in ks {
                    filled.add(tag);
                    tags.insert(k.clone(), tag);
                }
            }
        }
    }
    Ok(SplitAssignment {
        config: *config,
        tags,
    })
}
