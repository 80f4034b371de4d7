use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_m;

/// Row-standardized k-nearest-neighbor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    pub k: usize,
    /// Neighbor indices of each point, nearest first.
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl SpatialWeights {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }
}

/// The `k` nearest other points of each (lat, lon) point by great-circle
/// distance, ties broken by lower index, each with weight 1/k.
pub fn knn_weights(points: &[(f64, f64)], k: usize) -> Result<SpatialWeights> {
    let n = points.len();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::Data(format!(
            "{n} points cannot each have {k} neighbors"
        )));
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (lat, lon) = points[i];
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (haversine_m(lat, lon, points[j].0, points[j].1), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    let w = 1.0 / k as f64;
    Ok(SpatialWeights {
        k,
        weights: vec![vec![w; k]; n],
        neighbors,
    })
}

fn deviations(values: &[f64], weights: &SpatialWeights) -> Result<(Vec<f64>, f64)> {
    if values.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            dimension: "values",
            expected: weights.len(),
            found: values.len(),
        });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = z.iter().map(|v| v * v).sum();
    if ss == 0.0 || !ss.is_finite() {
        return Err(Error::Data(
            "Moran's I is undefined for values with zero variance".into(),
        ));
    }
    Ok((z, ss))
}

fn statistic(z: &[f64], ss: f64, weights: &SpatialWeights, scale: f64) -> f64 {
    let cross: f64 = weights
        .neighbors
        .iter()
        .zip(&weights.weights)
        .zip(z)
        .map(|((nb, w), zi)| zi * nb.iter().zip(w).map(|(&j, wj)| wj * z[j]).sum::<f64>())
        .sum();
    scale * cross / ss
}

/// Moran's I: (n / S0) * Σᵢⱼ wᵢⱼ zᵢ zⱼ / Σᵢ zᵢ² with z the deviations from the mean.
pub fn morans_i(values: &[f64], weights: &SpatialWeights) -> Result<f64> {
    let (z, ss) = deviations(values, weights)?;
    Ok(statistic(
        &z,
        ss,
        weights,
        values.len() as f64 / weights.s0(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Positive autocorrelation: counts permutations with I ≥ observed.
    #[default]
    Greater,
    /// Counts permutations at least as far from E[I] = −1/(n−1).
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i_value: f64,
    pub expected: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub k: usize,
    pub alternative: Alternative,
}

pub const MIN_PERMUTATIONS: usize = 99;

/// Permutation inference for Moran's I. Permutation `j` shuffles the values
/// with its own stream of the seeded generator, so the result does not
/// depend on the number of worker threads.
pub fn morans_i_pvalue(
    values: &[f64],
    weights: &SpatialWeights,
    n_permutations: usize,
    seed: u64,
    alternative: Alternative,
) -> Result<MoranResult> {
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "{n_permutations} permutations requested; at least {MIN_PERMUTATIONS} are required"
        )));
    }
    let (z, ss) = deviations(values, weights)?;
    let n = values.len();
    let scale = n as f64 / weights.s0();
    let observed = statistic(&z, ss, weights, scale);
    let expected = -1.0 / (n as f64 - 1.0);
    let extreme = |v: f64| match alternative {
        Alternative::Greater => v >= observed,
        Alternative::TwoSided => (v - expected).abs() >= (observed - expected).abs(),
    };
    let count = (0..n_permutations)
        .into_par_iter()
        .filter(|&j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64 + 1);
            let mut zp = z.clone();
            zp.shuffle(&mut rng);
            extreme(statistic(&zp, ss, weights, scale))
        })
        .count();
    Ok(MoranResult {
        i_value: observed,
        expected,
        p_value: (1 + count) as f64 / (1 + n_permutations) as f64,
        n_permutations,
        seed,
        k: weights.k,
        alternative,
    })
}
