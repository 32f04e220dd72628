use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiling::TileId;

use super::autoencoder::LatentCode;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-4;

/// Result of clustering raw vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Objective after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Clustering of tile codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f32>>,
    /// Serialized as a map keyed by tile name.
    #[serde(with = "tile_keys")]
    pub assignments: BTreeMap<TileId, usize>,
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn populations(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &c in self.assignments.values() {
            counts[c] += 1;
        }
        counts
    }

    pub fn members(&self, cluster: usize) -> Vec<TileId> {
        self.assignments
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(id, _)| *id)
            .collect()
    }
}

mod tile_keys {
    use std::collections::BTreeMap;

    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::tiling::{parse_tile_name, tile_name, TileId};

    pub fn serialize<S: Serializer>(map: &BTreeMap<TileId, usize>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(id, c)| (tile_name(*id), c)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<TileId, usize>, D::Error> {
        BTreeMap::<String, usize>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| Ok((parse_tile_name(&k).map_err(D::Error::custom)?, v)))
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points have differing lengths".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kmeans input"));
    }
    Ok(dim)
}

/// k-means++ seeding.
pub fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point coincides with a centroid already.
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from k-means++ seeding.
pub fn kmeans_vectors(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(points, k, &mut rng);
    kmeans_from(points, init)
}

/// Lloyd iterations from the given initial centroids.
pub fn kmeans_from(points: &[Vec<f64>], init: Vec<Vec<f64>>) -> Result<KMeansFit> {
    let k = init.len();
    let dim = check_points(points, k)?;
    if init.iter().any(|c| c.len() != dim) {
        return Err(Error::Dimension("centroid length differs from points".into()));
    }
    let mut centroids = init;
    let mut trace = Vec::new();
    let mut labels = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let assigned: Vec<(usize, f64)> =
            points.par_iter().map(|p| nearest(p, &centroids)).collect();
        labels = assigned.iter().map(|a| a.0).collect();
        trace.push(assigned.iter().map(|a| a.1).sum());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            if counts[j] == 0 {
                // Refill with the point farthest from its centroid.
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .fold((0, -1.0), |best, (i, a)| if a.1 > best.1 { (i, a.1) } else { best })
                    .0;
                taken.push(far);
                next.push(points[far].clone());
            } else {
                let n = counts[j] as f64;
                next.push(sums[j].iter().map(|s| s / n).collect::<Vec<f64>>());
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    let final_labels: Vec<usize> = points.par_iter().map(|p| nearest(p, &centroids).0).collect();
    if final_labels != labels {
        let obj = points
            .iter()
            .zip(&final_labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum();
        trace.push(obj);
    }
    Ok(KMeansFit {
        centroids,
        labels: final_labels,
        objective_trace: trace,
        iterations,
    })
}

/// Clusters tile codes into `k` groups.
pub fn kmeans(codes: &[LatentCode], k: usize, seed: u64) -> Result<ClusterModel> {
    let points: Vec<Vec<f64>> = codes
        .iter()
        .map(|c| c.code.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let fit = kmeans_vectors(&points, k, seed)?;
    Ok(ClusterModel {
        k,
        seed,
        centroids: fit
            .centroids
            .iter()
            .map(|c| c.iter().map(|&v| v as f32).collect())
            .collect(),
        assignments: codes.iter().map(|c| c.tile_id).zip(fit.labels).collect(),
        objective_trace: fit.objective_trace,
    })
}

/// Fraction of points whose cluster's majority generating label matches their own.
pub fn purity(labels: &[usize], truth: &[usize]) -> f64 {
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *table.entry((l, t)).or_default() += 1;
    }
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(l, _), &n) in &table {
        let e = best.entry(l).or_default();
        *e = (*e).max(n);
    }
    best.values().sum::<usize>() as f64 / labels.len().max(1) as f64
}
