//! Lloyd's k-means with seeded k-means++ initialization.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Intensity,
    Color,
    Texture,
}

impl FeatureSpace {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSpace::Intensity => "intensity",
            FeatureSpace::Color => "color",
            FeatureSpace::Texture => "texture",
        }
    }
}

impl std::str::FromStr for FeatureSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "intensity" => Ok(FeatureSpace::Intensity),
            "color" => Ok(FeatureSpace::Color),
            "texture" => Ok(FeatureSpace::Texture),
            other => Err(format!("unknown feature space `{other}` (intensity|color|texture)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub feature_space: FeatureSpace,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            feature_space: FeatureSpace::Color,
            max_iters: 100,
            tol: 1e-4,
            seed: 42,
            restarts: 4,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return invalid("k must be at least 2");
        }
        if !(self.tol > 0.0) {
            return invalid("tol must be positive");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if self.restarts == 0 {
            return invalid("restarts must be at least 1");
        }
        Ok(())
    }
}

/// Outcome of [`kmeans`] on a flat point list.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index (0-based) per point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each centroid update.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn distinct_at_least(points: &[Vec<f64>], k: usize) -> bool {
    let mut seen = HashSet::new();
    for p in points {
        seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= k {
            return true;
        }
    }
    false
}

fn init_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let next = points[pick.expect("enough distinct points")].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Clusters `points` into `k` groups. Stops once no centroid moves by `tol`
/// or more, or after `max_iters` updates. Nearest-centroid ties go to the
/// lower index; a cluster that empties keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, tol: f64, seed: u64) -> Result<Clustering> {
    if points.is_empty() {
        return invalid("k-means needs at least one point");
    }
    if k == 0 {
        return invalid("k must be positive");
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return invalid("all points must share a dimension");
    }
    if !distinct_at_least(points, k) {
        return invalid(format!("k = {k} exceeds the number of distinct points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut inertia = 0.0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centroids[j]).sqrt());
            centroids[j] = updated;
        }
        inertia = assignments
            .iter()
            .zip(points)
            .map(|(&a, p)| sq_dist(p, &centroids[a]))
            .sum();
        history.push(inertia);
        if shift < tol {
            break;
        }
    }

    Ok(Clustering {
        assignments,
        centroids,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// Seed of restart `i`; restart 0 uses `seed` itself.
pub fn restart_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        return seed;
    }
    let mut z = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Best of `restarts` seeded runs of [`kmeans`] by final inertia; ties keep
/// the earlier run.
pub fn kmeans_best_of(points: &[Vec<f64>], k: usize, max_iters: usize, tol: f64, seed: u64, restarts: usize) -> Result<Clustering> {
    let mut best = kmeans(points, k, max_iters, tol, seed)?;
    for i in 1..restarts {
        let run = kmeans(points, k, max_iters, tol, restart_seed(seed, i))?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}
