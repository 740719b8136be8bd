//! Station clustering for semi-local EMOS: 24-dimensional climatology +
//! forecast-error feature vectors, coordinate-wise standardization, and
//! k-means (k-means++ seeding, Lloyd iterations) with a minimum-cluster-size
//! reduction rule.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::PairedCase;
use crate::error::{Error, Result};

/// Number of quantile levels per half (observation climatology and
/// ensemble-mean error), i/(QUANTILES_PER_HALF+1) for i = 1..=12.
pub const QUANTILES_PER_HALF: usize = 12;

/// Feature dimension: observation quantiles + error quantiles.
pub const FEATURE_DIM: usize = 2 * QUANTILES_PER_HALF;

/// One station's clustering features over a training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFeature {
    pub station_id: u32,
    /// 12 quantiles of observed irradiance followed by 12 quantiles of
    /// (ensemble mean − observation).
    pub values: Vec<f64>,
}

/// Cluster labels per station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignment: BTreeMap<u32, usize>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Station ids in each cluster, in id order.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.k];
        for (&st, &c) in &self.assignment {
            out[c].push(st);
        }
        out
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (position q·(n−1), the convention of most statistical software).
fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Builds one station's 24-dimensional feature vector from its cases in the
/// training window: equidistant quantiles (levels i/13, i = 1..12) of the
/// observations and of the ensemble-mean forecast error.
pub fn feature_vector(station_id: u32, cases: &[PairedCase]) -> Result<ClusterFeature> {
    if cases.len() < QUANTILES_PER_HALF {
        return Err(Error::Data(format!(
            "station {station_id}: {} cases in window, need at least {QUANTILES_PER_HALF} for clustering features",
            cases.len()
        )));
    }
    let mut obs: Vec<f64> = cases.iter().map(|c| c.obs).collect();
    let mut err: Vec<f64> = cases.iter().map(|c| c.stats.mean - c.obs).collect();
    obs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite observation"));
    err.sort_by(|a, b| a.partial_cmp(b).expect("non-finite forecast error"));
    let mut values = Vec::with_capacity(FEATURE_DIM);
    for i in 1..=QUANTILES_PER_HALF {
        values.push(sample_quantile(&obs, i as f64 / (QUANTILES_PER_HALF + 1) as f64));
    }
    for i in 1..=QUANTILES_PER_HALF {
        values.push(sample_quantile(&err, i as f64 / (QUANTILES_PER_HALF + 1) as f64));
    }
    Ok(ClusterFeature { station_id, values })
}

/// Standardizes each coordinate across stations to mean 0 and unit sample
/// variance (divisor n−1); coordinates that are constant across stations
/// are set to 0 everywhere.
pub fn standardize_features(features: &mut [ClusterFeature]) {
    let n = features.len();
    if n < 2 {
        for f in features.iter_mut() {
            f.values.fill(0.0);
        }
        return;
    }
    for d in 0..FEATURE_DIM {
        let mean = features.iter().map(|f| f.values[d]).sum::<f64>() / n as f64;
        let var = features
            .iter()
            .map(|f| (f.values[d] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let sd = var.sqrt();
        for f in features.iter_mut() {
            f.values[d] = if sd > 1e-12 { (f.values[d] - mean) / sd } else { 0.0 };
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centroid uniform, later ones with probability
/// proportional to squared distance from the nearest chosen centroid.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n) // all points coincide with a centroid
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centroids.last().unwrap()));
        }
    }
    centroids
}

const LLOYD_MAX_ITER: usize = 100;
const LLOYD_TOL: f64 = 1e-8;

/// Lloyd iterations from k-means++ seeds; ties in assignment go to the
/// lowest cluster index, empty clusters keep their previous centroid.
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = vec![0usize; n];
    for _ in 0..LLOYD_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist2(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut new_centroid = vec![0.0; dim];
            for m in &members {
                for (acc, v) in new_centroid.iter_mut().zip(m.iter()) {
                    *acc += v;
                }
            }
            for v in &mut new_centroid {
                *v /= members.len() as f64;
            }
            movement = movement.max(dist2(&new_centroid, &centroids[c]).sqrt());
            centroids[c] = new_centroid;
        }
        if movement < LLOYD_TOL {
            break;
        }
    }
    labels
}

/// Clusters stations on standardized features. Requests `k` clusters; if
/// any cluster ends up with fewer than `min_per_cluster` stations, k is
/// decremented and the clustering re-run, down to k = 1 (a single regional
/// cluster, which always succeeds). Stations are processed in id order, so
/// the result is independent of input ordering given the same seed.
pub fn cluster_stations(
    features: &[ClusterFeature],
    k: usize,
    min_per_cluster: usize,
    rng: &mut impl Rng,
) -> Result<ClusterAssignment> {
    if features.is_empty() {
        return Err(Error::Data("clustering needs at least one station".into()));
    }
    let mut sorted = features.to_vec();
    sorted.sort_by_key(|f| f.station_id);
    for f in &sorted {
        if f.values.len() != FEATURE_DIM {
            return Err(Error::Data(format!(
                "station {}: feature vector has {} entries, expected {FEATURE_DIM}",
                f.station_id,
                f.values.len()
            )));
        }
    }
    standardize_features(&mut sorted);
    let points: Vec<Vec<f64>> = sorted.iter().map(|f| f.values.clone()).collect();
    let n = points.len();

    let mut k_try = k.clamp(1, n);
    loop {
        let labels = kmeans_once(&points, k_try, rng);
        let mut sizes = vec![0usize; k_try];
        for &l in &labels {
            sizes[l] += 1;
        }
        let acceptable = k_try == 1 || sizes.iter().all(|&s| s >= min_per_cluster);
        if acceptable {
            // relabel clusters by their smallest station id so labels are
            // canonical regardless of seeding order
            let mut first_station = vec![u32::MAX; k_try];
            for (f, &l) in sorted.iter().zip(&labels) {
                first_station[l] = first_station[l].min(f.station_id);
            }
            let mut order: Vec<usize> = (0..k_try).collect();
            order.sort_by_key(|&c| first_station[c]);
            let mut relabel = vec![0usize; k_try];
            for (new, &old) in order.iter().enumerate() {
                relabel[old] = new;
            }
            let nonempty = sizes.iter().filter(|&&s| s > 0).count();
            let mut assignment = BTreeMap::new();
            for (f, &l) in sorted.iter().zip(&labels) {
                assignment.insert(f.station_id, relabel[l]);
            }
            // drop labels of empty clusters (possible only at k_try == 1
            // boundary or degenerate geometry): compact to 0..nonempty
            if nonempty < k_try {
                let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
                for l in assignment.values_mut() {
                    let next = seen.len();
                    let compact = *seen.entry(*l).or_insert(next);
                    *l = compact;
                }
                return Ok(ClusterAssignment {
                    assignment,
                    k: nonempty,
                });
            }
            return Ok(ClusterAssignment {
                assignment,
                k: k_try,
            });
        }
        k_try -= 1;
    }
}
