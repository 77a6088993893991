//! k-means decomposition of the input space and per-instance cluster
//! probability vectors.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::density::FilteredSamples;
use crate::error::{Error, Result};
use crate::seed;

pub const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    centroids: Vec<Vec<f64>>,
    seed: u64,
}

impl ClusterModel {
    /// Build a model from explicit centroids (all of one dimension).
    pub fn from_centroids(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = centroids.first() else {
            return Err(Error::Input("cluster model needs at least one centroid".into()));
        };
        let dim = first.len();
        if let Some(bad) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: bad.len() });
        }
        Ok(Self { centroids, seed: 0 })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Nearest centroid by Euclidean distance, ties to the lowest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(self.assign_unchecked(x))
    }

    pub(crate) fn assign_unchecked(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    /// One-hot encoding of `assign(x)`.
    pub fn one_hot(&self, x: &[f64]) -> Result<ClusterProbabilityVector> {
        let j = self.assign(x)?;
        let mut probs = vec![0.0; self.len()];
        probs[j] = 1.0;
        Ok(ClusterProbabilityVector { probs })
    }

    /// Relative frequencies of the filtered samples (each completed with
    /// `certain_values` into the clustering space) across the clusters.
    pub fn cluster_probabilities(
        &self,
        filtered: &FilteredSamples,
        complete: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<ClusterProbabilityVector> {
        if filtered.points.is_empty() {
            return Err(Error::Input("cluster probabilities need a nonempty sample set".into()));
        }
        let mut counts = vec![0usize; self.len()];
        for p in &filtered.points {
            counts[self.assign(&complete(p))?] += 1;
        }
        let total = filtered.points.len() as f64;
        Ok(ClusterProbabilityVector {
            probs: counts.iter().map(|&c| c as f64 / total).collect(),
        })
    }

    /// Within-cluster sum of squares of `rows` under nearest-centroid assignment.
    pub fn inertia(&self, rows: &[Vec<f64>]) -> f64 {
        rows.iter().map(|r| nearest(&self.centroids, r).1).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProbabilityVector {
    pub probs: Vec<f64>,
}

impl ClusterProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input("cluster probabilities must lie in [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("cluster probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Index of the largest entry (ties to lowest index) and that entry, the
    /// loss weight of the instance.
    pub fn dominant(&self) -> (usize, f64) {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        (best, self.probs[best])
    }
}

/// Per-iteration record of a k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansTrace {
    /// Within-cluster sum of squares after each Lloyd update.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_kmeans(rows: &[Vec<f64>], e_count: usize, seed: u64) -> Result<ClusterModel> {
    fit_kmeans_traced(rows, e_count, seed).map(|(m, _)| m)
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `MAX_LLOYD_ITERS` is reached. A cluster that loses all its
/// points is reseeded at the point farthest from its assigned centroid.
pub fn fit_kmeans_traced(rows: &[Vec<f64>], e_count: usize, seed: u64) -> Result<(ClusterModel, KMeansTrace)> {
    if e_count == 0 {
        return Err(Error::Input("number of clusters must be at least 1".into()));
    }
    let Some(first) = rows.first() else {
        return Err(Error::Fit("no rows to cluster".into()));
    };
    let dim = first.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: bad.len() });
    }
    let mut distinct = HashSet::new();
    for r in rows {
        distinct.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if distinct.len() >= e_count {
            break;
        }
    }
    if distinct.len() < e_count {
        return Err(Error::Fit(format!(
            "{} distinct rows cannot form {e_count} clusters",
            distinct.len()
        )));
    }

    let mut rng = seed::rng(seed::derive(seed, seed::tag::KMEANS, 0));
    let mut centroids = plus_plus_init(rows, e_count, &mut rng);
    let mut assignment: Vec<usize> = rows.iter().map(|r| nearest(&centroids, r).0).collect();
    let mut trace = KMeansTrace { inertia: Vec::new(), iterations: 0, converged: false };

    for iter in 0..MAX_LLOYD_ITERS {
        update_centroids(rows, &assignment, &mut centroids);
        repair_empty(rows, &mut assignment, &mut centroids);
        let next: Vec<usize> = rows.iter().map(|r| nearest(&centroids, r).0).collect();
        let inertia: f64 = rows.iter().zip(&next).map(|(r, &j)| sq_dist(r, &centroids[j])).sum();
        trace.inertia.push(inertia);
        trace.iterations = iter + 1;
        if next == assignment {
            trace.converged = true;
            break;
        }
        assignment = next;
    }
    Ok((ClusterModel { centroids, seed }, trace))
}

fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = rows.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // never pick a zero-distance duplicate through rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().position(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..rows.len())
        };
        centroids.push(rows[pick].clone());
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn update_centroids(rows: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (r, &j) in rows.iter().zip(assignment) {
        counts[j] += 1;
        for (s, v) in sums[j].iter_mut().zip(r) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

fn repair_empty(rows: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    loop {
        let mut counts = vec![0usize; centroids.len()];
        for &j in assignment.iter() {
            counts[j] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        // farthest point from its own centroid, among clusters that can spare one
        let far = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignment[*i]] > 1)
            .map(|(i, r)| (i, sq_dist(r, &centroids[assignment[i]])))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((i, _)) = far else {
            return;
        };
        centroids[empty] = rows[i].clone();
        assignment[i] = empty;
        update_centroids(rows, assignment, centroids);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}
