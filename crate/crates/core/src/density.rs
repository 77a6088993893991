//! Gaussian kernel mixture densities over an instance's uncertain attributes.
//!
//! A [`DensityModel`] is an equal-weight mixture of isotropic Gaussian kernels
//! with one shared bandwidth. All coordinates are in standardized units.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::ClusterModel;
use crate::seed;

/// Densities within this relative distance are treated as tied.
const TIE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    centers: Vec<Vec<f64>>,
    bandwidth: f64,
    uncertain_dims: Vec<usize>,
}

impl DensityModel {
    /// `uncertain_dims` must be strictly increasing attribute indices, one per
    /// coordinate of every center.
    pub fn new(centers: Vec<Vec<f64>>, bandwidth: f64, uncertain_dims: Vec<usize>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Input("density model needs at least one center".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Input(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if uncertain_dims.is_empty() {
            return Err(Error::Input("density model needs at least one uncertain dimension".into()));
        }
        if uncertain_dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("uncertain_dims must be strictly increasing".into()));
        }
        let dim = uncertain_dims.len();
        for c in &centers {
            if c.len() != dim {
                return Err(Error::Dimension { expected: dim, got: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("density center has a non-finite coordinate".into()));
            }
        }
        Ok(Self { centers, bandwidth, uncertain_dims })
    }

    /// Convenience constructor for a model whose uncertain dims are `0..dim`.
    pub fn with_centers(centers: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        let dim = centers.first().map_or(0, Vec::len);
        Self::new(centers, bandwidth, (0..dim).collect())
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn uncertain_dims(&self) -> &[usize] {
        &self.uncertain_dims
    }

    pub fn dim(&self) -> usize {
        self.uncertain_dims.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    fn norm_const(&self) -> f64 {
        let h = self.bandwidth;
        (2.0 * std::f64::consts::PI * h * h).powf(-(self.dim() as f64) / 2.0)
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.density_unchecked(x))
    }

    pub(crate) fn density_unchecked(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let sum: f64 = self
            .centers
            .iter()
            .map(|c| (-sq_dist(x, c) * inv).exp())
            .sum();
        sum * self.norm_const() / self.centers.len() as f64
    }

    /// Draw `m` points: pick a center uniformly, add N(0, h^2) per coordinate.
    pub fn sample(&self, m: usize, seed: u64) -> SampleSet {
        let mut rng = seed::rng(seed);
        let mut points = Vec::with_capacity(m);
        for _ in 0..m {
            let c = &self.centers[rng.random_range(0..self.centers.len())];
            let p: Vec<f64> = c
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + self.bandwidth * z
                })
                .collect();
            points.push(p);
        }
        let densities = points.iter().map(|p| self.density_unchecked(p)).collect();
        SampleSet { points, densities, seed }
    }

    /// Analytic mixture mean (the mean of the kernel centers).
    pub fn mean(&self) -> Vec<f64> {
        let n = self.centers.len() as f64;
        let mut acc = vec![0.0; self.dim()];
        for c in &self.centers {
            for (a, v) in acc.iter_mut().zip(c) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Merge an uncertain-space point with the instance's certain values into a
    /// full attribute vector. `certain_values` are ordered by attribute index.
    pub fn complete(&self, point: &[f64], certain_values: &[f64]) -> Vec<f64> {
        let k = point.len() + certain_values.len();
        let mut out = Vec::with_capacity(k);
        let (mut u, mut c) = (0, 0);
        for d in 0..k {
            if u < self.uncertain_dims.len() && self.uncertain_dims[u] == d {
                out.push(point[u]);
                u += 1;
            } else {
                out.push(certain_values[c]);
                c += 1;
            }
        }
        out
    }

    fn is_degenerate(&self) -> bool {
        let first = &self.centers[0];
        self.centers.iter().all(|c| c == first)
    }

    /// One mean-shift update from `x`, with kernel weights taken in log space
    /// so points far from every center still move toward the nearest one.
    fn mean_shift(&self, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let logs: Vec<f64> = self.centers.iter().map(|c| -sq_dist(x, c) * inv).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; x.len()];
        let mut total = 0.0;
        for (c, l) in self.centers.iter().zip(&logs) {
            let w = (l - max).exp();
            total += w;
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        out
    }

    /// Unconstrained gradient ascent (mean-shift steps) from `start`.
    fn ascend(&self, start: &[f64], search: &ModeSearchConfig) -> (Vec<f64>, f64) {
        let mut x = start.to_vec();
        let mut fx = self.density_unchecked(&x);
        for _ in 0..search.max_iter {
            let next = self.mean_shift(&x);
            let step = sq_dist(&next, &x).sqrt();
            let fnext = self.density_unchecked(&next);
            if fnext >= fx {
                x = next;
                fx = fnext;
            } else {
                break;
            }
            if step < search.step_tol {
                break;
            }
        }
        (x, fx)
    }

    /// Ascent that rejects iterates outside the set accepted by `inside`. A
    /// rejected step is halved until it lands inside with no loss of density,
    /// otherwise the ascent stops at the last accepted point.
    fn ascend_within(
        &self,
        start: &[f64],
        search: &ModeSearchConfig,
        inside: &dyn Fn(&[f64]) -> bool,
    ) -> (Vec<f64>, f64) {
        let mut x = start.to_vec();
        let mut fx = self.density_unchecked(&x);
        'outer: for _ in 0..search.max_iter {
            let full = self.mean_shift(&x);
            let mut dir: Vec<f64> = full.iter().zip(&x).map(|(a, b)| a - b).collect();
            for _ in 0..40 {
                let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + d).collect();
                let step = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
                if step < search.step_tol {
                    break 'outer;
                }
                if inside(&cand) {
                    let fc = self.density_unchecked(&cand);
                    if fc >= fx {
                        x = cand;
                        fx = fc;
                        continue 'outer;
                    }
                }
                dir.iter_mut().for_each(|d| *d *= 0.5);
            }
            break;
        }
        (x, fx)
    }

    /// Global mode. Ascents start from the highest-density kernel centers and
    /// from the highest-density points of an internally drawn sample.
    pub fn global_mode(&self, search: &ModeSearchConfig) -> ModePoint {
        let pool = self.sample(10 * search.n_starts.max(1), seed::derive(search.seed, seed::tag::MODE, 0));
        self.global_mode_with_samples(search, &pool)
    }

    /// Global mode with ascents seeded from the top centers and the top points
    /// of `samples`.
    pub fn global_mode_with_samples(&self, search: &ModeSearchConfig, samples: &SampleSet) -> ModePoint {
        if self.is_degenerate() {
            let location = self.centers[0].clone();
            let density_value = self.density_unchecked(&location);
            return ModePoint { location, density_value, scope: ModeScope::Global };
        }
        let n = search.n_starts.max(1);
        let center_dens: Vec<f64> = self.centers.iter().map(|c| self.density_unchecked(c)).collect();
        let mut starts: Vec<&[f64]> = top_indices(&center_dens, n)
            .into_iter()
            .map(|i| self.centers[i].as_slice())
            .collect();
        if samples.points.len() == samples.densities.len() {
            starts.extend(
                top_indices(&samples.densities, n)
                    .into_iter()
                    .map(|i| samples.points[i].as_slice()),
            );
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in dedup(starts) {
            let cand = self.ascend(s, search);
            best = Some(match best {
                None => cand,
                Some(b) => pick_better(b, cand),
            });
        }
        let (location, density_value) = best.expect("at least one start");
        ModePoint { location, density_value, scope: ModeScope::Global }
    }

    /// Mode restricted to the Voronoi cell of cluster `target`. Membership is
    /// tested in the clustering space: the point completed with
    /// `certain_values`. When `global` lies in the cell it is the restricted
    /// maximum and is returned directly.
    pub fn local_mode(
        &self,
        partition: &ClusterModel,
        target: usize,
        filtered: &FilteredSamples,
        certain_values: &[f64],
        search: &ModeSearchConfig,
        global: Option<&ModePoint>,
    ) -> Result<ModePoint> {
        if target >= partition.len() {
            return Err(Error::Input(format!("target cluster {target} out of range")));
        }
        let full_dim = self.dim() + certain_values.len();
        if partition.dim() != full_dim {
            return Err(Error::Dimension { expected: partition.dim(), got: full_dim });
        }
        let inside = |p: &[f64]| partition.assign_unchecked(&self.complete(p, certain_values)) == target;
        if let Some(g) = global {
            if inside(&g.location) {
                return Ok(ModePoint {
                    location: g.location.clone(),
                    density_value: g.density_value,
                    scope: ModeScope::Local(target),
                });
            }
        }
        let n = search.n_starts.max(1);
        let seeds: Vec<&[f64]> = filtered
            .points
            .iter()
            .filter(|p| inside(p))
            .take(n)
            .map(Vec::as_slice)
            .collect();
        if seeds.is_empty() {
            return Err(Error::Precondition(format!(
                "no filtered sample lies in cluster {target}"
            )));
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in dedup(seeds) {
            let cand = self.ascend_within(s, search, &inside);
            best = Some(match best {
                None => cand,
                Some(b) => pick_better(b, cand),
            });
        }
        let (location, density_value) = best.expect("at least one seed");
        Ok(ModePoint { location, density_value, scope: ModeScope::Local(target) })
    }
}

/// Settings for multi-start mode ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSearchConfig {
    pub n_starts: usize,
    pub step_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ModeSearchConfig {
    fn default() -> Self {
        Self { n_starts: 10, step_tol: 1e-8, max_iter: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub densities: Vec<f64>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep the `ceil(p * M)` highest-density samples. Equal densities keep
    /// the earlier-drawn sample first. Kept points are ordered by density,
    /// highest first.
    pub fn filter_top_p(&self, p: f64) -> Result<FilteredSamples> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Input(format!("threshold p must be in (0, 1], got {p}")));
        }
        if self.is_empty() {
            return Err(Error::Input("cannot filter an empty sample set".into()));
        }
        let kept_count = kept_count(p, self.len());
        let order = top_indices(&self.densities, kept_count);
        Ok(FilteredSamples {
            points: order.iter().map(|&i| self.points[i].clone()).collect(),
            densities: order.iter().map(|&i| self.densities[i]).collect(),
            p,
            kept_count,
        })
    }
}

/// `ceil(p * m)`, robust to the representation error of decimal `p`.
pub fn kept_count(p: f64, m: usize) -> usize {
    let raw = p * m as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredSamples {
    pub points: Vec<Vec<f64>>,
    pub densities: Vec<f64>,
    pub p: f64,
    pub kept_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeScope {
    Global,
    Local(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePoint {
    pub location: Vec<f64>,
    pub density_value: f64,
    pub scope: ModeScope,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `n` largest values, descending; ties by index ascending.
fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

fn dedup(starts: Vec<&[f64]>) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::with_capacity(starts.len());
    for s in starts {
        if !out.iter().any(|o| *o == s) {
            out.push(s);
        }
    }
    out
}

/// Higher density wins; near-ties go to the lexicographically smaller point.
fn pick_better(a: (Vec<f64>, f64), b: (Vec<f64>, f64)) -> (Vec<f64>, f64) {
    let scale = a.1.abs().max(b.1.abs());
    if (a.1 - b.1).abs() <= TIE_REL_TOL * scale {
        if lex_cmp(&b.0, &a.0).is_lt() {
            b
        } else {
            a
        }
    } else if b.1 > a.1 {
        b
    } else {
        a
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}
