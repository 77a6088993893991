//! Synthetic benchmark tables.
//!
//! Regression: features are driven by two shared latent factors (so missing
//! cells are partly predictable from observed ones) and
//! `y = sum_j sin(x_j) + 0.1 * x_1 * x_2 + N(0, noise^2)`.
//!
//! Classification: two interleaved half-moons in the first two features plus
//! `k - 2` standard normal noise features.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::seed;

/// Default label noise (regression) and point jitter (classification).
pub const SYNTH_NOISE: f64 = 0.05;
const MOON_JITTER: f64 = 0.1;

pub fn synthesize_dataset(task: Task, instances: usize, features: usize, seed: u64) -> Result<Dataset> {
    let noise = match task {
        Task::Regression => SYNTH_NOISE,
        Task::Classification => MOON_JITTER,
    };
    synthesize_dataset_with_noise(task, instances, features, noise, seed)
}

pub fn synthesize_dataset_with_noise(
    task: Task,
    instances: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if instances < 20 || features < 2 {
        return Err(Error::Input(format!(
            "synthetic data needs at least 20 instances and 2 features, got {instances} x {features}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Input("noise must be nonnegative".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::tag::SYNTH, 0));
    let names = (1..=features).map(|j| format!("x{j}")).collect();
    match task {
        Task::Regression => {
            let mut rows = Vec::with_capacity(instances);
            let mut labels = Vec::with_capacity(instances);
            for _ in 0..instances {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let x: Vec<f64> = (0..features)
                    .map(|j| {
                        let theta = j as f64 * PI / features as f64;
                        let e: f64 = StandardNormal.sample(&mut rng);
                        1.5 * (theta.cos() * z1 + theta.sin() * z2) + 0.3 * e
                    })
                    .collect();
                let e: f64 = StandardNormal.sample(&mut rng);
                labels.push(regression_target(&x) + noise * e);
                rows.push(x);
            }
            Dataset::new(rows, labels, names, Task::Regression, 0)
        }
        Task::Classification => {
            let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid normal");
            let mut rows = Vec::with_capacity(instances);
            let mut labels = Vec::with_capacity(instances);
            for i in 0..instances {
                let class = i % 2;
                let t = rng.random_range(0.0..PI);
                let (mut a, mut b) = if class == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                if noise > 0.0 {
                    a += jitter.sample(&mut rng);
                    b += jitter.sample(&mut rng);
                }
                let mut x = vec![a, b];
                x.extend((2..features).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                rows.push(x);
                labels.push(class as f64);
            }
            let mut ds = Dataset::new(rows, labels, names, Task::Classification, 2)?;
            ds.class_names = vec!["0".into(), "1".into()];
            Ok(ds)
        }
    }
}

/// Noise-free regression target.
pub(crate) fn regression_target(x: &[f64]) -> f64 {
    x.iter().map(|v| v.sin()).sum::<f64>() + 0.1 * x[0] * x[1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synthesize_dataset(Task::Regression, 50, 4, 3).unwrap();
        assert_eq!(a, synthesize_dataset(Task::Regression, 50, 4, 3).unwrap());
        assert_ne!(a, synthesize_dataset(Task::Regression, 50, 4, 4).unwrap());
        assert!(synthesize_dataset(Task::Regression, 10, 4, 3).is_err());
        assert!(synthesize_dataset(Task::Regression, 30, 1, 3).is_err());
    }

    #[test]
    fn noiseless_regression_follows_formula() {
        let ds = synthesize_dataset_with_noise(Task::Regression, 40, 3, 0.0, 1).unwrap();
        for (x, y) in ds.features.iter().zip(&ds.labels) {
            let expected = x[0].sin() + x[1].sin() + x[2].sin() + 0.1 * x[0] * x[1];
            assert_eq!(*y, expected);
        }
    }

    /// Leave-one-out 5-NN as an off-the-shelf separability reference.
    #[test]
    fn moons_are_separable() {
        let ds = synthesize_dataset(Task::Classification, 200, 2, 7).unwrap();
        let mut correct = 0;
        for i in 0..ds.len() {
            let mut d: Vec<(f64, f64)> = (0..ds.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let dist = (ds.features[i][0] - ds.features[j][0]).powi(2) + (ds.features[i][1] - ds.features[j][1]).powi(2);
                    (dist, ds.labels[j])
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let votes: f64 = d[..5].iter().map(|p| p.1).sum();
            let pred = if votes >= 3.0 { 1.0 } else { 0.0 };
            if pred == ds.labels[i] {
                correct += 1;
            }
        }
        assert!(correct as f64 / ds.len() as f64 > 0.9, "acc {}", correct as f64 / 200.0);
    }
}
