//! Space decomposition: per-instance sampling and filtering, k-means over the
//! pooled samples, cluster probability vectors, and global and local modes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::UMoEConfig;
use crate::data::UncertainDataset;
use crate::density::{FilteredSamples, ModePoint};
use crate::error::{Error, Result};
use crate::partition::{fit_kmeans, ClusterModel, ClusterProbabilityVector};
use crate::seed;

/// The part of a decomposition that does not depend on |E|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedInstance {
    /// Top-p samples; absent for fully certain instances.
    pub filtered: Option<FilteredSamples>,
    pub global_mode: Option<ModePoint>,
    /// Global mode completed with the certain values (full standardized vector).
    pub global_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub instances: Vec<PreparedInstance>,
    pub threshold: f64,
    pub samples_per_instance: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDecomposition {
    pub probs: ClusterProbabilityVector,
    pub dominant: usize,
    /// λ_i, the dominant probability.
    pub weight: f64,
    pub global_point: Vec<f64>,
    pub local_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub cluster_model: ClusterModel,
    pub instances: Vec<InstanceDecomposition>,
}

impl Decomposition {
    /// Instances per dominant cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_model.len()];
        for d in &self.instances {
            sizes[d.dominant] += 1;
        }
        sizes
    }
}

fn sample_seed(base: u64, id: usize) -> u64 {
    seed::derive(base, seed::tag::SAMPLE, id as u64)
}

/// Draw M samples per uncertain instance, keep the top p, and locate each
/// instance's global mode.
pub fn prepare(dataset: &UncertainDataset, cfg: &UMoEConfig) -> Result<Prepared> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("cannot decompose an empty dataset".into()));
    }
    let instances = dataset
        .instances
        .par_iter()
        .map(|inst| match &inst.density {
            None => Ok(PreparedInstance { filtered: None, global_mode: None, global_point: inst.certain_values.clone() }),
            Some(density) => {
                let samples = density.sample(cfg.samples_per_instance, sample_seed(cfg.seed, inst.id));
                let filtered = samples.filter_top_p(cfg.threshold)?;
                let mode = density.global_mode_with_samples(&cfg.mode_search, &samples);
                Ok(PreparedInstance {
                    global_point: inst.complete(&mode.location),
                    filtered: Some(filtered),
                    global_mode: Some(mode),
                })
            }
        })
        .collect::<Result<_>>()?;
    Ok(Prepared {
        instances,
        threshold: cfg.threshold,
        samples_per_instance: cfg.samples_per_instance,
        seed: cfg.seed,
    })
}

pub(crate) fn kmeans_seed(cfg: &UMoEConfig) -> u64 {
    seed::derive(cfg.seed, seed::tag::KMEANS, 0)
}

pub fn decompose(dataset: &UncertainDataset, cfg: &UMoEConfig) -> Result<Decomposition> {
    decompose_prepared(dataset, &prepare(dataset, cfg)?, cfg)
}

/// Cluster the pooled filtered samples (certain instances contribute their
/// own vector) into |E| groups and decompose every instance.
pub fn decompose_prepared(dataset: &UncertainDataset, prepared: &Prepared, cfg: &UMoEConfig) -> Result<Decomposition> {
    if prepared.instances.len() != dataset.len()
        || prepared.threshold != cfg.threshold
        || prepared.samples_per_instance != cfg.samples_per_instance
        || prepared.seed != cfg.seed
    {
        return Err(Error::Input("prepared samples do not match this dataset and configuration".into()));
    }
    let mut rows = Vec::new();
    for (inst, prep) in dataset.instances.iter().zip(&prepared.instances) {
        match &prep.filtered {
            None => rows.push(prep.global_point.clone()),
            Some(f) => rows.extend(f.points.iter().map(|p| inst.complete(p))),
        }
    }
    let cluster_model = fit_kmeans(&rows, cfg.e_count, kmeans_seed(cfg))?;
    drop(rows);
    let instances = dataset
        .instances
        .par_iter()
        .zip(&prepared.instances)
        .map(|(inst, prep)| {
            let (Some(density), Some(filtered), Some(mode)) = (&inst.density, &prep.filtered, &prep.global_mode) else {
                let probs = cluster_model.one_hot(&prep.global_point)?;
                let (dominant, weight) = probs.dominant();
                return Ok(InstanceDecomposition {
                    probs,
                    dominant,
                    weight,
                    global_point: prep.global_point.clone(),
                    local_point: prep.global_point.clone(),
                });
            };
            let probs = cluster_model.cluster_probabilities(filtered, |p| inst.complete(p))?;
            let (dominant, weight) = probs.dominant();
            let local = density.local_mode(
                &cluster_model,
                dominant,
                filtered,
                &inst.certain_values,
                &cfg.mode_search,
                Some(mode),
            )?;
            let local_point = inst.complete(&local.location);
            // the restricted search can beat an unconverged global search
            let global_point = if local.density_value > mode.density_value {
                local_point.clone()
            } else {
                prep.global_point.clone()
            };
            Ok(InstanceDecomposition { probs, dominant, weight, global_point, local_point })
        })
        .collect::<Result<_>>()?;
    Ok(Decomposition { cluster_model, instances })
}

/// Decomposition of instances already collapsed to single points: k-means on
/// the points, one-hot cluster vectors, unit weights, and both modes at the
/// point itself.
pub fn decompose_hard(points: &[Vec<f64>], cfg: &UMoEConfig) -> Result<Decomposition> {
    let cluster_model = fit_kmeans(points, cfg.e_count, kmeans_seed(cfg))?;
    let instances = points
        .iter()
        .map(|p| {
            let probs = cluster_model.one_hot(p)?;
            let (dominant, weight) = probs.dominant();
            Ok(InstanceDecomposition { probs, dominant, weight, global_point: p.clone(), local_point: p.clone() })
        })
        .collect::<Result<_>>()?;
    Ok(Decomposition { cluster_model, instances })
}
