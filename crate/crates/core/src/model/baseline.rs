//! Baselines that collapse each density to one point before training: a
//! single network, and a mixture of experts routed by hard cluster membership.

use serde::{Deserialize, Serialize};

use super::decompose::{decompose_hard, Prepared};
use super::{assemble, layer_sizes, network_seeds, output_kind, ModelKind, Predictor, UMoEConfig, UMoEModel};
use crate::data::{Scaler, Task, UncertainDataset, UncertainInstance};
use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::nn::{self, Mlp, WeightedRow};
use crate::seed;

/// How a density is collapsed to a single point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Mode,
    Mean,
}

impl Reducer {
    pub fn name(self) -> &'static str {
        match self {
            Reducer::Mode => "mode",
            Reducer::Mean => "mean",
        }
    }

    /// Point in the density's own coordinates. The mode search draws the same
    /// sample stream uMoE uses for instance `id` under `seed`.
    pub fn reduce(self, density: &DensityModel, cfg: &UMoEConfig, seed: u64, id: usize) -> Vec<f64> {
        match self {
            Reducer::Mean => density.mean(),
            Reducer::Mode => {
                let samples = density.sample(cfg.samples_per_instance, seed::derive(seed, seed::tag::SAMPLE, id as u64));
                density.global_mode_with_samples(&cfg.mode_search, &samples).location
            }
        }
    }
}

/// Full standardized points for every instance.
pub fn reduce_dataset(
    dataset: &UncertainDataset,
    reducer: Reducer,
    cfg: &UMoEConfig,
    prepared: Option<&Prepared>,
) -> Result<Vec<Vec<f64>>> {
    if let (Reducer::Mode, Some(p)) = (reducer, prepared) {
        if p.instances.len() != dataset.len() || p.seed != cfg.seed || p.samples_per_instance != cfg.samples_per_instance {
            return Err(Error::Input("prepared samples do not match this dataset and configuration".into()));
        }
        return Ok(p.instances.iter().map(|i| i.global_point.clone()).collect());
    }
    Ok(dataset.instances.iter().map(|inst| reduce_instance(inst, reducer, cfg, cfg.seed)).collect())
}

fn reduce_instance(inst: &UncertainInstance, reducer: Reducer, cfg: &UMoEConfig, seed: u64) -> Vec<f64> {
    match &inst.density {
        None => inst.certain_values.clone(),
        Some(d) => inst.complete(&reducer.reduce(d, cfg, seed, inst.id)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineNn {
    pub reducer: Reducer,
    pub task: Task,
    pub class_count: usize,
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    pub mlp: Mlp,
    pub config: UMoEConfig,
}

/// One network with the expert architecture and the first expert's seeds,
/// trained with unit weights on the reduced points.
pub fn fit_baseline_nn(dataset: &UncertainDataset, reducer: Reducer, cfg: &UMoEConfig) -> Result<BaselineNn> {
    fit_baseline_nn_prepared(dataset, None, reducer, cfg)
}

pub fn fit_baseline_nn_prepared(
    dataset: &UncertainDataset,
    prepared: Option<&Prepared>,
    reducer: Reducer,
    cfg: &UMoEConfig,
) -> Result<BaselineNn> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("cannot fit on an empty dataset".into()));
    }
    let points = reduce_dataset(dataset, reducer, cfg, prepared)?;
    let rows: Vec<WeightedRow> = points
        .into_iter()
        .zip(&dataset.instances)
        .map(|(features, inst)| WeightedRow { features, target: inst.label, weight: 1.0 })
        .collect();
    let sizes = layer_sizes(dataset.n_features(), &cfg.expert_hidden, dataset.output_width());
    let (init, train) = network_seeds(&cfg.expert_train, seed::tag::EXPERT, 0);
    let mut mlp = Mlp::new(&sizes, output_kind(dataset.task), init)?;
    nn::train_weighted(&mut mlp, &rows, dataset.task, &train)?;
    Ok(BaselineNn {
        reducer,
        task: dataset.task,
        class_count: dataset.class_count,
        feature_names: dataset.feature_names.clone(),
        scaler: dataset.scaler.clone(),
        mlp,
        config: cfg.clone(),
    })
}

impl Predictor for BaselineNn {
    fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward(&self.scaler.transform(x)?)
    }

    fn predict_instance(&self, inst: &UncertainInstance, seed: u64) -> Result<Vec<f64>> {
        if inst.n_features() != self.feature_names.len() {
            return Err(Error::Dimension { expected: self.feature_names.len(), got: inst.n_features() });
        }
        self.mlp.forward(&reduce_instance(inst, self.reducer, &self.config, seed))
    }
}

/// Mixture of experts on reduced points: the same experts and gate as uMoE,
/// with one-hot cluster vectors and unit weights.
pub fn fit_baseline_moe(dataset: &UncertainDataset, reducer: Reducer, cfg: &UMoEConfig) -> Result<UMoEModel> {
    fit_baseline_moe_prepared(dataset, None, reducer, cfg)
}

pub fn fit_baseline_moe_prepared(
    dataset: &UncertainDataset,
    prepared: Option<&Prepared>,
    reducer: Reducer,
    cfg: &UMoEConfig,
) -> Result<UMoEModel> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("cannot fit on an empty dataset".into()));
    }
    let points = reduce_dataset(dataset, reducer, cfg, prepared)?;
    assemble(dataset, decompose_hard(&points, cfg)?, cfg, ModelKind::BaselineMoE(reducer))
}
