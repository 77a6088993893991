//! The uMoE ensemble: space decomposition, λ-weighted experts trained on
//! local modes, and a softmax gating unit that also sees each instance's
//! cluster probability vector. Baselines live in [`baseline`].

pub mod baseline;
mod decompose;

pub use baseline::{
    fit_baseline_moe, fit_baseline_moe_prepared, fit_baseline_nn, fit_baseline_nn_prepared, reduce_dataset, BaselineNn,
    Reducer,
};
pub use decompose::{
    decompose, decompose_hard, decompose_prepared, prepare, Decomposition, InstanceDecomposition, Prepared,
    PreparedInstance,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Scaler, Task, UncertainDataset, UncertainInstance};
use crate::density::ModeSearchConfig;
use crate::error::{Error, Result};
use crate::nn::{self, Mlp, Objective, OutputKind, TrainConfig, WeightedRow, PROB_FLOOR};
use crate::partition::ClusterModel;
use crate::seed;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UMoEConfig {
    /// Number of experts |E|.
    pub e_count: usize,
    /// Threshold p: fraction of highest-density samples kept.
    pub threshold: f64,
    /// Samples M drawn per uncertain instance.
    pub samples_per_instance: usize,
    pub expert_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub expert_train: TrainConfig,
    pub gate_train: TrainConfig,
    pub mode_search: ModeSearchConfig,
    pub include_expert_preds_in_gate_input: bool,
    pub seed: u64,
}

impl Default for UMoEConfig {
    fn default() -> Self {
        Self {
            e_count: 2,
            threshold: 0.8,
            samples_per_instance: 100,
            expert_hidden: vec![16, 16],
            gate_hidden: vec![16, 16],
            expert_train: TrainConfig::default(),
            gate_train: TrainConfig { batch_size: 24, ..TrainConfig::default() },
            mode_search: ModeSearchConfig::default(),
            include_expert_preds_in_gate_input: false,
            seed: 0,
        }
    }
}

impl UMoEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_count == 0 {
            return Err(Error::Input("e_count must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Input(format!("threshold p must be in (0, 1], got {}", self.threshold)));
        }
        if self.samples_per_instance == 0 {
            return Err(Error::Input("samples_per_instance must be at least 1".into()));
        }
        if self.expert_hidden.contains(&0) || self.gate_hidden.contains(&0) {
            return Err(Error::Input("hidden layer sizes must be positive".into()));
        }
        self.expert_train.validate()?;
        self.gate_train.validate()
    }

    pub fn with_e_count(&self, e_count: usize) -> Self {
        Self { e_count, ..self.clone() }
    }
}

/// Init and shuffle seeds of network `slot` trained under `train.seed`.
pub fn network_seeds(train: &TrainConfig, tag: u64, slot: usize) -> (u64, TrainConfig) {
    let init = seed::derive(train.seed, tag, 2 * slot as u64);
    let shuffle = seed::derive(train.seed, tag, 2 * slot as u64 + 1);
    (init, train.with_seed(shuffle))
}

pub(crate) fn output_kind(task: Task) -> OutputKind {
    match task {
        Task::Regression => OutputKind::Linear,
        Task::Classification => OutputKind::Softmax,
    }
}

pub(crate) fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    UMoE,
    BaselineMoE(Reducer),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UMoEModel {
    pub kind: ModelKind,
    pub task: Task,
    pub class_count: usize,
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    pub cluster_model: ClusterModel,
    pub experts: Vec<Mlp>,
    pub gate: Mlp,
    pub config: UMoEConfig,
    /// Experts whose cluster dominated no training instance; each is a copy of
    /// the expert of the largest cluster.
    pub fallback_experts: Vec<usize>,
}

/// A combined prediction with the routing details that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Regression: one value. Classification: class probabilities.
    pub output: Vec<f64>,
    pub gate_weights: Vec<f64>,
    /// Cluster vector fed to the gate (one-hot for certain inputs).
    pub cluster_vector: Vec<f64>,
}

/// Gated combination: Σ g_n ŷ_n for regression, the g-weighted mixture of
/// class distributions for classification.
pub fn combine(gate_weights: &[f64], expert_outputs: &[Vec<f64>]) -> Vec<f64> {
    let width = expert_outputs[0].len();
    let mut out = vec![0.0; width];
    for (g, y) in gate_weights.iter().zip(expert_outputs) {
        for (o, v) in out.iter_mut().zip(y) {
            *o += g * v;
        }
    }
    out
}

pub(crate) fn gate_input(point: &[f64], cluster_vector: &[f64], expert_outputs: Option<&[Vec<f64>]>) -> Vec<f64> {
    let mut x = Vec::with_capacity(point.len() + cluster_vector.len());
    x.extend_from_slice(point);
    x.extend_from_slice(cluster_vector);
    if let Some(outs) = expert_outputs {
        for o in outs {
            x.extend_from_slice(o);
        }
    }
    x
}

/// Train one expert per cluster on the instances it dominates, with features
/// at the local mode and loss weight λ. Returns the experts and the indices
/// that fell back to a copy of the largest cluster's expert.
pub fn train_experts(
    dataset: &UncertainDataset,
    decomposition: &Decomposition,
    cfg: &UMoEConfig,
) -> Result<(Vec<Mlp>, Vec<usize>)> {
    let e_count = decomposition.cluster_model.len();
    let mut rows: Vec<Vec<WeightedRow>> = vec![Vec::new(); e_count];
    for (inst, dec) in dataset.instances.iter().zip(&decomposition.instances) {
        rows[dec.dominant].push(WeightedRow {
            features: dec.local_point.clone(),
            target: inst.label,
            weight: dec.weight,
        });
    }
    let Some(largest) = (0..e_count).max_by(|&a, &b| rows[a].len().cmp(&rows[b].len()).then(b.cmp(&a))) else {
        return Err(Error::Internal("no clusters".into()));
    };
    if rows[largest].is_empty() {
        return Err(Error::Internal("every cluster is empty".into()));
    }
    let sizes = layer_sizes(dataset.n_features(), &cfg.expert_hidden, dataset.output_width());
    let kind = output_kind(dataset.task);
    let trained: Vec<Option<Mlp>> = (0..e_count)
        .into_par_iter()
        .map(|n| {
            if rows[n].is_empty() {
                return Ok(None);
            }
            let (init, train) = network_seeds(&cfg.expert_train, seed::tag::EXPERT, n);
            let mut mlp = Mlp::new(&sizes, kind, init)?;
            nn::train_weighted(&mut mlp, &rows[n], dataset.task, &train)?;
            Ok(Some(mlp))
        })
        .collect::<Result<_>>()?;
    let fallback: Vec<usize> = (0..e_count).filter(|&n| trained[n].is_none()).collect();
    let donor = trained[largest].clone().expect("largest cluster is trained");
    let experts = trained.into_iter().map(|m| m.unwrap_or_else(|| donor.clone())).collect();
    Ok((experts, fallback))
}

struct GateObjective {
    inputs: Vec<Vec<f64>>,
    expert_outputs: Vec<Vec<Vec<f64>>>,
    targets: Vec<f64>,
    task: Task,
}

impl Objective for GateObjective {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn input(&self, row: usize) -> &[f64] {
        &self.inputs[row]
    }

    fn weight(&self, _row: usize) -> f64 {
        1.0
    }

    fn loss_and_grad(&self, row: usize, g: &[f64]) -> (f64, Vec<f64>) {
        let outs = &self.expert_outputs[row];
        let y = self.targets[row];
        let mixed = combine(g, outs);
        match self.task {
            Task::Regression => {
                let r = mixed[0] - y;
                (r * r, outs.iter().map(|o| 2.0 * r * o[0]).collect())
            }
            Task::Classification => {
                let c = y as usize;
                let q = mixed[c];
                let loss = -q.max(PROB_FLOOR).ln();
                let grad = if q > PROB_FLOOR {
                    outs.iter().map(|o| -o[c] / q).collect()
                } else {
                    vec![0.0; outs.len()]
                };
                (loss, grad)
            }
        }
    }
}

/// Train the gating unit on (global mode, C_i) with the experts frozen. The
/// loss is taken on the gated combination of the experts' outputs.
pub fn train_gate(
    dataset: &UncertainDataset,
    decomposition: &Decomposition,
    experts: &[Mlp],
    cfg: &UMoEConfig,
) -> Result<Mlp> {
    let e_count = experts.len();
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut expert_outputs = Vec::with_capacity(dataset.len());
    for dec in &decomposition.instances {
        let outs: Vec<Vec<f64>> = experts.iter().map(|e| e.forward(&dec.global_point)).collect::<Result<_>>()?;
        let extra = cfg.include_expert_preds_in_gate_input.then_some(outs.as_slice());
        inputs.push(gate_input(&dec.global_point, &dec.probs.probs, extra));
        expert_outputs.push(outs);
    }
    let width = gate_width(dataset.n_features(), e_count, dataset.output_width(), cfg);
    let (init, train) = network_seeds(&cfg.gate_train, seed::tag::GATE, 0);
    let mut gate = Mlp::new(&layer_sizes(width, &cfg.gate_hidden, e_count), OutputKind::Softmax, init)?;
    let objective = GateObjective {
        inputs,
        expert_outputs,
        targets: dataset.instances.iter().map(|i| i.label).collect(),
        task: dataset.task,
    };
    nn::train_objective(&mut gate, &objective, &train)?;
    Ok(gate)
}

fn gate_width(k: usize, e_count: usize, output_width: usize, cfg: &UMoEConfig) -> usize {
    k + e_count + if cfg.include_expert_preds_in_gate_input { e_count * output_width } else { 0 }
}

/// Fit the full uMoE: decompose, train experts, train the gate.
pub fn fit(dataset: &UncertainDataset, cfg: &UMoEConfig) -> Result<UMoEModel> {
    cfg.validate()?;
    let prepared = prepare(dataset, cfg)?;
    fit_prepared(dataset, &prepared, cfg)
}

/// [`fit`] reusing sampling and global modes computed by [`prepare`].
pub fn fit_prepared(dataset: &UncertainDataset, prepared: &Prepared, cfg: &UMoEConfig) -> Result<UMoEModel> {
    cfg.validate()?;
    let decomposition = decompose_prepared(dataset, prepared, cfg)?;
    assemble(dataset, decomposition, cfg, ModelKind::UMoE)
}

pub(crate) fn assemble(
    dataset: &UncertainDataset,
    decomposition: Decomposition,
    cfg: &UMoEConfig,
    kind: ModelKind,
) -> Result<UMoEModel> {
    let (experts, fallback_experts) = train_experts(dataset, &decomposition, cfg)?;
    let gate = train_gate(dataset, &decomposition, &experts, cfg)?;
    Ok(UMoEModel {
        kind,
        task: dataset.task,
        class_count: dataset.class_count,
        feature_names: dataset.feature_names.clone(),
        scaler: dataset.scaler.clone(),
        cluster_model: decomposition.cluster_model,
        experts,
        gate,
        config: cfg.clone(),
        fallback_experts,
    })
}

impl UMoEModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn e_count(&self) -> usize {
        self.experts.len()
    }

    /// Route a standardized full point with the given cluster vector.
    pub fn predict_point(&self, point: &[f64], cluster_vector: &[f64]) -> Result<Prediction> {
        if point.len() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: point.len() });
        }
        if cluster_vector.len() != self.e_count() {
            return Err(Error::Dimension { expected: self.e_count(), got: cluster_vector.len() });
        }
        let outs: Vec<Vec<f64>> = self.experts.iter().map(|e| e.forward(point)).collect::<Result<_>>()?;
        let extra = self.config.include_expert_preds_in_gate_input.then_some(outs.as_slice());
        let gate_weights = self.gate.forward(&gate_input(point, cluster_vector, extra))?;
        Ok(Prediction { output: combine(&gate_weights, &outs), gate_weights, cluster_vector: cluster_vector.to_vec() })
    }

    /// Prediction for a fully observed instance in raw units: standardize,
    /// one-hot encode its cluster, gate, combine.
    pub fn predict_certain(&self, x: &[f64]) -> Result<Prediction> {
        let z = self.scaler.transform(x)?;
        let c = self.cluster_model.one_hot(&z)?;
        self.predict_point(&z, &c.probs)
    }

    /// Prediction for an instance with a density over some attributes. uMoE
    /// samples M points, keeps the top p, and feeds the global mode and the
    /// cluster probability vector to the gate; baselines collapse the density
    /// with their reducer and route the point as certain.
    pub fn predict_uncertain(&self, inst: &UncertainInstance, seed: u64) -> Result<Prediction> {
        if inst.n_features() != self.n_features() {
            return Err(Error::Dimension { expected: self.n_features(), got: inst.n_features() });
        }
        let Some(density) = &inst.density else {
            let c = self.cluster_model.one_hot(&inst.certain_values)?;
            return self.predict_point(&inst.certain_values, &c.probs);
        };
        match self.kind {
            ModelKind::UMoE => {
                let samples = density.sample(
                    self.config.samples_per_instance,
                    seed::derive(seed, seed::tag::SAMPLE, inst.id as u64),
                );
                let filtered = samples.filter_top_p(self.config.threshold)?;
                let c = self
                    .cluster_model
                    .cluster_probabilities(&filtered, |p| inst.complete(p))?;
                let mode = density.global_mode_with_samples(&self.config.mode_search, &samples);
                self.predict_point(&inst.complete(&mode.location), &c.probs)
            }
            ModelKind::BaselineMoE(reducer) => {
                let point = inst.complete(&reducer.reduce(density, &self.config, seed, inst.id));
                let c = self.cluster_model.one_hot(&point)?;
                self.predict_point(&point, &c.probs)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            format_version: u32,
            model: &'a UMoEModel,
        }
        Ok(serde_json::to_string(&Dump { format_version: MODEL_FORMAT_VERSION, model: self })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Dump {
            format_version: u32,
            model: UMoEModel,
        }
        let d: Dump = serde_json::from_str(s)?;
        if d.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported model format version {}", d.format_version)));
        }
        let m = d.model;
        if m.gate.output_dim() != m.experts.len() || m.cluster_model.len() != m.experts.len() {
            return Err(Error::Schema("gate width, cluster count and expert count disagree".into()));
        }
        if m.experts.iter().any(|e| e.input_dim() != m.feature_names.len()) || m.scaler.dim() != m.feature_names.len() {
            return Err(Error::Schema("expert input width differs from feature count".into()));
        }
        Ok(m)
    }
}

/// Anything that predicts from raw certain rows and from density-valued instances.
pub trait Predictor {
    fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn predict_instance(&self, inst: &UncertainInstance, seed: u64) -> Result<Vec<f64>>;
}

impl Predictor for UMoEModel {
    fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_certain(x)?.output)
    }

    fn predict_instance(&self, inst: &UncertainInstance, seed: u64) -> Result<Vec<f64>> {
        Ok(self.predict_uncertain(inst, seed)?.output)
    }
}
