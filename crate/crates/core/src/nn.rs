//! Feed-forward network with ReLU hidden layers and a linear or softmax output,
//! trained by mini-batch SGD with per-row loss weights and an elastic-net
//! penalty on the weights (biases are not penalized).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Floor applied to probabilities inside `ln` for cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Layer {
    fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.inputs + i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    output: OutputKind,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` is the output of layer `l-1`.
    activations: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("nonempty cache")
    }

    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("nonempty cache")
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }
}

impl Mlp {
    /// He-style uniform init in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero biases.
    pub fn new(layer_sizes: &[usize], output: OutputKind, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Input(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let mut rng = seed::rng(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / inputs as f64).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer { weights, biases: vec![0.0; outputs], inputs, outputs }
            })
            .collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), layers, output })
    }

    /// Network from explicit layers; shapes must chain.
    pub fn from_layers(layers: Vec<Layer>, output: OutputKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("network needs at least one layer".into()));
        }
        let mut sizes = vec![layers[0].inputs];
        for l in &layers {
            if l.inputs != *sizes.last().unwrap()
                || l.weights.len() != l.inputs * l.outputs
                || l.biases.len() != l.outputs
                || l.outputs == 0
            {
                return Err(Error::Input("inconsistent layer shapes".into()));
            }
            sizes.push(l.outputs);
        }
        Ok(Self { layer_sizes: sizes, layers, output })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.activations.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let a = activations.last().unwrap();
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + layer.biases[o]
                })
                .collect();
            let out = if li < last {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                match self.output {
                    OutputKind::Linear => z.clone(),
                    OutputKind::Softmax => softmax(&z),
                }
            };
            pre.push(z);
            activations.push(out);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Backpropagate `d_output` (the loss gradient with respect to the
    /// network's final activations) into parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let out = cache.output();
        let mut delta: Vec<f64> = match self.output {
            OutputKind::Linear => d_output.to_vec(),
            OutputKind::Softmax => {
                let dot: f64 = out.iter().zip(d_output).map(|(p, g)| p * g).sum();
                out.iter().zip(d_output).map(|(p, g)| p * (g - dot)).collect()
            }
        };
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let a_prev = &cache.activations[li];
            for o in 0..layer.outputs {
                grads.biases[li][o] = delta[o];
                let row = &mut grads.weights[li][o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(a_prev).for_each(|(g, a)| *g = delta[o] * a);
            }
            if li > 0 {
                let z_prev = &cache.pre[li - 1];
                delta = (0..layer.inputs)
                    .map(|i| {
                        if z_prev[i] > 0.0 {
                            (0..layer.outputs).map(|o| layer.weight(o, i) * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        grads
    }

    /// Elastic-net penalty over all weights.
    pub fn penalty(&self, elastic_alpha: f64, elastic_lambda: f64) -> f64 {
        if elastic_lambda == 0.0 {
            return 0.0;
        }
        let (l1, l2) = self.layers.iter().flat_map(|l| &l.weights).fold((0.0, 0.0), |(a, b), w| (a + w.abs(), b + w * w));
        elastic_lambda * (elastic_alpha * l1 + (1.0 - elastic_alpha) * l2)
    }

    fn add_penalty_grad(&self, grads: &mut Gradients, elastic_alpha: f64, elastic_lambda: f64) {
        if elastic_lambda == 0.0 {
            return;
        }
        for (g, l) in grads.weights.iter_mut().zip(&self.layers) {
            for (gw, &w) in g.iter_mut().zip(&l.weights) {
                let sign = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gw += elastic_lambda * (elastic_alpha * sign + 2.0 * (1.0 - elastic_alpha) * w);
            }
        }
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for ((l, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            l.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
            l.biases.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Per-row loss: squared error for regression (output width 1), categorical
/// cross-entropy against class index `target` for classification.
pub fn loss(output: &[f64], target: f64, task: Task) -> f64 {
    match task {
        Task::Regression => (output[0] - target).powi(2),
        Task::Classification => -output[target as usize].max(PROB_FLOOR).ln(),
    }
}

/// Gradient of [`loss`] with respect to `output`.
pub fn loss_grad(output: &[f64], target: f64, task: Task) -> Vec<f64> {
    match task {
        Task::Regression => vec![2.0 * (output[0] - target)],
        Task::Classification => {
            let mut g = vec![0.0; output.len()];
            let c = target as usize;
            if output[c] > PROB_FLOOR {
                g[c] = -1.0 / output[c];
            }
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub elastic_alpha: f64,
    pub elastic_lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 150,
            batch_size: 16,
            elastic_alpha: 0.5,
            elastic_lambda: 0.002,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Input("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.elastic_alpha) {
            return Err(Error::Input("elastic_alpha must be in [0, 1]".into()));
        }
        if !(self.elastic_lambda >= 0.0 && self.elastic_lambda.is_finite()) {
            return Err(Error::Input("elastic_lambda must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRow {
    pub features: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

/// A per-row training objective: loss and its gradient with respect to the
/// network output for row `row`, plus the row's weight in the batch mean.
pub trait Objective {
    fn len(&self) -> usize;
    fn input(&self, row: usize) -> &[f64];
    fn weight(&self, row: usize) -> f64;
    fn loss_and_grad(&self, row: usize, output: &[f64]) -> (f64, Vec<f64>);
}

struct WeightedRows<'a> {
    rows: &'a [WeightedRow],
    task: Task,
}

impl Objective for WeightedRows<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn input(&self, row: usize) -> &[f64] {
        &self.rows[row].features
    }

    fn weight(&self, row: usize) -> f64 {
        self.rows[row].weight
    }

    fn loss_and_grad(&self, row: usize, output: &[f64]) -> (f64, Vec<f64>) {
        let t = self.rows[row].target;
        (loss(output, t, self.task), loss_grad(output, t, self.task))
    }
}

/// Per-epoch mean batch loss recorded during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

/// Weighted-loss mini-batch SGD (see [`train_objective`]).
pub fn train_weighted(mlp: &mut Mlp, rows: &[WeightedRow], task: Task, cfg: &TrainConfig) -> Result<TrainHistory> {
    if rows.is_empty() {
        return Err(Error::Input("no training rows".into()));
    }
    if let Some(r) = rows.iter().find(|r| !(r.weight > 0.0 && r.weight <= 1.0)) {
        return Err(Error::Input(format!("row weight {} outside (0, 1]", r.weight)));
    }
    train_objective(mlp, &WeightedRows { rows, task }, cfg)
}

/// Mini-batch SGD, reshuffled every epoch. The batch loss is
/// `sum(w_i * loss_i) / sum(w_i)` plus the elastic-net penalty.
pub fn train_objective(mlp: &mut Mlp, objective: &dyn Objective, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = objective.len();
    if n == 0 {
        return Err(Error::Input("no training rows".into()));
    }
    for i in 0..n {
        let len = objective.input(i).len();
        if len != mlp.input_dim() {
            return Err(Error::Dimension { expected: mlp.input_dim(), got: len });
        }
    }
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let total_weight: f64 = batch.iter().map(|&i| objective.weight(i)).sum();
            let mut grads = Gradients::zeros_like(mlp);
            let mut batch_loss = 0.0;
            for &i in batch {
                let cache = mlp.forward_cached(objective.input(i))?;
                let (l, d_out) = objective.loss_and_grad(i, cache.output());
                let w = objective.weight(i) / total_weight;
                batch_loss += w * l;
                grads.add_scaled(&mlp.backward(&cache, &d_out), w);
            }
            batch_loss += mlp.penalty(cfg.elastic_alpha, cfg.elastic_lambda);
            if !batch_loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("batch loss {batch_loss}") });
            }
            mlp.add_penalty_grad(&mut grads, cfg.elastic_alpha, cfg.elastic_lambda);
            mlp.apply(&grads, cfg.learning_rate);
            epoch_loss += batch_loss;
            batches += 1;
        }
        history.epoch_loss.push(epoch_loss / batches as f64);
    }
    if mlp.layers.iter().any(|l| l.weights.iter().chain(&l.biases).any(|v| !v.is_finite())) {
        return Err(Error::Training { epoch: cfg.epochs - 1, message: "non-finite parameters".into() });
    }
    Ok(history)
}

#[derive(Serialize, Deserialize)]
struct MlpDump {
    format_version: u32,
    network: Mlp,
}

impl Mlp {
    /// Versioned JSON dump of layer sizes and parameters. Floats round-trip exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MlpDump { format_version: MODEL_FORMAT_VERSION, network: self.clone() })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: MlpDump = serde_json::from_str(s)?;
        if dump.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported network format version {}", dump.format_version)));
        }
        let net = dump.network;
        Mlp::from_layers(net.layers, net.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(weight: f64, bias: f64) -> Mlp {
        Mlp::from_layers(
            vec![Layer { weights: vec![weight], biases: vec![bias], inputs: 1, outputs: 1 }],
            OutputKind::Linear,
        )
        .unwrap()
    }

    #[test]
    fn init_shapes() {
        let m = Mlp::new(&[2, 16, 16, 1], OutputKind::Linear, 3).unwrap();
        let shapes: Vec<(usize, usize)> = m.layers().iter().map(|l| (l.outputs, l.inputs)).collect();
        assert_eq!(shapes, vec![(16, 2), (16, 16), (1, 16)]);
        assert!(m.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        assert_eq!(m, Mlp::new(&[2, 16, 16, 1], OutputKind::Linear, 3).unwrap());
        assert!(Mlp::new(&[2], OutputKind::Linear, 0).is_err());
        assert!(Mlp::new(&[2, 0, 1], OutputKind::Linear, 0).is_err());
    }

    #[test]
    fn forward_examples() {
        assert_eq!(single(2.0, 1.0).forward(&[3.0]).unwrap(), vec![7.0]);
        let zero = Mlp::from_layers(
            vec![Layer { weights: vec![0.0; 6], biases: vec![0.0; 3], inputs: 2, outputs: 3 }],
            OutputKind::Softmax,
        )
        .unwrap();
        for p in zero.forward(&[1.0, -2.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert!(single(1.0, 0.0).forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[3.0], 3.0, Task::Regression), 0.0);
        assert_eq!(loss(&[2.0], 4.0, Task::Regression), 4.0);
        assert!(loss(&[1.0, 0.0, 0.0], 0.0, Task::Classification).abs() < 1e-12);
        assert!((loss(&[0.0, 1.0], 0.0, Task::Classification) - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn zero_penalty_matches_unregularized() {
        let rows: Vec<WeightedRow> = (0..20)
            .map(|i| WeightedRow { features: vec![i as f64 / 10.0, 1.0], target: i as f64 / 5.0, weight: 1.0 })
            .collect();
        let cfg = TrainConfig { elastic_lambda: 0.0, epochs: 5, ..Default::default() };
        let mut a = Mlp::new(&[2, 4, 1], OutputKind::Linear, 1).unwrap();
        let mut b = a.clone();
        train_weighted(&mut a, &rows, Task::Regression, &cfg).unwrap();
        train_weighted(&mut b, &rows, Task::Regression, &TrainConfig { elastic_alpha: 0.9, ..cfg }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let rows = vec![WeightedRow { features: vec![1e3], target: 1e6, weight: 1.0 }];
        let mut m = Mlp::new(&[1, 1], OutputKind::Linear, 0).unwrap();
        let cfg = TrainConfig { learning_rate: 10.0, epochs: 50, ..Default::default() };
        assert!(matches!(train_weighted(&mut m, &rows, Task::Regression, &cfg), Err(Error::Training { .. })));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut m = Mlp::new(&[1, 2, 1], OutputKind::Linear, 0).unwrap();
        assert!(train_weighted(&mut m, &[], Task::Regression, &TrainConfig::default()).is_err());
        let bad = vec![WeightedRow { features: vec![1.0], target: 0.0, weight: 0.0 }];
        assert!(train_weighted(&mut m, &bad, Task::Regression, &TrainConfig::default()).is_err());
        let wide = vec![WeightedRow { features: vec![1.0, 2.0], target: 0.0, weight: 1.0 }];
        assert!(train_weighted(&mut m, &wide, Task::Regression, &TrainConfig::default()).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = Mlp::new(&[3, 5, 2], OutputKind::Softmax, 77).unwrap();
        let back = Mlp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
