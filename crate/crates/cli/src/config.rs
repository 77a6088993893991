//! Run configuration: one flat JSON document shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use umoe::data::Task;
use umoe::density::ModeSearchConfig;
use umoe::harness::{Method, NCVConfig};
use umoe::model::UMoEConfig;
use umoe::nn::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Name used in result tables.
    pub dataset_name: Option<String>,
    pub dataset_path: Option<PathBuf>,
    pub label_column: String,
    pub task: Task,
    /// Generate data instead of reading `dataset_path`.
    pub synthetic_instances: Option<usize>,
    pub synthetic_features: Option<usize>,

    pub u: f64,
    pub p: f64,
    pub samples_per_instance: usize,
    pub bandwidth: f64,
    pub draws: usize,
    pub sweeps: usize,

    pub e_count: usize,
    pub subspace_candidates: Vec<usize>,
    pub subspace_range: Vec<usize>,
    pub thresholds: Vec<f64>,

    pub hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gate_batch_size: usize,
    pub elastic_alpha: f64,
    pub elastic_lambda: f64,
    pub include_expert_preds_in_gate_input: bool,
    pub mode_starts: usize,
    pub mode_step_tol: f64,
    pub mode_max_iter: usize,

    pub outer_folds: usize,
    pub inner_folds: usize,
    pub cv_folds: usize,
    pub methods: Vec<Method>,

    /// Prepared dataset bundle (fit).
    pub bundle: Option<PathBuf>,
    /// Saved model (predict).
    pub model: Option<PathBuf>,
    /// Certain-instance CSV to predict.
    pub input: Option<PathBuf>,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModeSearchConfig::default();
        Self {
            dataset_name: None,
            dataset_path: None,
            label_column: "y".into(),
            task: Task::Regression,
            synthetic_instances: None,
            synthetic_features: None,
            u: 0.4,
            p: 0.8,
            samples_per_instance: 100,
            bandwidth: umoe::data::DEFAULT_BANDWIDTH,
            draws: 20,
            sweeps: 5,
            e_count: 2,
            subspace_candidates: vec![2, 3, 4],
            subspace_range: vec![2, 3, 4, 5, 6],
            thresholds: (1..=10).rev().map(|i| i as f64 / 10.0).collect(),
            hidden: vec![16, 16],
            gate_hidden: vec![16, 16],
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            gate_batch_size: 24,
            elastic_alpha: t.elastic_alpha,
            elastic_lambda: t.elastic_lambda,
            include_expert_preds_in_gate_input: false,
            mode_starts: m.n_starts,
            mode_step_tol: m.step_tol,
            mode_max_iter: m.max_iter,
            outer_folds: 5,
            inner_folds: 3,
            cv_folds: 5,
            methods: Method::ALL.to_vec(),
            bundle: None,
            model: None,
            input: None,
            seed: 0,
        }
    }
}

/// Marker key identifying a run manifest passed as `--config`.
pub const MANIFEST_KEY: &str = "manifest_version";

impl RunConfig {
    /// Read a config file, or the resolved config embedded in a manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key(MANIFEST_KEY) => map
                .remove("config")
                .ok_or_else(|| CliError::Config("manifest has no config".into()))?,
            v => v,
        };
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("{key}: {why}")));
        if !(0.0..1.0).contains(&self.u) {
            return bad("u", "must be in [0, 1)");
        }
        if self.synthetic_instances.is_some() != self.synthetic_features.is_some() {
            return bad("synthetic_instances", "synthetic_instances and synthetic_features go together");
        }
        if self.synthetic_instances.is_some() && self.dataset_path.is_some() {
            return bad("dataset_path", "give either dataset_path or synthetic sizes, not both");
        }
        if self.subspace_range.is_empty() || self.subspace_range.contains(&0) {
            return bad("subspace_range", "must be nonempty and positive");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return bad("thresholds", "each threshold must be in (0, 1]");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds", "must be at least 2");
        }
        self.model_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.ncv_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self) -> UMoEConfig {
        let train = TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            elastic_alpha: self.elastic_alpha,
            elastic_lambda: self.elastic_lambda,
            seed: self.seed,
        };
        UMoEConfig {
            e_count: self.e_count,
            threshold: self.p,
            samples_per_instance: self.samples_per_instance,
            expert_hidden: self.hidden.clone(),
            gate_hidden: self.gate_hidden.clone(),
            gate_train: TrainConfig { batch_size: self.gate_batch_size, ..train.clone() },
            expert_train: train,
            mode_search: ModeSearchConfig {
                n_starts: self.mode_starts,
                step_tol: self.mode_step_tol,
                max_iter: self.mode_max_iter,
                seed: self.seed,
            },
            include_expert_preds_in_gate_input: self.include_expert_preds_in_gate_input,
            seed: self.seed,
        }
    }

    pub fn ncv_config(&self) -> NCVConfig {
        NCVConfig {
            outer_folds: self.outer_folds,
            inner_folds: self.inner_folds,
            subspace_candidates: self.subspace_candidates.clone(),
            methods: self.methods.clone(),
            u: self.u,
            draws: self.draws,
            sweeps: self.sweeps,
            bandwidth: self.bandwidth,
            model: self.model_config(),
            seed: self.seed,
        }
    }

    pub fn dataset_label(&self) -> String {
        if let Some(n) = &self.dataset_name {
            return n.clone();
        }
        match (&self.dataset_path, self.synthetic_instances) {
            (Some(p), _) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into()),
            (None, Some(_)) => "synthetic".into(),
            _ => "dataset".into(),
        }
    }
}
