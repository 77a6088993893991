use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{better, evaluate, stratified_folds, train_indices, Method};
use crate::data::{
    build_uncertain_dataset, impute_chained, inject_uncertainty, Dataset, Imputations, Scaler, Task, UncertainDataset,
};
use crate::error::{Error, Result};
use crate::model::{self, Predictor, Prepared, Reducer, UMoEConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NCVConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub subspace_candidates: Vec<usize>,
    pub methods: Vec<Method>,
    /// Fraction of training cells masked.
    pub u: f64,
    pub draws: usize,
    pub sweeps: usize,
    pub bandwidth: f64,
    /// Model settings; `e_count` is replaced by each candidate.
    pub model: UMoEConfig,
    pub seed: u64,
}

impl Default for NCVConfig {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            inner_folds: 3,
            subspace_candidates: vec![2, 3, 4],
            methods: Method::ALL.to_vec(),
            u: 0.4,
            draws: 20,
            sweeps: 5,
            bandwidth: 0.1,
            model: UMoEConfig::default(),
            seed: 0,
        }
    }
}

impl NCVConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::Input("outer_folds and inner_folds must be at least 2".into()));
        }
        if self.subspace_candidates.is_empty() || self.subspace_candidates.iter().any(|&c| c < 2) {
            return Err(Error::Input("subspace_candidates must be nonempty and each at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Input("methods must be nonempty".into()));
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::Input("methods must not repeat".into()));
        }
        if !(0.0..1.0).contains(&self.u) {
            return Err(Error::Input(format!("u must be in [0, 1), got {}", self.u)));
        }
        if self.draws < 2 || self.sweeps < 1 {
            return Err(Error::Input("draws must be at least 2 and sweeps at least 1".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::Input("bandwidth must be positive".into()));
        }
        self.model.validate()
    }

    /// Model settings for outer fold `fold`, with every seed derived from the run seed.
    pub fn fold_model(&self, fold: usize) -> UMoEConfig {
        let s = seed::derive(self.seed, seed::tag::OUTER, fold as u64);
        let mut m = self.model.clone();
        m.seed = s;
        m.expert_train.seed = s;
        m.gate_train.seed = s;
        m.mode_search.seed = s;
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub method: Method,
    pub n_star: Option<usize>,
    pub metric: Option<f64>,
    pub error: Option<String>,
    /// Inner mean metric per candidate (absent when a candidate failed).
    pub inner: Vec<(usize, Option<f64>)>,
}

/// What was fit on the training portion of one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingArtifacts {
    pub scaler: Scaler,
    pub imputations: Imputations,
    pub centroids: Vec<(Method, Vec<Vec<f64>>)>,
}

impl TrainingArtifacts {
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("artifacts serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub u_actual: f64,
    pub records: Vec<FoldRecord>,
    pub artifacts: Option<TrainingArtifacts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NCVResult {
    pub task: Task,
    pub config: NCVConfig,
    pub folds: Vec<FoldOutcome>,
}

impl NCVResult {
    pub fn records(&self) -> impl Iterator<Item = &FoldRecord> {
        self.folds.iter().flat_map(|f| f.records.iter())
    }

    /// Mean test metric over the folds where `method` succeeded.
    pub fn mean(&self, method: Method) -> Option<f64> {
        let v: Vec<f64> = self.records().filter(|r| r.method == method).filter_map(|r| r.metric).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Chosen subspace counts N, one per fold where `method` was tuned.
    pub fn chosen(&self, method: Method) -> Vec<usize> {
        self.records().filter(|r| r.method == method).filter_map(|r| r.n_star).collect()
    }

    pub fn failures(&self) -> usize {
        self.records().filter(|r| r.error.is_some()).count()
    }
}

/// Candidate with the best score; ties go to the smallest candidate.
pub(crate) fn select(task: Task, scores: &[(usize, Option<f64>)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut sorted: Vec<(usize, f64)> = scores.iter().filter_map(|&(c, s)| s.map(|s| (c, s))).collect();
    sorted.sort_by_key(|&(c, _)| c);
    for (c, s) in sorted {
        if best.is_none_or(|(_, b)| better(task, s, b)) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

/// Mask, impute and build densities over `train` rows only.
pub(crate) fn build_training_set(
    dataset: &Dataset,
    train: &[usize],
    cfg: &NCVConfig,
    fold: usize,
) -> Result<(UncertainDataset, Imputations)> {
    let part = dataset.subset(train);
    let view = inject_uncertainty(&part, cfg.u, seed::derive(cfg.seed, seed::tag::MASK, fold as u64))?;
    let imputations = impute_chained(&view, cfg.draws, cfg.sweeps, seed::derive(cfg.seed, seed::tag::IMPUTE, fold as u64))?;
    let uds = build_uncertain_dataset(&view, &imputations, cfg.bandwidth, Some(train))?;
    Ok((uds, imputations))
}

pub(crate) enum Fitted {
    Moe(model::UMoEModel),
    Nn(model::BaselineNn),
}

impl Fitted {
    pub(crate) fn predictor(&self) -> &dyn Predictor {
        match self {
            Fitted::Moe(m) => m,
            Fitted::Nn(m) => m,
        }
    }

    pub(crate) fn centroids(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            Fitted::Moe(m) => Some(m.cluster_model.centroids().to_vec()),
            Fitted::Nn(_) => None,
        }
    }
}

pub(crate) fn fit_method(
    method: Method,
    train: &UncertainDataset,
    prepared: &Prepared,
    cfg: &UMoEConfig,
) -> Result<Fitted> {
    Ok(match method {
        Method::UMoE => Fitted::Moe(model::fit_prepared(train, prepared, cfg)?),
        Method::MoEMode => Fitted::Moe(model::fit_baseline_moe_prepared(train, Some(prepared), Reducer::Mode, cfg)?),
        Method::MoEMean => Fitted::Moe(model::fit_baseline_moe_prepared(train, Some(prepared), Reducer::Mean, cfg)?),
        Method::NnMode => Fitted::Nn(model::fit_baseline_nn_prepared(train, Some(prepared), Reducer::Mode, cfg)?),
        Method::NnMean => Fitted::Nn(model::fit_baseline_nn_prepared(train, Some(prepared), Reducer::Mean, cfg)?),
    })
}

/// Metric of a fitted method on certain raw rows.
pub(crate) fn score_certain(fitted: &Fitted, dataset: &Dataset, rows: &[usize]) -> Result<f64> {
    let p = fitted.predictor();
    let preds: Vec<Vec<f64>> = rows.iter().map(|&i| p.predict_raw(&dataset.features[i])).collect::<Result<_>>()?;
    let truths: Vec<f64> = rows.iter().map(|&i| dataset.labels[i]).collect();
    evaluate(&preds, &truths, dataset.task)
}

fn score_instances(fitted: &Fitted, val: &UncertainDataset, seed: u64) -> Result<f64> {
    let p = fitted.predictor();
    let preds: Vec<Vec<f64>> = val.instances.iter().map(|i| p.predict_instance(i, seed)).collect::<Result<_>>()?;
    let truths: Vec<f64> = val.instances.iter().map(|i| i.label).collect();
    evaluate(&preds, &truths, val.task)
}

/// Inner-loop mean validation metric per (method, candidate).
fn inner_scores(
    uds: &UncertainDataset,
    methods: &[Method],
    cfg: &NCVConfig,
    fold: usize,
    model_cfg: &UMoEConfig,
) -> Result<BTreeMap<Method, Vec<(usize, Option<f64>)>>> {
    let labels: Vec<f64> = uds.instances.iter().map(|i| i.label).collect();
    let inner = stratified_folds(&labels, uds.task, cfg.inner_folds, seed::derive(cfg.seed, seed::tag::INNER, fold as u64))?;
    let mut sums: BTreeMap<(Method, usize), Option<f64>> = BTreeMap::new();
    for m in methods {
        for &c in &cfg.subspace_candidates {
            sums.insert((*m, c), Some(0.0));
        }
    }
    for j in 0..inner.len() {
        let train = uds.subset(&train_indices(&inner, j));
        let val = uds.subset(&inner[j]);
        let prepared = match model::prepare(&train, model_cfg) {
            Ok(p) => p,
            Err(_) => {
                sums.values_mut().for_each(|v| *v = None);
                break;
            }
        };
        for m in methods {
            for &c in &cfg.subspace_candidates {
                let slot = sums.get_mut(&(*m, c)).expect("slot");
                if slot.is_none() {
                    continue;
                }
                let s = fit_method(*m, &train, &prepared, &model_cfg.with_e_count(c))
                    .and_then(|f| score_instances(&f, &val, model_cfg.seed));
                *slot = match s {
                    Ok(v) => slot.map(|acc| acc + v),
                    Err(_) => None,
                };
            }
        }
    }
    let b = inner.len() as f64;
    let mut out: BTreeMap<Method, Vec<(usize, Option<f64>)>> = BTreeMap::new();
    for ((m, c), s) in sums {
        out.entry(m).or_default().push((c, s.map(|v| v / b)));
    }
    Ok(out)
}

/// One outer fold: build the uncertain training set, tune n* per MoE-family
/// method on inner folds, refit, and score every method on the certain test rows.
pub fn run_outer_fold(dataset: &Dataset, folds: &[Vec<usize>], fold: usize, cfg: &NCVConfig) -> FoldOutcome {
    let train = train_indices(folds, fold);
    let test = &folds[fold];
    let mut outcome = FoldOutcome {
        fold,
        train_size: train.len(),
        test_size: test.len(),
        u_actual: 0.0,
        records: Vec::new(),
        artifacts: None,
    };
    let fail_all = |outcome: &mut FoldOutcome, e: &Error| {
        outcome.records = cfg
            .methods
            .iter()
            .map(|&method| FoldRecord { fold, method, n_star: None, metric: None, error: Some(e.to_string()), inner: Vec::new() })
            .collect();
    };
    let (uds, imputations) = match build_training_set(dataset, &train, cfg, fold) {
        Ok(v) => v,
        Err(e) => {
            fail_all(&mut outcome, &e);
            return outcome;
        }
    };
    outcome.u_actual = uds.u_actual;
    let model_cfg = cfg.fold_model(fold);
    let moe: Vec<Method> = cfg.methods.iter().copied().filter(|m| m.is_moe_family()).collect();
    let inner = if cfg.subspace_candidates.len() > 1 && !moe.is_empty() {
        match inner_scores(&uds, &moe, cfg, fold, &model_cfg) {
            Ok(v) => v,
            Err(e) => {
                fail_all(&mut outcome, &e);
                return outcome;
            }
        }
    } else {
        moe.iter().map(|&m| (m, vec![(cfg.subspace_candidates[0], None)])).collect()
    };
    let prepared = match model::prepare(&uds, &model_cfg) {
        Ok(p) => p,
        Err(e) => {
            fail_all(&mut outcome, &e);
            return outcome;
        }
    };
    let mut centroids = Vec::new();
    for &method in &cfg.methods {
        let scores = inner.get(&method).cloned().unwrap_or_default();
        let n_star = if method.is_moe_family() {
            if cfg.subspace_candidates.len() == 1 {
                Some(cfg.subspace_candidates[0])
            } else {
                select(dataset.task, &scores)
            }
        } else {
            None
        };
        let mut record = FoldRecord { fold, method, n_star, metric: None, error: None, inner: scores };
        if method.is_moe_family() && n_star.is_none() {
            record.error = Some("every subspace candidate failed in the inner loop".into());
            outcome.records.push(record);
            continue;
        }
        let run_cfg = model_cfg.with_e_count(n_star.unwrap_or(1));
        match fit_method(method, &uds, &prepared, &run_cfg) {
            Ok(f) => {
                if let Some(c) = f.centroids() {
                    centroids.push((method, c));
                }
                match score_certain(&f, dataset, test) {
                    Ok(m) => record.metric = Some(m),
                    Err(e) => record.error = Some(e.to_string()),
                }
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        outcome.records.push(record);
    }
    outcome.artifacts = Some(TrainingArtifacts { scaler: uds.scaler.clone(), imputations, centroids });
    outcome
}

/// Nested cross-validation over `a` outer folds. Outer test rows stay certain;
/// all preprocessing is fit on the outer training rows.
pub fn nested_cv(dataset: &Dataset, cfg: &NCVConfig) -> Result<NCVResult> {
    cfg.validate()?;
    dataset.validate()?;
    let folds = stratified_folds(&dataset.labels, dataset.task, cfg.outer_folds, seed::derive(cfg.seed, seed::tag::OUTER, u64::MAX))?;
    let outcomes: Vec<FoldOutcome> =
        (0..folds.len()).into_par_iter().map(|f| run_outer_fold(dataset, &folds, f, cfg)).collect();
    Ok(NCVResult { task: dataset.task, config: cfg.clone(), folds: outcomes })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::synthesize_dataset;
    use crate::nn::TrainConfig;

    pub(crate) fn quick(seed: u64) -> NCVConfig {
        let t = TrainConfig { epochs: 5, ..TrainConfig::default() };
        NCVConfig {
            subspace_candidates: vec![2, 3],
            outer_folds: 3,
            inner_folds: 2,
            u: 0.3,
            draws: 5,
            sweeps: 2,
            model: UMoEConfig {
                samples_per_instance: 20,
                expert_hidden: vec![4],
                gate_hidden: vec![4],
                expert_train: t.clone(),
                gate_train: TrainConfig { batch_size: 24, ..t },
                ..UMoEConfig::default()
            },
            seed,
            ..NCVConfig::default()
        }
    }

    #[test]
    fn select_prefers_best_then_smallest() {
        let s = [(3, Some(0.5)), (2, Some(0.5)), (4, Some(0.7)), (5, None)];
        assert_eq!(select(Task::Classification, &s), Some(4));
        assert_eq!(select(Task::Regression, &s), Some(2));
        assert_eq!(select(Task::Regression, &[(2, None)]), None);
    }

    #[test]
    fn config_validation() {
        assert!(NCVConfig::default().validate().is_ok());
        assert!(NCVConfig { outer_folds: 1, ..NCVConfig::default() }.validate().is_err());
        assert!(NCVConfig { subspace_candidates: vec![1, 2], ..NCVConfig::default() }.validate().is_err());
        assert!(NCVConfig { subspace_candidates: vec![], ..NCVConfig::default() }.validate().is_err());
        assert!(NCVConfig { methods: vec![Method::UMoE, Method::UMoE], ..NCVConfig::default() }.validate().is_err());
        assert!(NCVConfig { u: 1.0, ..NCVConfig::default() }.validate().is_err());
    }

    #[test]
    fn structure_and_determinism() {
        let ds = synthesize_dataset(Task::Classification, 60, 3, 1).unwrap();
        let cfg = quick(4);
        let r = nested_cv(&ds, &cfg).unwrap();
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.failures(), 0);
        for m in Method::ALL {
            let recs: Vec<&FoldRecord> = r.records().filter(|x| x.method == m).collect();
            assert_eq!(recs.len(), 3);
            if m.is_moe_family() {
                assert!(recs.iter().all(|x| x.n_star.is_some_and(|n| cfg.subspace_candidates.contains(&n))));
                for x in &recs {
                    assert_eq!(x.n_star, select(Task::Classification, &x.inner));
                }
            }
            let mean = recs.iter().map(|x| x.metric.unwrap()).sum::<f64>() / 3.0;
            assert!((r.mean(m).unwrap() - mean).abs() < 1e-15);
        }
        assert_eq!(r, nested_cv(&ds, &cfg).unwrap());
        let single = nested_cv(&ds, &NCVConfig { subspace_candidates: vec![2], ..cfg }).unwrap();
        assert_eq!(single.chosen(Method::UMoE), vec![2, 2, 2]);
    }
}
