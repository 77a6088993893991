use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ncv::{build_training_set, fit_method, score_certain};
use super::{stratified_folds, train_indices, Method, NCVConfig, NCVResult};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::model;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub fold: usize,
    pub method: Method,
    /// Subspace count; absent for NN baselines.
    pub count: Option<usize>,
    pub metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub count: usize,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub task: Task,
    pub range: Vec<usize>,
    pub records: Vec<SweepRecord>,
    /// One point per (method, count); NN baselines repeat their single value.
    pub curve: Vec<CurvePoint>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Plain cross-validation over every subspace count in `range`. Each fold's
/// uncertain training set and NN baselines are built once and shared by all
/// counts.
pub fn subspace_sweep(dataset: &Dataset, range: &[usize], cv_folds: usize, cfg: &NCVConfig) -> Result<SweepResult> {
    if range.is_empty() || range.contains(&0) {
        return Err(Error::Input("subspace range must be nonempty and positive".into()));
    }
    NCVConfig { outer_folds: cv_folds, ..cfg.clone() }.validate()?;
    dataset.validate()?;
    let folds = stratified_folds(&dataset.labels, dataset.task, cv_folds, seed::derive(cfg.seed, seed::tag::OUTER, u64::MAX))?;
    let per_fold: Vec<Vec<SweepRecord>> = (0..folds.len())
        .into_par_iter()
        .map(|f| sweep_fold(dataset, &folds, f, range, cfg))
        .collect();
    let records: Vec<SweepRecord> = per_fold.into_iter().flatten().collect();
    let mut curve = Vec::new();
    for &method in &cfg.methods {
        for &count in range {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method && (r.count.is_none() || r.count == Some(count)))
                .filter_map(|r| r.metric)
                .collect();
            curve.push(CurvePoint { method, count, metric: mean(&vals) });
        }
    }
    Ok(SweepResult { task: dataset.task, range: range.to_vec(), records, curve })
}

fn sweep_fold(dataset: &Dataset, folds: &[Vec<usize>], fold: usize, range: &[usize], cfg: &NCVConfig) -> Vec<SweepRecord> {
    let slots: Vec<(Method, Option<usize>)> = cfg
        .methods
        .iter()
        .flat_map(|&m| {
            if m.is_moe_family() {
                range.iter().map(|&c| (m, Some(c))).collect::<Vec<_>>()
            } else {
                vec![(m, None)]
            }
        })
        .collect();
    let fail = |e: &Error| {
        slots
            .iter()
            .map(|&(method, count)| SweepRecord { fold, method, count, metric: None, error: Some(e.to_string()) })
            .collect::<Vec<_>>()
    };
    let train = train_indices(folds, fold);
    let model_cfg = cfg.fold_model(fold);
    let (uds, _) = match build_training_set(dataset, &train, cfg, fold) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let prepared = match model::prepare(&uds, &model_cfg) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    slots
        .into_iter()
        .map(|(method, count)| {
            let s = fit_method(method, &uds, &prepared, &model_cfg.with_e_count(count.unwrap_or(1)))
                .and_then(|f| score_certain(&f, dataset, &folds[fold]));
            match s {
                Ok(m) => SweepRecord { fold, method, count, metric: Some(m), error: None },
                Err(e) => SweepRecord { fold, method, count, metric: None, error: Some(e.to_string()) },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub p: f64,
    pub method: Method,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    pub points: Vec<ThresholdPoint>,
    pub runs: Vec<NCVResult>,
}

/// Nested cross-validation once per threshold with every seed held fixed.
pub fn threshold_sweep(
    dataset: &Dataset,
    p_values: &[f64],
    outer_folds: usize,
    inner_folds: usize,
    cfg: &NCVConfig,
) -> Result<ThresholdSweepResult> {
    if p_values.is_empty() {
        return Err(Error::Input("threshold list must be nonempty".into()));
    }
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Input(format!("threshold p must be in (0, 1], got {p}")));
    }
    let mut runs = Vec::with_capacity(p_values.len());
    let mut points = Vec::new();
    for &p in p_values {
        let mut c = NCVConfig { outer_folds, inner_folds, ..cfg.clone() };
        c.model.threshold = p;
        let r = super::nested_cv(dataset, &c)?;
        points.extend(cfg.methods.iter().map(|&method| ThresholdPoint { p, method, metric: r.mean(method) }));
        runs.push(r);
    }
    Ok(ThresholdSweepResult { points, runs })
}
