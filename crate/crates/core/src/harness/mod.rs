//! Metrics, fold construction, nested cross-validation and the two sweeps.

mod ncv;
mod report;
mod sweep;

pub use ncv::{nested_cv, run_outer_fold, FoldOutcome, FoldRecord, NCVConfig, NCVResult, TrainingArtifacts};
pub use report::{summary_table, write_curve_csv, write_results_csv, write_threshold_csv, SummaryRow};
pub use sweep::{subspace_sweep, threshold_sweep, CurvePoint, SweepRecord, SweepResult, ThresholdPoint, ThresholdSweepResult};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::seed;

/// The five compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "uMoE")]
    UMoE,
    #[serde(rename = "MoE(mode)")]
    MoEMode,
    #[serde(rename = "MoE(mean)")]
    MoEMean,
    #[serde(rename = "NN(mode)")]
    NnMode,
    #[serde(rename = "NN(mean)")]
    NnMean,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::UMoE, Method::MoEMode, Method::MoEMean, Method::NnMode, Method::NnMean];

    pub fn name(self) -> &'static str {
        match self {
            Method::UMoE => "uMoE",
            Method::MoEMode => "MoE(mode)",
            Method::MoEMean => "MoE(mean)",
            Method::NnMode => "NN(mode)",
            Method::NnMean => "NN(mean)",
        }
    }

    /// Methods whose subspace count is tuned.
    pub fn is_moe_family(self) -> bool {
        matches!(self, Method::UMoE | Method::MoEMode | Method::MoEMean)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown method {s:?}")))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy (classification, argmax of each probability vector) or mean
/// squared error (regression, first output).
pub fn evaluate(predictions: &[Vec<f64>], truths: &[f64], task: Task) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Input("cannot evaluate zero predictions".into()));
    }
    if predictions.iter().any(Vec::is_empty) {
        return Err(Error::Input("empty prediction vector".into()));
    }
    let n = truths.len() as f64;
    Ok(match task {
        Task::Classification => {
            predictions.iter().zip(truths).filter(|(p, &y)| argmax(p) as f64 == y).count() as f64 / n
        }
        Task::Regression => predictions.iter().zip(truths).map(|(p, y)| (p[0] - y).powi(2)).sum::<f64>() / n,
    })
}

/// True when `a` is a strictly better metric than `b`.
pub fn better(task: Task, a: f64, b: f64) -> bool {
    match task {
        Task::Classification => a > b,
        Task::Regression => a < b,
    }
}

/// Fold index lists over `0..labels.len()`. Classification folds are
/// stratified: each class is shuffled and dealt round-robin, continuing the
/// deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[f64], task: Task, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if n_folds < 2 {
        return Err(Error::Input(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_folds > n {
        return Err(Error::Input(format!("{n_folds} folds for {n} instances")));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::tag::FOLDS, 0));
    let groups: Vec<Vec<usize>> = match task {
        Task::Regression => vec![(0..n).collect()],
        Task::Classification => {
            let mut classes: Vec<f64> = labels.to_vec();
            classes.sort_by(f64::total_cmp);
            classes.dedup();
            classes
                .iter()
                .map(|c| (0..n).filter(|&i| labels[i] == *c).collect())
                .collect()
        }
    };
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[next].push(i);
            next = (next + 1) % n_folds;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of fold `f`, ascending.
pub fn train_indices(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != f)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    idx.sort_unstable();
    idx
}
