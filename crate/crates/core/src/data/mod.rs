//! Tabular data: loading, standardization, uncertainty injection, imputation,
//! and assembly of density-valued instances.

mod csv_io;
mod impute;
mod synth;

pub use csv_io::{load_csv, load_csv_masked};
pub use impute::{impute_chained, Imputations};
pub use synth::{synthesize_dataset, synthesize_dataset_with_noise, SYNTH_NOISE};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::error::{Error, Result};
pub use crate::nn::Task;
use crate::seed;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BANDWIDTH: f64 = 0.1;

/// A fully observed table. Classification labels are class indices stored as
/// `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub task: Task,
    /// Number of classes for classification, 0 for regression.
    pub class_count: usize,
    /// Original label strings by class index (classification only).
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<f64>,
        feature_names: Vec<String>,
        task: Task,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Self { features, labels, feature_names, task, class_count, class_names: Vec::new() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.feature_names.len();
        if self.features.is_empty() || k == 0 {
            return Err(Error::Input("dataset needs at least one row and one feature".into()));
        }
        if self.labels.len() != self.features.len() {
            return Err(Error::Input("label count differs from row count".into()));
        }
        for row in &self.features {
            if row.len() != k {
                return Err(Error::Dimension { expected: k, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("dataset contains a missing or non-finite value".into()));
            }
        }
        if self.task == Task::Classification {
            if self.class_count == 0 {
                return Err(Error::Input("classification needs at least one class".into()));
            }
            if self.labels.iter().any(|&l| l < 0.0 || l.fract() != 0.0 || l as usize >= self.class_count) {
                return Err(Error::Input("classification label out of range".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            feature_names: self.feature_names.clone(),
            task: self.task,
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }

    /// Output width of a network predicting this task.
    pub fn output_width(&self) -> usize {
        match self.task {
            Task::Regression => 1,
            Task::Classification => self.class_count,
        }
    }
}

/// Per-feature standardization using statistics of the observed training values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    /// Fit from columns of observed values; columns with (near) zero spread get std 1.
    pub fn fit_columns(columns: &[Vec<f64>]) -> Self {
        let mut means = Vec::with_capacity(columns.len());
        let mut stds = Vec::with_capacity(columns.len());
        for col in columns {
            let n = col.len().max(1) as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            means.push(mean);
            stds.push(if std > 1e-12 { std } else { 1.0 });
        }
        Self { means, stds }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        let cols: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::fit_columns(&cols)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        (v - self.means[j]) / self.stds[j]
    }

    pub fn inverse_value(&self, j: usize, z: f64) -> f64 {
        z * self.stds[j] + self.means[j]
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(x.iter().enumerate().map(|(j, &v)| self.transform_value(j, v)).collect())
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: z.len() });
        }
        Ok(z.iter().enumerate().map(|(j, &v)| self.inverse_value(j, v)).collect())
    }
}

/// A table with per-cell missing flags. Values of missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedView {
    pub values: Vec<Vec<f64>>,
    pub missing: Vec<Vec<bool>>,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub task: Task,
    pub class_count: usize,
    pub class_names: Vec<String>,
}

impl MaskedView {
    /// View of a complete dataset with nothing masked.
    pub fn unmasked(ds: &Dataset) -> Self {
        Self {
            values: ds.features.clone(),
            missing: vec![vec![false; ds.n_features()]; ds.len()],
            labels: ds.labels.clone(),
            feature_names: ds.feature_names.clone(),
            task: ds.task,
            class_count: ds.class_count,
            class_names: ds.class_names.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().flatten().filter(|&&m| m).count()
    }

    pub fn missing_per_feature(&self) -> Vec<usize> {
        (0..self.n_features())
            .map(|j| self.missing.iter().filter(|r| r[j]).count())
            .collect()
    }

    /// Realized fraction of masked cells.
    pub fn u_actual(&self) -> f64 {
        let cells = self.len() * self.n_features();
        if cells == 0 {
            0.0
        } else {
            self.missing_count() as f64 / cells as f64
        }
    }

    /// Mask `floor(u * I * k)` further cells, chosen uniformly without
    /// replacement among the currently observed ones.
    pub fn mask_more(&self, u: f64, seed: u64) -> Result<MaskedView> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::Input(format!("uncertainty fraction u must be in [0, 1), got {u}")));
        }
        let k = self.n_features();
        let cells = self.len() * k;
        let count = mask_count(u, cells);
        let observed: Vec<usize> = (0..cells).filter(|&c| !self.missing[c / k][c % k]).collect();
        if count > observed.len() {
            return Err(Error::Input(format!(
                "cannot mask {count} cells, only {} are observed",
                observed.len()
            )));
        }
        let mut rng = seed::rng(seed::derive(seed, seed::tag::MASK, 0));
        let mut out = self.clone();
        for pick in index::sample(&mut rng, observed.len(), count).into_iter() {
            let c = observed[pick];
            out.missing[c / k][c % k] = true;
            out.values[c / k][c % k] = f64::NAN;
        }
        Ok(out)
    }

    /// Observed values per column.
    pub fn observed_columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_features())
            .map(|j| {
                self.values
                    .iter()
                    .zip(&self.missing)
                    .filter(|(_, m)| !m[j])
                    .map(|(r, _)| r[j])
                    .collect()
            })
            .collect()
    }
}

/// `floor(u * cells)`, robust to the representation error of decimal `u`.
pub fn mask_count(u: f64, cells: usize) -> usize {
    let raw = u * cells as f64;
    ((raw + 1e-9 * raw.max(1.0)).floor() as usize).min(cells)
}

/// Flag exactly `floor(u * I * k)` feature cells as missing, uniformly without
/// replacement. Labels are never masked.
pub fn inject_uncertainty(ds: &Dataset, u: f64, seed: u64) -> Result<MaskedView> {
    MaskedView::unmasked(ds).mask_more(u, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainInstance {
    /// Stable row id, used to key per-instance random streams.
    pub id: usize,
    pub certain_dims: Vec<usize>,
    /// Standardized values of `certain_dims`, in the same order.
    pub certain_values: Vec<f64>,
    /// Density over the remaining attributes; absent when all are certain.
    pub density: Option<DensityModel>,
    pub label: f64,
}

impl UncertainInstance {
    pub fn certain(id: usize, values: Vec<f64>, label: f64) -> Self {
        Self { id, certain_dims: (0..values.len()).collect(), certain_values: values, density: None, label }
    }

    pub fn n_features(&self) -> usize {
        self.certain_dims.len() + self.density.as_ref().map_or(0, DensityModel::dim)
    }

    /// Full standardized vector for an uncertain-space point, or the certain
    /// values alone when there is no density.
    pub fn complete(&self, point: &[f64]) -> Vec<f64> {
        match &self.density {
            Some(d) => d.complete(point, &self.certain_values),
            None => self.certain_values.clone(),
        }
    }

    pub fn is_uncertain(&self) -> bool {
        self.density.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainDataset {
    pub instances: Vec<UncertainInstance>,
    pub scaler: Scaler,
    pub feature_names: Vec<String>,
    pub task: Task,
    pub class_count: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub u_actual: f64,
}

impl UncertainDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn output_width(&self) -> usize {
        match self.task {
            Task::Regression => 1,
            Task::Classification => self.class_count,
        }
    }

    pub fn subset(&self, rows: &[usize]) -> UncertainDataset {
        let instances: Vec<UncertainInstance> = rows.iter().map(|&i| self.instances[i].clone()).collect();
        let k = self.n_features();
        let masked: usize = instances.iter().map(|i| k - i.certain_dims.len()).sum();
        let cells = instances.len() * k;
        UncertainDataset {
            instances,
            u_actual: if cells == 0 { 0.0 } else { masked as f64 / cells as f64 },
            scaler: self.scaler.clone(),
            feature_names: self.feature_names.clone(),
            task: self.task,
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }

    /// Dataset of fully certain instances (standardized with a scaler fit on `ds`).
    pub fn from_certain(ds: &Dataset) -> UncertainDataset {
        let scaler = Scaler::fit(&ds.features);
        let instances = ds
            .features
            .iter()
            .zip(&ds.labels)
            .enumerate()
            .map(|(i, (r, &y))| UncertainInstance::certain(i, scaler.transform(r).expect("row width"), y))
            .collect();
        UncertainDataset {
            instances,
            scaler,
            feature_names: ds.feature_names.clone(),
            task: ds.task,
            class_count: ds.class_count,
            class_names: ds.class_names.clone(),
            u_actual: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Bundle<'a> {
            format_version: u32,
            dataset: &'a UncertainDataset,
        }
        Ok(serde_json::to_string(&Bundle { format_version: DATASET_FORMAT_VERSION, dataset: self })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Bundle {
            format_version: u32,
            dataset: UncertainDataset,
        }
        let b: Bundle = serde_json::from_str(s)?;
        if b.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported dataset format version {}", b.format_version)));
        }
        Ok(b.dataset)
    }
}

/// Standardize with a scaler fit on observed cells, and turn each instance's
/// imputation draws into a kernel density over its missing attributes.
/// `ids` gives the stable id of each row (defaults to the row index).
pub fn build_uncertain_dataset(
    view: &MaskedView,
    imputations: &Imputations,
    bandwidth: f64,
    ids: Option<&[usize]>,
) -> Result<UncertainDataset> {
    if !(bandwidth > 0.0) {
        return Err(Error::Input(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if imputations.draws.len() != view.len() {
        return Err(Error::Input("imputations do not match the masked view".into()));
    }
    let scaler = Scaler::fit_columns(&view.observed_columns());
    let k = view.n_features();
    let mut instances = Vec::with_capacity(view.len());
    for i in 0..view.len() {
        let id = ids.map_or(i, |ids| ids[i]);
        let missing_dims: Vec<usize> = (0..k).filter(|&j| view.missing[i][j]).collect();
        let certain_dims: Vec<usize> = (0..k).filter(|&j| !view.missing[i][j]).collect();
        let certain_values = certain_dims
            .iter()
            .map(|&j| scaler.transform_value(j, view.values[i][j]))
            .collect();
        let density = if missing_dims.is_empty() {
            None
        } else {
            let centers: Vec<Vec<f64>> = imputations.draws[i]
                .iter()
                .map(|d| d.iter().zip(&missing_dims).map(|(&v, &j)| scaler.transform_value(j, v)).collect())
                .collect();
            Some(DensityModel::new(centers, bandwidth, missing_dims)?)
        };
        instances.push(UncertainInstance { id, certain_dims, certain_values, density, label: view.labels[i] });
    }
    Ok(UncertainDataset {
        instances,
        scaler,
        feature_names: view.feature_names.clone(),
        task: view.task,
        class_count: view.class_count,
        class_names: view.class_names.clone(),
        u_actual: view.u_actual(),
    })
}
