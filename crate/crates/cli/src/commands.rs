use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use umoe::data::{
    build_uncertain_dataset, impute_chained, inject_uncertainty, load_csv, synthesize_dataset, Dataset, Task,
    UncertainDataset,
};
use umoe::harness::{
    nested_cv, subspace_sweep, summary_table, threshold_sweep, write_curve_csv, write_results_csv, write_threshold_csv,
    Method, NCVResult, SummaryRow,
};
use umoe::model::{self, UMoEModel};
use umoe::seed;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutputDir;

type Seeds = BTreeMap<String, u64>;

fn base_seeds(cfg: &RunConfig) -> Seeds {
    BTreeMap::from([("seed".to_string(), cfg.seed)])
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match (&cfg.dataset_path, cfg.synthetic_instances, cfg.synthetic_features) {
        (Some(path), _, _) => Ok(load_csv(path, cfg.task, &cfg.label_column)?),
        (None, Some(i), Some(k)) => Ok(synthesize_dataset(cfg.task, i, k, cfg.seed)?),
        _ => Err(CliError::Config("dataset_path: give a CSV path or synthetic_instances and synthetic_features".into())),
    }
}

fn method_slug(m: Method) -> String {
    m.name().to_lowercase().replace('(', "_").replace(')', "")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> umoe::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct PrepareReport {
    instances: usize,
    features: usize,
    u_requested: f64,
    u_actual: f64,
    masked_cells: usize,
    missing_per_feature: BTreeMap<String, usize>,
    uncertain_instances: usize,
    seed: u64,
}

pub fn prepare(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let mask_seed = seed::derive(cfg.seed, seed::tag::MASK, 0);
    let impute_seed = seed::derive(cfg.seed, seed::tag::IMPUTE, 0);
    let view = inject_uncertainty(&ds, cfg.u, mask_seed)?;
    let imputations = impute_chained(&view, cfg.draws, cfg.sweeps, impute_seed)?;
    let uds = build_uncertain_dataset(&view, &imputations, cfg.bandwidth, None)?;
    let report = PrepareReport {
        instances: ds.len(),
        features: ds.n_features(),
        u_requested: cfg.u,
        u_actual: uds.u_actual,
        masked_cells: view.missing_count(),
        missing_per_feature: ds.feature_names.iter().cloned().zip(view.missing_per_feature()).collect(),
        uncertain_instances: uds.instances.iter().filter(|i| i.is_uncertain()).count(),
        seed: cfg.seed,
    };
    let mut dir = OutputDir::create(out)?;
    dir.write("dataset.json", uds.to_json()?.as_bytes())?;
    dir.write_json("prepare_report.json", &report)?;
    let mut seeds = base_seeds(cfg);
    seeds.insert("mask".into(), mask_seed);
    seeds.insert("impute".into(), impute_seed);
    dir.finish("prepare", cfg, &seeds)
}

#[derive(Serialize)]
struct FitReport {
    instances: usize,
    u_actual: f64,
    experts: usize,
    fallback_experts: Vec<usize>,
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let path = cfg.bundle.as_ref().ok_or_else(|| CliError::Config("bundle: fit needs a prepared dataset bundle".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let uds = UncertainDataset::from_json(&text)?;
    if uds.task != cfg.task {
        return Err(CliError::Schema("bundle task differs from config task".into()));
    }
    let m = model::fit(&uds, &cfg.model_config())?;
    let report = FitReport {
        instances: uds.len(),
        u_actual: uds.u_actual,
        experts: m.e_count(),
        fallback_experts: m.fallback_experts.clone(),
    };
    let mut dir = OutputDir::create(out)?;
    dir.write("model.json", m.to_json()?.as_bytes())?;
    dir.write_json("fit_report.json", &report)?;
    dir.finish("fit", cfg, &base_seeds(cfg))
}

/// Rows of a certain-instance CSV laid out in the model's feature order. A
/// label column, if present, is ignored.
fn read_inputs(path: &Path, model: &UMoEModel, label: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let columns: Vec<usize> = (0..headers.len()).filter(|&c| headers[c] != label).collect();
    let names: Vec<&str> = columns.iter().map(|&c| headers[c].as_str()).collect();
    if names != model.feature_names.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(CliError::Schema(format!(
            "input columns {names:?} do not match model features {:?}",
            model.feature_names
        )));
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| CliError::Data(format!("row {line}: {e}")))?;
        let row = columns
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("").trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::Data(format!("row {line}, column {}: not a number: {cell:?}", headers[c])))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn predict(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model_path = cfg.model.as_ref().ok_or_else(|| CliError::Config("model: predict needs a saved model".into()))?;
    let input = cfg.input.as_ref().ok_or_else(|| CliError::Config("input: predict needs an input CSV".into()))?;
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", model_path.display())))?;
    let m = UMoEModel::from_json(&text)?;
    let rows = read_inputs(input, &m, &cfg.label_column)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    match m.task {
        Task::Regression => header.push("prediction".into()),
        Task::Classification => {
            header.push("predicted_class".into());
            header.extend((0..m.class_count).map(|c| format!("p_{c}")));
        }
    }
    header.extend((0..m.e_count()).map(|n| format!("g_{n}")));
    header.extend((0..m.e_count()).map(|n| format!("cluster_{n}")));
    w.write_record(&header).map_err(|e| CliError::Internal(e.to_string()))?;
    for (i, x) in rows.iter().enumerate() {
        let p = m.predict_certain(x)?;
        let mut rec = vec![i.to_string()];
        if m.task == Task::Classification {
            rec.push(umoe::harness::argmax(&p.output).to_string());
        }
        rec.extend(p.output.iter().chain(&p.gate_weights).chain(&p.cluster_vector).map(f64::to_string));
        w.write_record(&rec).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    let mut dir = OutputDir::create(out)?;
    dir.write("predictions.csv", &bytes)?;
    dir.finish("predict", cfg, &base_seeds(cfg))
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    train_size: usize,
    test_size: usize,
    u_actual: f64,
    training_artifacts_sha256: Option<String>,
    records: &'a [umoe::harness::FoldRecord],
}

fn fold_summaries(r: &NCVResult) -> Vec<FoldSummary<'_>> {
    r.folds
        .iter()
        .map(|f| FoldSummary {
            fold: f.fold,
            train_size: f.train_size,
            test_size: f.test_size,
            u_actual: f.u_actual,
            training_artifacts_sha256: f.artifacts.as_ref().map(|a| a.hash()),
            records: &f.records,
        })
        .collect()
}

fn ensure_some_success(records: usize, failures: usize) -> Result<(), CliError> {
    if records > 0 && failures == records {
        return Err(CliError::Internal("every method failed on every fold; see the written records".into()));
    }
    Ok(())
}

pub fn ncv(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let r = nested_cv(&ds, &cfg.ncv_config())?;
    let name = cfg.dataset_label();
    let mut dir = OutputDir::create(out)?;
    dir.write("results.csv", &csv_bytes(|b| write_results_csv(b, &name, &[&r]))?)?;
    dir.write("summary.txt", summary_table(&[SummaryRow { dataset: &name, result: &r }]).as_bytes())?;
    dir.write_json("folds.json", &fold_summaries(&r))?;
    dir.finish("ncv", cfg, &base_seeds(cfg))?;
    ensure_some_success(r.records().count(), r.failures())
}

pub fn subspace_sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let r = subspace_sweep(&ds, &cfg.subspace_range, cfg.cv_folds, &cfg.ncv_config())?;
    let name = cfg.dataset_label();
    let mut results = csv::Writer::from_writer(Vec::new());
    results
        .write_record(["dataset", "task", "u", "p", "method", "fold", "n_star", "metric"])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let task = match ds.task {
        Task::Regression => "regression",
        Task::Classification => "classification",
    };
    for rec in &r.records {
        results
            .write_record([
                name.clone(),
                task.to_string(),
                cfg.u.to_string(),
                cfg.p.to_string(),
                rec.method.name().to_string(),
                rec.fold.to_string(),
                rec.count.map(|c| c.to_string()).unwrap_or_default(),
                rec.metric.map(|m| m.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut dir = OutputDir::create(out)?;
    dir.write("results.csv", &results.into_inner().map_err(|e| CliError::Internal(e.to_string()))?)?;
    dir.write("curve.csv", &csv_bytes(|b| write_curve_csv(b, &r))?)?;
    for &m in &cfg.methods {
        let mut text = String::from("count,metric\n");
        for p in r.curve.iter().filter(|p| p.method == m) {
            text.push_str(&format!("{},{}\n", p.count, p.metric.map(|v| v.to_string()).unwrap_or_default()));
        }
        dir.write(&format!("plot_subspace_{}.csv", method_slug(m)), text.as_bytes())?;
    }
    dir.finish("subspace-sweep", cfg, &base_seeds(cfg))?;
    ensure_some_success(r.records.len(), r.records.iter().filter(|x| x.error.is_some()).count())
}

pub fn threshold_sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let r = threshold_sweep(&ds, &cfg.thresholds, cfg.outer_folds, cfg.inner_folds, &cfg.ncv_config())?;
    let name = cfg.dataset_label();
    let runs: Vec<&NCVResult> = r.runs.iter().collect();
    let mut dir = OutputDir::create(out)?;
    dir.write("results.csv", &csv_bytes(|b| write_results_csv(b, &name, &runs))?)?;
    dir.write("thresholds.csv", &csv_bytes(|b| write_threshold_csv(b, &r))?)?;
    for &m in &cfg.methods {
        let mut text = String::from("p,metric\n");
        for p in r.points.iter().filter(|p| p.method == m) {
            text.push_str(&format!("{},{}\n", p.p, p.metric.map(|v| v.to_string()).unwrap_or_default()));
        }
        dir.write(&format!("plot_threshold_{}.csv", method_slug(m)), text.as_bytes())?;
    }
    let summary: Vec<String> = r
        .runs
        .iter()
        .map(|run| format!("p = {}\n{}", run.config.model.threshold, summary_table(&[SummaryRow { dataset: &name, result: run }])))
        .collect();
    dir.write("summary.txt", summary.join("\n").as_bytes())?;
    dir.finish("threshold-sweep", cfg, &base_seeds(cfg))?;
    let records: usize = r.runs.iter().map(|x| x.records().count()).sum();
    let failures: usize = r.runs.iter().map(NCVResult::failures).sum();
    ensure_some_success(records, failures)
}
