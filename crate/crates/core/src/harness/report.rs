use std::fmt::Write as _;
use std::io::Write;

use super::{Method, NCVResult, SweepResult, ThresholdSweepResult};
use crate::data::Task;
use crate::error::{Error, Result};

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "regression",
        Task::Classification => "classification",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Internal(format!("csv write failed: {e}"))
}

/// Per-fold results with columns `dataset,task,u,p,method,fold,n_star,metric`.
/// Failed methods leave `metric` empty.
pub fn write_results_csv<W: Write>(out: W, dataset: &str, results: &[&NCVResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "task", "u", "p", "method", "fold", "n_star", "metric"]).map_err(csv_err)?;
    for r in results {
        for rec in r.records() {
            w.write_record([
                dataset.to_string(),
                task_name(r.task).to_string(),
                r.config.u.to_string(),
                r.config.model.threshold.to_string(),
                rec.method.name().to_string(),
                rec.fold.to_string(),
                opt(rec.n_star),
                opt(rec.metric),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `method,count,metric` rows, one per curve point.
pub fn write_curve_csv<W: Write>(out: W, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "count", "metric"]).map_err(csv_err)?;
    for p in &sweep.curve {
        w.write_record([p.method.name().to_string(), p.count.to_string(), opt(p.metric)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `method,p,metric` rows, one per (threshold, method).
pub fn write_threshold_csv<W: Write>(out: W, sweep: &ThresholdSweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "p", "metric"]).map_err(csv_err)?;
    for p in &sweep.points {
        w.write_record([p.method.name().to_string(), p.p.to_string(), opt(p.metric)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub struct SummaryRow<'a> {
    pub dataset: &'a str,
    pub result: &'a NCVResult,
}

/// Text table: one row per dataset and u, one column per method, each cell
/// the mean over outer folds (ACC in percent, MSE as is).
pub fn summary_table(rows: &[SummaryRow<'_>]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<16} {:>5} {:>6}", "dataset", "u", "metric");
    for m in Method::ALL {
        let _ = write!(s, " {:>10}", m.name());
    }
    s.push('\n');
    for row in rows {
        let r = row.result;
        let (label, scale) = match r.task {
            Task::Classification => ("ACC%", 100.0),
            Task::Regression => ("MSE", 1.0),
        };
        let _ = write!(s, "{:<16} {:>5.2} {:>6}", row.dataset, r.config.u, label);
        for m in Method::ALL {
            match r.config.methods.contains(&m).then(|| r.mean(m)).flatten() {
                Some(v) => {
                    let _ = write!(s, " {:>10.4}", v * scale);
                }
                None => {
                    let _ = write!(s, " {:>10}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}
