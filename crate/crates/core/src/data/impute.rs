//! Chained-equations imputation with Gaussian residual draws.
//!
//! Each of the `D` draws runs the whole procedure with its own sub-seed:
//! missing cells start at the observed column mean, then for `T` sweeps every
//! feature with missing cells (in column order) is regressed by ordinary least
//! squares on all other features, using the rows where it is observed, and its
//! missing cells are redrawn as prediction plus N(0, residual_std^2).

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MaskedView;
use crate::error::{Error, Result};
use crate::seed;

/// Imputation draws per instance: `draws[i][d]` holds draw `d` for the
/// missing attributes of row `i`, in attribute order (raw units). Rows without
/// missing cells have no draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputations {
    pub draws: Vec<Vec<Vec<f64>>>,
}

pub fn impute_chained(view: &MaskedView, draws: usize, sweeps: usize, seed: u64) -> Result<Imputations> {
    if draws < 2 {
        return Err(Error::Input(format!("need at least 2 imputation draws, got {draws}")));
    }
    if sweeps < 1 {
        return Err(Error::Input("need at least 1 imputation sweep".into()));
    }
    let k = view.n_features();
    let n = view.len();
    let columns = view.observed_columns();
    if view.missing_count() > 0 {
        for (j, col) in columns.iter().enumerate() {
            if col.len() < 2 {
                return Err(Error::Imputation(format!(
                    "feature {:?} has {} observed values, need at least 2",
                    view.feature_names[j],
                    col.len()
                )));
            }
        }
    }
    let mut out = Imputations { draws: vec![Vec::new(); n] };
    if view.missing_count() == 0 {
        return Ok(out);
    }
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let targets: Vec<usize> = (0..k).filter(|&j| view.missing.iter().any(|r| r[j])).collect();

    for d in 0..draws {
        let mut rng = seed::rng(seed::derive(seed, seed::tag::IMPUTE, d as u64));
        let mut completed = view.values.clone();
        for (row, miss) in completed.iter_mut().zip(&view.missing) {
            for j in 0..k {
                if miss[j] {
                    row[j] = means[j];
                }
            }
        }
        if k == 1 {
            // nothing to regress on: draw from the observed marginal
            let col = &columns[0];
            let std = sample_std(col, means[0]);
            for (row, miss) in completed.iter_mut().zip(&view.missing) {
                if miss[0] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row[0] = means[0] + std * z;
                }
            }
        } else {
            for _ in 0..sweeps {
                for &j in &targets {
                    let fit = ols(&completed, &view.missing, j)?;
                    for i in 0..n {
                        if view.missing[i][j] {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            completed[i][j] = fit.predict(&completed[i], j) + fit.residual_std * z;
                        }
                    }
                }
            }
        }
        for i in 0..n {
            if view.missing[i].iter().any(|&m| m) {
                let draw: Vec<f64> = (0..k).filter(|&j| view.missing[i][j]).map(|j| completed[i][j]).collect();
                out.draws[i].push(draw);
            }
        }
    }
    Ok(out)
}

fn sample_std(col: &[f64], mean: f64) -> f64 {
    let n = col.len();
    if n < 2 {
        return 0.0;
    }
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

struct LinearFit {
    intercept: f64,
    /// Coefficient per feature; the target's own slot is zero.
    coef: Vec<f64>,
    residual_std: f64,
}

impl LinearFit {
    fn predict(&self, row: &[f64], target: usize) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.coef)
                .enumerate()
                .filter(|(j, _)| *j != target)
                .map(|(_, (v, c))| v * c)
                .sum::<f64>()
    }
}

/// Least squares of column `target` on the other columns plus an intercept,
/// over rows where `target` is observed. Solved through the normal equations
/// with an SVD pseudo-inverse so collinear predictors are tolerated.
fn ols(rows: &[Vec<f64>], missing: &[Vec<bool>], target: usize) -> Result<LinearFit> {
    let k = rows[0].len();
    let preds: Vec<usize> = (0..k).filter(|&j| j != target).collect();
    let p = preds.len() + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut n = 0usize;
    let mut x = vec![0.0; p];
    for (row, miss) in rows.iter().zip(missing) {
        if miss[target] {
            continue;
        }
        n += 1;
        x[0] = 1.0;
        for (slot, &j) in preds.iter().enumerate() {
            x[slot + 1] = row[j];
        }
        let y = row[target];
        for a in 0..p {
            xty[a] += x[a] * y;
            for b in a..p {
                xtx[(a, b)] += x[a] * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let beta = xtx
        .svd(true, true)
        .solve(&xty, 1e-12)
        .map_err(|e| Error::Imputation(format!("least squares failed: {e}")))?;
    let mut coef = vec![0.0; k];
    for (slot, &j) in preds.iter().enumerate() {
        coef[j] = beta[slot + 1];
    }
    let fit = LinearFit { intercept: beta[0], coef, residual_std: 0.0 };
    let rss: f64 = rows
        .iter()
        .zip(missing)
        .filter(|(_, m)| !m[target])
        .map(|(r, _)| (r[target] - fit.predict(r, target)).powi(2))
        .sum();
    let dof = if n > p { n - p } else { n.max(1) };
    Ok(LinearFit { residual_std: (rss / dof as f64).sqrt(), ..fit })
}

#[cfg(test)]
mod tests {
    use super::super::{inject_uncertainty, Dataset, Task};
    use super::*;

    fn view_from(values: Vec<Vec<f64>>, missing: Vec<Vec<bool>>) -> MaskedView {
        let k = values[0].len();
        let n = values.len();
        let mut values = values;
        for (r, m) in values.iter_mut().zip(&missing) {
            for j in 0..k {
                if m[j] {
                    r[j] = f64::NAN;
                }
            }
        }
        MaskedView {
            values,
            missing,
            labels: vec![0.0; n],
            feature_names: (0..k).map(|j| format!("f{j}")).collect(),
            task: Task::Regression,
            class_count: 0,
            class_names: Vec::new(),
        }
    }

    #[test]
    fn unmasked_rows_get_no_draws() {
        let values: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let mut missing = vec![vec![false, false]; 10];
        missing[4][1] = true;
        let imp = impute_chained(&view_from(values, missing), 5, 2, 1).unwrap();
        for (i, d) in imp.draws.iter().enumerate() {
            if i == 4 {
                assert_eq!(d.len(), 5);
                assert!(d.iter().all(|draw| draw.len() == 1));
            } else {
                assert!(d.is_empty());
            }
        }
    }

    #[test]
    fn zero_residual_regression_is_exact() {
        let values: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 - 3.0, 2.0 * (i as f64 - 3.0)]).collect();
        let mut missing = vec![vec![false, false]; 12];
        missing[7][1] = true;
        let imp = impute_chained(&view_from(values, missing), 10, 5, 3).unwrap();
        for draw in &imp.draws[7] {
            assert!((draw[0] - 8.0).abs() < 1e-9, "draw {draw:?}");
        }
    }

    #[test]
    fn single_feature_falls_back_to_marginal() {
        let n = 200;
        let values: Vec<Vec<f64>> = (0..n).map(|i| vec![((i * 37) % 101) as f64 / 10.0]).collect();
        let mut missing = vec![vec![false]; n];
        missing[0][0] = true;
        let observed: Vec<f64> = values[1..].iter().map(|r| r[0]).collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let std = sample_std(&observed, mean);
        let draws = 10_000;
        let imp = impute_chained(&view_from(values, missing), draws, 1, 5).unwrap();
        let d: Vec<f64> = imp.draws[0].iter().map(|v| v[0]).collect();
        let dm = d.iter().sum::<f64>() / draws as f64;
        let ds = sample_std(&d, dm);
        let tol = 3.0 * std / (draws as f64).sqrt();
        assert!((dm - mean).abs() < tol, "mean {dm} vs {mean}");
        assert!((ds - std).abs() < 3.0 * std / (2.0 * draws as f64).sqrt() + 1e-12, "std {ds} vs {std}");
    }

    #[test]
    fn entirely_missing_feature_errors() {
        let values = vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 5.0]];
        let missing = vec![vec![false, true]; 3];
        assert!(matches!(impute_chained(&view_from(values, missing), 3, 1, 0), Err(Error::Imputation(_))));
    }

    #[test]
    fn draws_vary_and_are_deterministic() {
        let ds = Dataset::new(
            (0..40).map(|i| vec![i as f64, ((i * 7) % 13) as f64, (i % 5) as f64]).collect(),
            vec![0.0; 40],
            vec!["a".into(), "b".into(), "c".into()],
            Task::Regression,
            0,
        )
        .unwrap();
        let view = inject_uncertainty(&ds, 0.2, 4).unwrap();
        let a = impute_chained(&view, 6, 3, 8).unwrap();
        assert_eq!(a, impute_chained(&view, 6, 3, 8).unwrap());
        let varying = a.draws.iter().filter(|d| !d.is_empty()).all(|d| d.iter().any(|x| x != &d[0]));
        assert!(varying);
        assert!(impute_chained(&view, 1, 3, 8).is_err());
        assert!(impute_chained(&view, 2, 0, 8).is_err());
    }
}
