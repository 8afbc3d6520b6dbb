//! Machine-learning efficacy: train downstream models on one table and score
//! them on held-out real rows.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{drop_missing, Cell, ColumnKind, Table};
use crate::error::{Error, Result};
use crate::tree::{fit_gbm_with, GbmParams, TargetSpec};
use crate::util::sigmoid;

use super::metrics::{r2, weighted_ovr_auc};

const GD_ITERS: usize = 1000;
const GD_L2: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Scored by support-weighted one-versus-rest AUC.
    Classification,
    /// Scored by R².
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleScores {
    /// Logistic (classification) or least-squares (regression) model.
    pub linear: f64,
    pub gbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    pub task: Task,
    pub target: String,
    /// Trained on the synthetic table.
    pub tstr: MleScores,
    /// Trained on the real training table.
    pub trtr: MleScores,
    /// `|trtr - tstr| / |trtr|` per model.
    pub relative_error: MleScores,
    /// The synthetic target has a single class; its scores are fixed at 0.5.
    pub degenerate_synth_target: bool,
}

/// Standardized numerics plus one-hot categoricals, fitted on a training table.
struct DesignEncoder {
    numeric: Vec<(usize, f64, f64)>,
    onehot: Vec<(usize, Vec<String>)>,
}

impl DesignEncoder {
    fn fit(t: &Table, target: usize) -> Self {
        let mut numeric = Vec::new();
        let mut onehot = Vec::new();
        for (c, spec) in t.schema().columns.iter().enumerate() {
            if c == target {
                continue;
            }
            match spec.kind {
                ColumnKind::Numeric => {
                    let v = t.numeric_values(c);
                    let n = v.len().max(1) as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                    numeric.push((c, mean, if sd > 0.0 { sd } else { 1.0 }));
                }
                ColumnKind::Categorical => {
                    let cats: BTreeSet<String> = t.column(c).filter_map(Cell::as_cat).map(str::to_owned).collect();
                    onehot.push((c, cats.into_iter().collect()));
                }
            }
        }
        Self { numeric, onehot }
    }

    fn width(&self) -> usize {
        self.numeric.len() + self.onehot.iter().map(|(_, c)| c.len()).sum::<usize>()
    }

    /// Row-major design matrix.
    fn encode(&self, t: &Table) -> Vec<f64> {
        let mut x = Vec::with_capacity(t.n_rows() * self.width());
        for row in t.rows() {
            for &(c, mean, sd) in &self.numeric {
                x.push((row[c].as_num().unwrap_or(mean) - mean) / sd);
            }
            for (c, cats) in &self.onehot {
                let hit = row[*c].as_cat().and_then(|s| cats.binary_search_by(|k| k.as_str().cmp(s)).ok());
                x.extend((0..cats.len()).map(|k| if Some(k) == hit { 1.0 } else { 0.0 }));
            }
        }
        x
    }
}

/// Largest eigenvalue of `[X 1]^T [X 1] / n` by power iteration.
fn lipschitz(x: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 1.0;
    for _ in 0..50 {
        let mut out = vec![0.0; d + 1];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let xv = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xv;
            }
            out[d] += xv;
        }
        let norm = out.iter().map(|a| a * a).sum::<f64>().sqrt() / n as f64;
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = out.iter().map(|a| a / (norm * n as f64)).collect();
    }
    lambda.max(1e-12)
}

/// Full-batch gradient descent on a generalized linear model; returns weights
/// with the intercept last. `logistic` selects the log-loss link.
fn fit_glm(x: &[f64], y: &[f64], d: usize, logistic: bool) -> Vec<f64> {
    let n = y.len();
    let curvature = if logistic { 0.25 } else { 1.0 };
    let step = 1.0 / (curvature * lipschitz(x, n, d) + GD_L2);
    let mut w = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    for _ in 0..GD_ITERS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let z = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d];
            let r = if logistic { sigmoid(z) } else { z } - y[i];
            for (g, a) in grad.iter_mut().zip(row) {
                *g += r * a;
            }
            grad[d] += r;
        }
        for k in 0..=d {
            let reg = if k < d { GD_L2 * w[k] } else { 0.0 };
            w[k] -= step * (grad[k] / n as f64 + reg);
        }
    }
    w
}

fn linear_scores(x: &[f64], n: usize, d: usize, w: &[f64]) -> Vec<f64> {
    if d == 0 {
        return vec![w[0]; n];
    }
    x.chunks_exact(d)
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d])
        .collect()
}

fn classes_of(t: &Table, c: usize) -> Vec<String> {
    let set: BTreeSet<&str> = t.column(c).filter_map(Cell::as_cat).collect();
    set.into_iter().map(str::to_owned).collect()
}

/// Scores per class (one-versus-rest); with two classes one model serves both.
fn class_scores(
    classes: &[String],
    mut fit_one: impl FnMut(&str) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    if classes.len() == 2 {
        let s = fit_one(&classes[0])?;
        let neg = s.iter().map(|v| -v).collect();
        return Ok(vec![s, neg]);
    }
    classes.iter().map(|c| fit_one(c)).collect()
}

fn train_and_score(train: &Table, test: &Table, tidx: usize, task: Task, seed: u64) -> Result<Option<MleScores>> {
    let target = train.schema().columns[tidx].name.clone();
    let enc = DesignEncoder::fit(train, tidx);
    let d = enc.width();
    let (xtr, xte) = (enc.encode(train), enc.encode(test));
    let (ntr, nte) = (train.n_rows(), test.n_rows());
    let params = GbmParams::default();
    match task {
        Task::Classification => {
            let classes = classes_of(train, tidx);
            if classes.len() < 2 {
                return Ok(None);
            }
            let labels: Vec<&str> = test.column(tidx).map(|c| c.as_cat().unwrap_or("")).collect();
            let train_labels: Vec<&str> = train.column(tidx).map(|c| c.as_cat().unwrap_or("")).collect();
            let lin = class_scores(&classes, |c| {
                let y: Vec<f64> = train_labels.iter().map(|l| f64::from(u8::from(*l == c))).collect();
                let w = fit_glm(&xtr, &y, d, true);
                Ok(linear_scores(&xte, nte, d, &w))
            })?;
            let gbm = class_scores(&classes, |c| {
                let spec = TargetSpec::Class { positive: c.to_owned() };
                fit_gbm_with(train, &target, spec, &params, seed)?.raw_scores(test)
            })?;
            Ok(Some(MleScores {
                linear: weighted_ovr_auc(&labels, &classes, &lin)?,
                gbm: weighted_ovr_auc(&labels, &classes, &gbm)?,
            }))
        }
        Task::Regression => {
            let y = train.numeric_values(tidx);
            let (my, sy) = {
                let m = y.iter().sum::<f64>() / ntr as f64;
                let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ntr as f64).sqrt();
                (m, if s > 0.0 { s } else { 1.0 })
            };
            let ys: Vec<f64> = y.iter().map(|v| (v - my) / sy).collect();
            let w = fit_glm(&xtr, &ys, d, false);
            let pred: Vec<f64> = linear_scores(&xte, nte, d, &w).into_iter().map(|v| v * sy + my).collect();
            let truth = test.numeric_values(tidx);
            let gbm_pred = fit_gbm_with(train, &target, TargetSpec::Numeric, &params, seed)?.predict(test)?;
            Ok(Some(MleScores {
                linear: r2(&truth, &pred)?,
                gbm: r2(&truth, &gbm_pred)?,
            }))
        }
    }
}

/// Train-on-synthetic / test-on-real scores next to the train-on-real baseline.
pub fn mle_tstr(real_train: &Table, synth: &Table, real_test: &Table, target: &str, seed: u64) -> Result<MleReport> {
    let schema = real_train.schema();
    if !schema.same_layout(synth.schema()) || !schema.same_layout(real_test.schema()) {
        return Err(Error::Schema("train, synthetic and test tables have different columns".into()));
    }
    let tidx = schema
        .index_of(target)
        .ok_or_else(|| Error::Schema(format!("target {target:?} is not a column")))?;
    let task = match schema.columns[tidx].kind {
        ColumnKind::Categorical => Task::Classification,
        ColumnKind::Numeric => Task::Regression,
    };
    let (real_train, synth, real_test) = (drop_missing(real_train), drop_missing(synth), drop_missing(real_test));
    if real_test.is_empty() {
        return Err(Error::invalid("test table has no complete rows"));
    }
    let trtr = train_and_score(&real_train, &real_test, tidx, task, seed)?
        .ok_or_else(|| Error::invalid("real training target has a single class"))?;
    let (tstr, degenerate) = match train_and_score(&synth, &real_test, tidx, task, seed)? {
        Some(s) => (s, false),
        None => {
            log::warn!("synthetic target {target:?} has a single class; scoring it as chance");
            (MleScores { linear: 0.5, gbm: 0.5 }, true)
        }
    };
    let rel = |a: f64, b: f64| if b == 0.0 { f64::NAN } else { (b - a).abs() / b.abs() };
    Ok(MleReport {
        task,
        target: target.to_owned(),
        relative_error: MleScores {
            linear: rel(tstr.linear, trtr.linear),
            gbm: rel(tstr.gbm, trtr.gbm),
        },
        tstr,
        trtr,
        degenerate_synth_target: degenerate,
    })
}
