//! Ranking and regression scores.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::mwu::midranks;

/// Area under the ROC curve from the rank sum of the positives; tied scores
/// get half credit.
pub fn auc_roc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("labels and scores differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes among the labels"));
    }
    let ranks = midranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((r_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// One-versus-rest AUC averaged with weights equal to class support.
/// `scores[c]` holds the scores for `classes[c]`; classes absent from
/// `labels` are skipped.
pub fn weighted_ovr_auc(labels: &[&str], classes: &[String], scores: &[Vec<f64>]) -> Result<f64> {
    if classes.len() != scores.len() {
        return Err(Error::invalid("one score vector per class is required"));
    }
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *support.entry(l).or_default() += 1;
    }
    if support.len() < 2 {
        return Err(Error::invalid("AUC needs at least two classes among the labels"));
    }
    let (mut acc, mut weight) = (0.0, 0.0);
    for (c, s) in classes.iter().zip(scores) {
        let Some(&k) = support.get(c.as_str()) else { continue };
        let y: Vec<bool> = labels.iter().map(|l| *l == c).collect();
        acc += k as f64 * auc_roc(&y, s)?;
        weight += k as f64;
    }
    if weight == 0.0 {
        return Err(Error::invalid("no scored class occurs in the labels"));
    }
    Ok(acc / weight)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::invalid("r2 needs equal-length nonempty inputs"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r2 is undefined for a constant target"));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
