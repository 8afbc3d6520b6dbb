//! Seeded random search with 3-fold cross-validation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gbm::{fit_gbm_with, majority_class, GbmParams, TargetSpec};
use crate::dataset::{drop_missing, ColumnKind, Table};
use crate::error::{Error, Result};

const FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub params: GbmParams,
    /// Mean held-out score; higher is better.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: GbmParams,
    pub best_score: f64,
    pub trials: Vec<TrialRecord>,
}

fn stepped(rng: &mut impl Rng, lo: usize, hi: usize, step: usize) -> usize {
    lo + step * rng.random_range(0..=(hi - lo) / step)
}

/// One draw from the search space.
pub fn sample_params(rng: &mut impl Rng) -> GbmParams {
    let (lo, hi) = (0.01f64.ln(), 0.3f64.ln());
    GbmParams {
        learning_rate: rng.random_range(lo..=hi).exp(),
        n_trees: stepped(rng, 50, 250, 50),
        max_depth: rng.random_range(3..=10),
        max_leaves: stepped(rng, 20, 100, 5),
        min_samples_leaf: stepped(rng, 10, 50, 5),
        feature_fraction: rng.random_range(0.6..=1.0),
        bagging_fraction: rng.random_range(0.6..=1.0),
        min_split_gain: rng.random_range(0.0..=1.0),
    }
}

/// Support-weighted F1 over the two classes of a binary labelling.
pub fn weighted_f1(truth: &[bool], pred: &[bool]) -> f64 {
    let n = truth.len();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for class in [true, false] {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == class && **p == class).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != class && **p == class).count() as f64;
        let fnc = truth.iter().zip(pred).filter(|(t, p)| **t == class && **p != class).count() as f64;
        let support = tp + fnc;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnc) };
        total += support * f1;
    }
    total / n as f64
}

/// Evaluates `trials` sampled configurations and returns the best one with
/// the full trial log.
pub fn tune_hyperparams(t: &Table, target: &str, trials: usize, seed: u64) -> Result<TuneResult> {
    if trials == 0 {
        return Err(Error::Config("tuning needs at least one trial".into()));
    }
    let t = drop_missing(t);
    let tidx = t
        .schema()
        .index_of(target)
        .ok_or_else(|| Error::Schema(format!("target {target:?} is not a column")))?;
    let spec = match t.schema().columns[tidx].kind {
        ColumnKind::Numeric => TargetSpec::Numeric,
        ColumnKind::Categorical => TargetSpec::Class {
            positive: majority_class(&t, tidx).ok_or_else(|| Error::invalid("target column has no values"))?,
        },
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..t.n_rows()).collect();
    order.shuffle(&mut rng);
    let folds: Vec<(Table, Table)> = (0..FOLDS)
        .map(|f| {
            let (mut train, mut valid) = (Vec::new(), Vec::new());
            for (k, &i) in order.iter().enumerate() {
                if k % FOLDS == f {
                    valid.push(i);
                } else {
                    train.push(i);
                }
            }
            (t.select_rows(&train), t.select_rows(&valid))
        })
        .collect();

    let mut log = Vec::with_capacity(trials);
    for trial in 0..trials {
        let params = sample_params(&mut rng);
        let mut total = 0.0;
        for (f, (train, valid)) in folds.iter().enumerate() {
            let fit_seed = crate::mix_seed(seed, (trial * FOLDS + f) as u64 + 1);
            let e = fit_gbm_with(train, target, spec.clone(), &params, fit_seed)?;
            let pred = e.predict(valid)?;
            total += match &spec {
                TargetSpec::Class { positive } => {
                    let truth: Vec<bool> = valid
                        .column(tidx)
                        .map(|c| c.as_cat() == Some(positive.as_str()))
                        .collect();
                    let guess: Vec<bool> = pred.iter().map(|&p| p >= 0.5).collect();
                    weighted_f1(&truth, &guess)
                }
                TargetSpec::Numeric => {
                    let truth = valid.column(tidx).map(|c| c.as_num().unwrap_or(f64::NAN));
                    let mse = truth.zip(&pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / pred.len() as f64;
                    -mse
                }
            };
        }
        let score = total / FOLDS as f64;
        log::debug!("tuning trial {trial}: score {score:.5}");
        log.push(TrialRecord { params, score });
    }

    let best = log
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.score > log[b].score { i } else { b });
    Ok(TuneResult {
        best: log[best].params.clone(),
        best_score: log[best].score,
        trials: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_perfect_and_inverted() {
        let t = [true, false, true, true];
        assert_eq!(weighted_f1(&t, &t), 1.0);
        let inv: Vec<bool> = t.iter().map(|b| !b).collect();
        assert_eq!(weighted_f1(&t, &inv), 0.0);
    }

    #[test]
    fn sampled_params_lie_in_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = sample_params(&mut rng);
            p.validate().unwrap();
            assert!((0.01 - 1e-12..=0.3 + 1e-12).contains(&p.learning_rate));
            assert!(p.n_trees % 50 == 0 && (50..=250).contains(&p.n_trees));
            assert!((3..=10).contains(&p.max_depth));
            assert!(p.max_leaves % 5 == 0 && (20..=100).contains(&p.max_leaves));
            assert!(p.min_samples_leaf % 5 == 0 && (10..=50).contains(&p.min_samples_leaf));
        }
    }
}
