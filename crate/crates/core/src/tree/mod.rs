//! Conditioning tree ensemble: boosting, leaf assignment and hyperparameter search.

mod gbm;
mod tune;

pub use gbm::{
    fit_gbm, fit_gbm_with, majority_class, Ensemble, FeatureInfo, FeatureKind, GbmParams, LeafIndexMatrix, Node,
    Objective, SplitRule, TargetSpec, Tree, MIN_ROWS,
};
pub use tune::{sample_params, tune_hyperparams, weighted_f1, TrialRecord, TuneResult};

/// Leaf ids of every row for every tree of `e`.
pub fn apply_leaves(e: &Ensemble, t: &crate::dataset::Table) -> crate::Result<LeafIndexMatrix> {
    e.apply_leaves(t)
}

pub fn predict(e: &Ensemble, t: &crate::dataset::Table) -> crate::Result<Vec<f64>> {
    e.predict(t)
}
