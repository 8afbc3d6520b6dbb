//! Fidelity, privacy and utility scores for a synthetic table.

pub mod dcr;
pub mod fidelity;
pub mod metrics;
pub mod mle;
pub mod mwu;

use serde::{Deserialize, Serialize};

pub use dcr::{cosine_distance, dcr_report, dcr_test, DcrReport, QuantileTransform};
pub use fidelity::{
    decile_edges, ks_statistic, pearson, shape_report, shape_score, trend_report, trend_score, ColumnShape,
    PairTrend, ShapeMetric, ShapeReport, TrendMetric, TrendReport,
};
pub use metrics::{auc_roc, r2, weighted_ovr_auc};
pub use mle::{mle_tstr, MleReport, MleScores, Task};
pub use mwu::{midranks, mwu, mwu_exact, mwu_normal, mwu_p, Alternative, MwuMethod, MwuResult};

use crate::dataset::Table;
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    /// Falls back to the training table's designated target.
    pub target: Option<String>,
    pub skip_mle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub shape: Vec<ColumnShape>,
    pub trend: Vec<PairTrend>,
    pub trend_discretization: String,
    pub dcr: DcrReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mle: Option<MleReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub seed: u64,
    /// Rows in the real training table.
    pub n_real: usize,
    pub n_test: usize,
    pub n_synth: usize,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub shape: f64,
    pub trend: f64,
    pub dcr_p: f64,
    /// Train-on-synthetic scores; absent when skipped or no target is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mle: Option<MleScores>,
    pub breakdown: Breakdown,
    pub meta: EvalMeta,
}

/// Shape and trend against `train`, DCR against `train`/`test`, and
/// train-on-synthetic efficacy measured on `test`.
pub fn evaluate(train: &Table, test: &Table, synth: &Table, opts: &EvalOptions) -> Result<EvalReport> {
    let shape = shape_report(train, synth)?;
    let trend = trend_report(train, synth)?;
    let dcr = dcr_report(train, test, synth, opts.seed)?;
    let target = opts.target.clone().or_else(|| train.schema().target.clone());
    let mle = match (&target, opts.skip_mle) {
        (Some(t), false) => Some(mle_tstr(train, synth, test, t, opts.seed)?),
        (None, false) => {
            log::warn!("no target column known; skipping efficacy scores");
            None
        }
        _ => None,
    };
    Ok(EvalReport {
        shape: shape.score,
        trend: trend.score,
        dcr_p: dcr.p,
        mle: mle.as_ref().map(|m| m.tstr),
        meta: EvalMeta {
            seed: opts.seed,
            n_real: train.n_rows(),
            n_test: test.n_rows(),
            n_synth: synth.n_rows(),
            target,
        },
        breakdown: Breakdown {
            shape: shape.columns,
            trend: trend.pairs,
            trend_discretization: trend.numeric_discretization,
            dcr,
            mle,
        },
    })
}
