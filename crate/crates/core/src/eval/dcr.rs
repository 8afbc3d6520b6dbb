//! Distance to closest record: are synthetic rows closer to the training rows
//! than genuinely unseen rows are?

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{drop_missing, Cell, ColumnKind, Table};
use crate::error::{Error, Result};

use super::mwu::{mwu, Alternative, MwuMethod};

pub const TRANSFORM_QUANTILES: usize = 1000;

/// Maps a numeric column to [0, 1] through its empirical quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    quantiles: Vec<f64>,
}

impl QuantileTransform {
    /// Uses `min(n_quantiles, n)` equally spaced levels of `values`.
    pub fn fit(values: &[f64], n_quantiles: usize) -> Result<Self> {
        if values.is_empty() || n_quantiles == 0 {
            return Err(Error::invalid("quantile transform needs values and at least one level"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = n_quantiles.min(sorted.len());
        let quantiles = (0..m)
            .map(|k| {
                if m == 1 {
                    return sorted[0];
                }
                let h = k as f64 / (m - 1) as f64 * (sorted.len() - 1) as f64;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(sorted.len() - 1);
                sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
            })
            .collect();
        Ok(Self { quantiles })
    }

    fn reference(&self, k: usize) -> f64 {
        let m = self.quantiles.len();
        if m == 1 {
            0.5
        } else {
            k as f64 / (m - 1) as f64
        }
    }

    /// Piecewise-linear interpolation between quantiles; a value equal to a run
    /// of tied quantiles maps to the middle of their reference levels.
    pub fn transform(&self, v: f64) -> f64 {
        let q = &self.quantiles;
        let lo = q.partition_point(|x| *x < v);
        let hi = q.partition_point(|x| *x <= v);
        if lo < hi {
            return 0.5 * (self.reference(lo) + self.reference(hi - 1));
        }
        if lo == 0 {
            return 0.0;
        }
        if lo == q.len() {
            return 1.0;
        }
        let (a, b) = (q[lo - 1], q[lo]);
        let f = (v - a) / (b - a);
        self.reference(lo - 1) + f * (self.reference(lo) - self.reference(lo - 1))
    }
}

enum Encoder {
    Numeric(QuantileTransform),
    OneHot(Vec<String>),
}

struct RowEncoder {
    columns: Vec<Encoder>,
    width: usize,
}

impl RowEncoder {
    fn fit(train: &Table) -> Result<Self> {
        let mut columns = Vec::with_capacity(train.n_cols());
        let mut width = 0;
        for (c, spec) in train.schema().columns.iter().enumerate() {
            match spec.kind {
                ColumnKind::Numeric => {
                    columns.push(Encoder::Numeric(QuantileTransform::fit(
                        &train.numeric_values(c),
                        TRANSFORM_QUANTILES,
                    )?));
                    width += 1;
                }
                ColumnKind::Categorical => {
                    let cats: BTreeSet<String> = train.column(c).filter_map(Cell::as_cat).map(str::to_owned).collect();
                    width += cats.len();
                    columns.push(Encoder::OneHot(cats.into_iter().collect()));
                }
            }
        }
        Ok(Self { columns, width })
    }

    fn encode(&self, t: &Table) -> Vec<Vec<f64>> {
        t.rows()
            .iter()
            .map(|row| {
                let mut x = Vec::with_capacity(self.width);
                for (enc, cell) in self.columns.iter().zip(row) {
                    match enc {
                        Encoder::Numeric(qt) => x.push(qt.transform(cell.as_num().unwrap_or(f64::NAN))),
                        Encoder::OneHot(cats) => {
                            let hit = cell.as_cat().and_then(|s| cats.binary_search_by(|c| c.as_str().cmp(s)).ok());
                            x.extend((0..cats.len()).map(|k| if Some(k) == hit { 1.0 } else { 0.0 }));
                        }
                    }
                }
                x
            })
            .collect()
    }
}

/// `1 - cos(a, b)`, defined as 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).max(0.0)
}

fn closest_distances(queries: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<f64> {
    queries
        .par_iter()
        .map(|q| {
            reference
                .iter()
                .map(|r| cosine_distance(q, r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrReport {
    /// One-sided p-value for "synthetic rows are closer to training rows than test rows are".
    pub p: f64,
    pub u: f64,
    pub method: MwuMethod,
    pub n_train: usize,
    pub n_test: usize,
    /// Synthetic rows compared (subsampled to the test size when larger).
    pub n_synth: usize,
    pub median_test_distance: f64,
    pub median_synth_distance: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Minimum cosine distances to `train` after a train-fitted quantile transform
/// and one-hot encoding, compared by a one-sided Mann–Whitney U test.
pub fn dcr_report(train: &Table, test: &Table, synth: &Table, seed: u64) -> Result<DcrReport> {
    let schema = train.schema();
    if !schema.same_layout(test.schema()) || !schema.same_layout(synth.schema()) {
        return Err(Error::Schema("train, test and synthetic tables have different columns".into()));
    }
    let (train, test, synth) = (drop_missing(train), drop_missing(test), drop_missing(synth));
    if train.is_empty() || test.is_empty() || synth.is_empty() {
        return Err(Error::invalid("distance to closest record needs three nonempty tables"));
    }
    let enc = RowEncoder::fit(&train)?;
    let reference = enc.encode(&train);
    let mut d_test = closest_distances(&enc.encode(&test), &reference);
    let mut d_synth = closest_distances(&enc.encode(&synth), &reference);
    // Subsampling the sorted distances keeps the result independent of row order.
    d_synth.sort_by(f64::total_cmp);
    if d_synth.len() > d_test.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, d_synth.len(), d_test.len()).into_vec();
        keep.sort_unstable();
        d_synth = keep.into_iter().map(|i| d_synth[i]).collect();
    }
    d_test.sort_by(f64::total_cmp);
    let res = mwu(&d_synth, &d_test, Alternative::Less)?;
    Ok(DcrReport {
        p: res.p,
        u: res.u,
        method: res.method,
        n_train: train.n_rows(),
        n_test: d_test.len(),
        n_synth: d_synth.len(),
        median_test_distance: median(&d_test),
        median_synth_distance: median(&d_synth),
    })
}

pub fn dcr_test(train: &Table, test: &Table, synth: &Table, seed: u64) -> Result<f64> {
    Ok(dcr_report(train, test, synth, seed)?.p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_reference_points() {
        let qt = QuantileTransform::fit(&[0.0, 1.0, 2.0, 3.0, 4.0], 1000).unwrap();
        assert_eq!(qt.transform(-1.0), 0.0);
        assert_eq!(qt.transform(9.0), 1.0);
        assert_eq!(qt.transform(2.0), 0.5);
        assert!((qt.transform(2.5) - 0.625).abs() < 1e-15);
        let tied = QuantileTransform::fit(&[1.0, 1.0, 1.0, 5.0], 1000).unwrap();
        // three tied levels 0, 1/3, 2/3 share their middle
        assert!((tied.transform(1.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert!(cosine_distance(&[1.0, 2.0], &[2.0, 4.0]).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
