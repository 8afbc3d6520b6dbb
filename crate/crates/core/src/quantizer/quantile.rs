//! Fine-grained quantile binning with per-bin median representatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    /// `n_bins + 1` edges. Strictly increasing, except for a constant column
    /// where both edges equal the single value.
    edges: Vec<f64>,
    representatives: Vec<f64>,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn linear_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl QuantileBins {
    /// Edges are the deduplicated empirical quantiles at levels `j/q`. Interior
    /// edges that would leave a bin without any training value are dropped so
    /// every bin has a median representative.
    pub fn fit(values: &[f64], q: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("quantile binning on empty input"));
        }
        if q == 0 {
            return Err(Error::invalid("quantile binning needs q >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("quantile input must be finite"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if lo == hi {
            return Ok(Self {
                edges: vec![lo, hi],
                representatives: vec![lo],
            });
        }

        let mut candidates: Vec<f64> = (0..=q)
            .map(|j| linear_quantile(&sorted, j as f64 / q as f64))
            .collect();
        candidates.dedup();

        let mut edges = vec![candidates[0]];
        let mut start = 0; // first sorted index inside the open bin
        for &e in &candidates[1..candidates.len() - 1] {
            let end = sorted.partition_point(|&x| x < e);
            if end > start {
                edges.push(e);
                start = end;
            }
        }
        edges.push(hi);

        let representatives = (0..edges.len() - 1)
            .map(|j| {
                let a = sorted.partition_point(|&x| x < edges[j]);
                let b = if j + 2 == edges.len() {
                    sorted.len()
                } else {
                    sorted.partition_point(|&x| x < edges[j + 1])
                };
                median(&sorted[a..b])
            })
            .collect();
        Ok(Self {
            edges,
            representatives,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn representatives(&self) -> &[f64] {
        &self.representatives
    }

    pub fn n_bins(&self) -> usize {
        self.representatives.len()
    }

    /// 0-based bin: bins are `[e_j, e_{j+1})` with the last one closed; values
    /// outside the fitted range clamp to the first or last bin.
    pub fn bin_of(&self, v: f64) -> usize {
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.partition_point(|&e| e <= v)
    }

    pub fn representative(&self, bin: usize) -> f64 {
        self.representatives[bin]
    }

    pub fn width(&self, bin: usize) -> f64 {
        self.edges[bin + 1] - self.edges[bin]
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: numpy-style "linear" percentile written from the
    /// definition h = (n-1)p, x_floor(h) + (h - floor h)(x_ceil(h) - x_floor(h)).
    fn oracle_quantile(xs: &[f64], p: f64) -> f64 {
        let h = (xs.len() as f64 - 1.0) * p;
        let f = h.floor();
        let c = h.ceil();
        xs[f as usize] + (h - f) * (xs[c as usize] - xs[f as usize])
    }

    #[test]
    fn one_to_hundred_quartiles() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let qb = QuantileBins::fit(&xs, 4).unwrap();
        let expected: Vec<f64> = (0..=4).map(|j| oracle_quantile(&xs, j as f64 / 4.0)).collect();
        assert_eq!(expected, vec![1.0, 25.75, 50.5, 75.25, 100.0]);
        assert_eq!(qb.edges(), expected.as_slice());
    }

    #[test]
    fn constant_column() {
        let qb = QuantileBins::fit(&[7.0, 7.0, 7.0], 1000).unwrap();
        assert_eq!(qb.n_bins(), 1);
        assert_eq!(qb.representative(0), 7.0);
        assert_eq!(qb.bin_of(7.0), 0);
        assert_eq!(qb.bin_of(-1.0), 0);
    }

    #[test]
    fn two_values_collapse() {
        let qb = QuantileBins::fit(&[0.0, 1.0], 1000).unwrap();
        assert!(qb.n_bins() <= 2);
        assert_eq!(qb.representative(qb.bin_of(0.0)), 0.0);
        assert_eq!(qb.representative(qb.bin_of(1.0)), 1.0);
    }

    #[test]
    fn rightmost_bin_and_clamping() {
        let qb = QuantileBins {
            edges: vec![0.0, 5.0, 10.0],
            representatives: vec![2.0, 7.0],
        };
        assert_eq!(qb.bin_of(10.0), 1);
        assert_eq!(qb.bin_of(5.0), 1);
        assert_eq!(qb.bin_of(4.999), 0);
        assert_eq!(qb.bin_of(-3.0), 0);
        assert_eq!(qb.bin_of(99.0), 1);
    }

    #[test]
    fn representatives_inside_bins() {
        let xs: Vec<f64> = (0..537).map(|i| ((i * 7919) % 1000) as f64 / 13.0).collect();
        let qb = QuantileBins::fit(&xs, 100).unwrap();
        assert!(qb.edges().windows(2).all(|w| w[0] < w[1]));
        for j in 0..qb.n_bins() {
            let r = qb.representative(j);
            assert!(r >= qb.edges()[j] && r <= qb.edges()[j + 1]);
        }
        for &x in &xs {
            let j = qb.bin_of(x);
            assert!((qb.representative(j) - x).abs() <= qb.width(j));
        }
    }
}
