//! Monotone sigmoid embeddings for quantile tokens.
//!
//! Embedding dimension `d` uses an integer slope factor `S_d` and an offset
//! `O_d`; the value for quantile `i` of `Q` is
//! `sigmoid(4 S_d (i/Q - 1/2) + O_d)`. Each slope value `s` owns `2s`
//! consecutive dimensions whose offsets are evenly spaced over `[-2s, 2s]`.
//! Every dimension is strictly increasing in `i`, so distances between
//! embedded vectors order the same way as distances between quantile ids.

use crate::util::sigmoid;

/// `floor((1 + sqrt(1 + 4d)) / 2)`.
pub fn scale_factor(d: usize) -> usize {
    let s = ((1.0 + (1.0 + 4.0 * d as f64).sqrt()) / 2.0).floor() as usize;
    // exact integer correction in case the float sqrt lands one ulp low or high
    let s = s.max(1);
    if (s + 1) * (s + 1) - (s + 1) <= d {
        s + 1
    } else if s * s - s > d {
        s - 1
    } else {
        s
    }
}

/// `(-4 S^3 + (4d + 2) S) / (2S - 1)` with `S = scale_factor(d)`.
pub fn offset(d: usize) -> f64 {
    let s = scale_factor(d) as f64;
    let d = d as f64;
    (-4.0 * s * s * s + (4.0 * d + 2.0) * s) / (2.0 * s - 1.0)
}

pub fn quantile_embedding_value(i: usize, d: usize, q: usize) -> f64 {
    let s = scale_factor(d) as f64;
    sigmoid(4.0 * s * (i as f64 / q as f64 - 0.5) + offset(d))
}

/// Row-major `Q x D` initialization table for the quantile token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEmbeddingInit {
    q: usize,
    d: usize,
    values: Vec<f64>,
}

impl QuantileEmbeddingInit {
    pub fn new(q: usize, d: usize) -> Self {
        assert!(q >= 1 && d >= 1, "quantile embedding needs Q >= 1 and D >= 1");
        let per_dim: Vec<(f64, f64)> = (0..d).map(|k| (scale_factor(k) as f64, offset(k))).collect();
        let values = (0..q)
            .flat_map(|i| {
                let x = i as f64 / q as f64 - 0.5;
                per_dim.iter().map(move |&(s, o)| sigmoid(4.0 * s * x + o))
            })
            .collect();
        Self { q, d, values }
    }

    pub fn n_quantiles(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, d: usize) -> f64 {
        self.values[i * self.d + d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Literal constructions of the slope and offset sequences: slope `s`
/// repeated `2s` times, and `linspace(-2s, 2s, 2s)` concatenated over `s`,
/// both truncated to `d` entries.
pub fn construction_oracles(d: usize) -> (Vec<usize>, Vec<f64>) {
    let mut scales = Vec::with_capacity(d);
    let mut offsets = Vec::with_capacity(d);
    let mut s = 1usize;
    while scales.len() < d {
        let n = 2 * s;
        let (lo, hi) = (-2.0 * s as f64, 2.0 * s as f64);
        for k in 0..n {
            scales.push(s);
            offsets.push(lo + k as f64 * (hi - lo) / (n - 1) as f64);
        }
        s += 1;
    }
    scales.truncate(d);
    offsets.truncate(d);
    (scales, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_factor_values() {
        assert_eq!(scale_factor(0), 1);
        assert_eq!(scale_factor(6), 3);
        let first: Vec<usize> = (0..12).map(scale_factor).collect();
        assert_eq!(first, vec![1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn offset_values() {
        assert_eq!(offset(0), -2.0);
        assert_eq!(offset(1), 2.0);
        assert_eq!(offset(2), -4.0);
        assert_eq!(offset(5), 4.0);
        for d in 0..2000 {
            let s = scale_factor(d) as f64;
            let o = offset(d);
            assert!(o >= -2.0 * s - 1e-9 && o <= 2.0 * s + 1e-9);
        }
    }

    #[test]
    fn closed_forms_match_constructions() {
        let (scales, offsets) = construction_oracles(512);
        for d in 0..512 {
            assert_eq!(scales[d], scale_factor(d));
            assert!((offsets[d] - offset(d)).abs() <= 1e-12, "d={d}");
        }
        let (s12, _) = construction_oracles(12);
        assert_eq!(s12, (0..12).map(scale_factor).collect::<Vec<_>>());
    }

    #[test]
    fn large_d_integer_exactness() {
        // perfect squares of the form 1 + 4d land exactly on slope boundaries
        for s in 1..2000usize {
            assert_eq!(scale_factor(s * s - s), s);
            assert_eq!(scale_factor(s * s + s - 1), s);
        }
    }

    #[test]
    fn spot_values() {
        let v = quantile_embedding_value(500, 0, 1000);
        assert!((v - sigmoid(-2.0)).abs() < 1e-15);
        assert!((v - 0.119_202_922_022_118).abs() < 1e-12);
        let v0 = quantile_embedding_value(0, 0, 1000);
        assert!((v0 - 0.017_986_209_962_091_6).abs() < 1e-12);
    }

    #[test]
    fn small_table_matches_formula() {
        let t = QuantileEmbeddingInit::new(2, 2);
        for i in 0..2 {
            for d in 0..2 {
                assert_eq!(t.get(i, d), quantile_embedding_value(i, d, 2));
            }
        }
        // hand evaluation: d=0 => S=1, O=-2; d=1 => S=1, O=2
        assert!((t.get(0, 0) - sigmoid(-4.0)).abs() < 1e-15);
        assert!((t.get(1, 1) - sigmoid(2.0)).abs() < 1e-15);
    }

    #[test]
    fn strictly_increasing_per_dimension() {
        let t = QuantileEmbeddingInit::new(1000, 64);
        for d in 0..64 {
            for i in 1..1000 {
                assert!(t.get(i, d) > t.get(i - 1, d));
                assert!(t.get(i, d) > 0.0 && t.get(i, d) < 1.0);
            }
        }
    }
}
