//! Mann–Whitney U test with midranks for ties.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Alternative hypothesis about the first sample relative to the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwuMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// U statistic of the first sample: pairs with `a > b`, ties counted half.
    pub u: f64,
    pub p: f64,
    pub method: MwuMethod,
}

/// Largest smaller-sample size handled by exact enumeration.
pub const EXACT_MAX_SMALL: usize = 8;
/// Exact enumeration is skipped above this pooled size (its table grows as n^2 per item).
const EXACT_MAX_TOTAL: usize = 400;

/// Midranks (1-based, ties share their mean rank) of the pooled sample.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney U needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("Mann-Whitney U input contains NaN"));
    }
    Ok(())
}

fn pooled_ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let na = a.len() as f64;
    let u = ranks[..a.len()].iter().sum::<f64>() - na * (na + 1.0) / 2.0;
    (ranks, u)
}

/// Chooses the exact path for small samples and the normal approximation otherwise.
pub fn mwu(a: &[f64], b: &[f64], alt: Alternative) -> Result<MwuResult> {
    let small = a.len().min(b.len());
    if small <= EXACT_MAX_SMALL && a.len() + b.len() <= EXACT_MAX_TOTAL {
        mwu_exact(a, b, alt)
    } else {
        mwu_normal(a, b, alt)
    }
}

pub fn mwu_p(a: &[f64], b: &[f64], alt: Alternative) -> Result<f64> {
    Ok(mwu(a, b, alt)?.p)
}

/// Exact permutation distribution of the rank sum of `a`, conditional on the
/// observed ties, by dynamic programming over doubled midranks.
pub fn mwu_exact(a: &[f64], b: &[f64], alt: Alternative) -> Result<MwuResult> {
    check(a, b)?;
    let (ranks, u) = pooled_ranks(a, b);
    let n = ranks.len();
    if n > EXACT_MAX_TOTAL {
        return Err(Error::invalid(format!(
            "exact Mann-Whitney U supports at most {EXACT_MAX_TOTAL} pooled values, got {n}"
        )));
    }
    // Doubled midranks are integers; choose the smaller sample to keep the table narrow.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let (k, flip) = if a.len() <= b.len() { (a.len(), false) } else { (b.len(), true) };
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: number of j-subsets (relative weight, f64) with doubled-rank sum s
    let mut ways = vec![vec![0.0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    for &d in &doubled {
        for j in (1..=k).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (d..=max_sum).rev() {
                cur[s] += prev[s - d];
            }
        }
    }
    let total: f64 = ways[k].iter().sum();
    let observed: usize = if flip {
        doubled[a.len()..].iter().sum()
    } else {
        doubled[..a.len()].iter().sum()
    };
    let le: f64 = ways[k][..=observed].iter().sum::<f64>() / total;
    let ge: f64 = ways[k][observed..].iter().sum::<f64>() / total;
    // The rank sum of `b` moves opposite to that of `a`.
    let (p_less, p_greater) = if flip { (ge, le) } else { (le, ge) };
    let p = match alt {
        Alternative::Less => p_less,
        Alternative::Greater => p_greater,
        Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
    };
    Ok(MwuResult {
        u,
        p: p.clamp(0.0, 1.0),
        method: MwuMethod::Exact,
    })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mwu_normal(a: &[f64], b: &[f64], alt: Alternative) -> Result<MwuResult> {
    check(a, b)?;
    let (ranks, u) = pooled_ranks(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let mean = na * nb / 2.0;
    let var = if n > 1.0 {
        na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    let p = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
        let p_less = std_normal.cdf((u - mean + 0.5) / sd);
        let p_greater = std_normal.sf((u - mean - 0.5) / sd);
        match alt {
            Alternative::Less => p_less,
            Alternative::Greater => p_greater,
            Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
        }
    };
    Ok(MwuResult {
        u,
        p: p.clamp(0.0, 1.0),
        method: MwuMethod::Normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// P-value by listing every way to assign pooled positions to `a`.
    fn enumerate(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| -> f64 {
            let (mut u, mut _k) = (0.0, 0);
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    for j in 0..n {
                        if mask >> j & 1 == 0 {
                            u += if pooled[i] > pooled[j] {
                                1.0
                            } else if pooled[i] == pooled[j] {
                                0.5
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
            u
        };
        let obs = u_of((1u32 << a.len()) - 1);
        let (mut hit, mut all) = (0usize, 0usize);
        for mask in 0u32..1 << n {
            if mask.count_ones() as usize == a.len() {
                all += 1;
                if u_of(mask) <= obs + 1e-9 {
                    hit += 1;
                }
            }
        }
        hit as f64 / all as f64
    }

    #[test]
    fn separated_triples() {
        let r = mwu(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Less).unwrap();
        assert_eq!(r.method, MwuMethod::Exact);
        assert_eq!(r.u, 0.0);
        assert!((r.p - 0.05).abs() < 1e-12);
        let g = mwu(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Greater).unwrap();
        assert!((g.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let a = [1.0, 2.0, 2.0, 5.0];
        let b = [2.0, 3.0, 5.0, 5.0, 7.0];
        let p = mwu_exact(&a, &b, Alternative::Less).unwrap().p;
        assert!((p - enumerate(&a, &b)).abs() < 1e-12);
        // larger sample first exercises the flipped table
        let p2 = mwu_exact(&b, &a, Alternative::Greater).unwrap().p;
        assert!((p - p2).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        for alt in [Alternative::Less, Alternative::Greater] {
            assert!(mwu_exact(&a, &a, alt).unwrap().p >= 0.5);
            assert!(mwu_normal(&a, &a, alt).unwrap().p >= 0.5);
        }
        assert_eq!(mwu_normal(&[1.0; 3], &[1.0; 4], Alternative::Less).unwrap().p, 1.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(mwu(&[], &[1.0], Alternative::Less).is_err());
    }
}
