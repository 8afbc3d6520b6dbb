//! Per-token training objective.
//!
//! Non-quantile targets use plain cross entropy over the whole vocabulary.
//! Quantile targets use an ordinal cross entropy over the position's quantile
//! group, whose weights `w_ti = 1 + m - exp(-(t-i)^2 / (V sigma)^2)` grow with
//! the distance between the predicted and the target class, plus a
//! valid-group term that pulls probability mass into the group. Weights enter
//! both numerator and denominator, so the ordinal loss is computed as a cross
//! entropy over the shifted logits `z_i + ln w_ti`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrdinalWeightConfig {
    pub sigma: f64,
    pub min_weight: f64,
    /// Normalizer `V` of the distance; the shared quantile family size.
    pub v_group: usize,
}

impl OrdinalWeightConfig {
    pub fn new(v_group: usize) -> Self {
        Self {
            sigma: 0.005,
            min_weight: 0.5,
            v_group,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.min_weight > 0.0 && self.min_weight <= 1.0) {
            return Err(Error::Config(format!(
                "min weight must be in (0, 1], got {}",
                self.min_weight
            )));
        }
        if self.v_group == 0 {
            return Err(Error::Config("ordinal group size must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn ordinal_weight(t: usize, i: usize, cfg: &OrdinalWeightConfig) -> f64 {
    let dist = t as f64 - i as f64;
    let width = cfg.v_group as f64 * cfg.sigma;
    1.0 + cfg.min_weight - (-(dist * dist) / (width * width)).exp()
}

/// `-log softmax(z)[t]`.
pub fn cel(z: &[f64], t: usize) -> f64 {
    log_sum_exp(z.iter().copied()) - z[t]
}

pub fn cel_grad(z: &[f64], t: usize) -> Vec<f64> {
    let mut g = softmax(z);
    g[t] -= 1.0;
    g
}

/// `-log(w_tt e^{z_t} / sum_i w_ti e^{z_i})` over a group of logits.
pub fn ocel(z: &[f64], t: usize, cfg: &OrdinalWeightConfig) -> f64 {
    let shifted = weighted_logits(z, t, cfg);
    cel(&shifted, t)
}

/// Same as [`ocel`] with arbitrary positive weights `w[i]` for the target `t`.
pub fn weighted_ce(z: &[f64], t: usize, w: &[f64]) -> f64 {
    let shifted: Vec<f64> = z.iter().zip(w).map(|(z, w)| z + w.ln()).collect();
    cel(&shifted, t)
}

pub fn ocel_grad(z: &[f64], t: usize, cfg: &OrdinalWeightConfig) -> Vec<f64> {
    cel_grad(&weighted_logits(z, t, cfg), t)
}

fn weighted_logits(z: &[f64], t: usize, cfg: &OrdinalWeightConfig) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(i, &zi)| zi + ordinal_weight(t, i, cfg).ln())
        .collect()
}

/// `-log(sum_{i in group} e^{z_i} / sum_i e^{z_i})`.
pub fn valid_group_loss(z: &[f64], group: Range<usize>) -> f64 {
    log_sum_exp(z.iter().copied()) - log_sum_exp(z[group].iter().copied())
}

pub fn valid_group_grad(z: &[f64], group: Range<usize>) -> Vec<f64> {
    let mut g = softmax(z);
    let inner = softmax(&z[group.clone()]);
    for (gi, pi) in g[group].iter_mut().zip(inner) {
        *gi -= pi;
    }
    g
}

/// How the target at a position is scored.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenContext {
    Plain,
    Quantile { group: Range<usize> },
}

/// Loss for one token: cross entropy, or ordinal loss on the quantile group
/// plus the valid-group term when the position holds a quantile token.
pub fn token_loss(z: &[f64], t: usize, ctx: &TokenContext, cfg: &OrdinalWeightConfig) -> Result<f64> {
    match ctx {
        TokenContext::Plain => Ok(cel(z, t)),
        TokenContext::Quantile { group } => {
            check_group(z, t, group)?;
            Ok(ocel(&z[group.clone()], t - group.start, cfg) + valid_group_loss(z, group.clone()))
        }
    }
}

pub fn token_loss_grad(
    z: &[f64],
    t: usize,
    ctx: &TokenContext,
    cfg: &OrdinalWeightConfig,
) -> Result<Vec<f64>> {
    match ctx {
        TokenContext::Plain => Ok(cel_grad(z, t)),
        TokenContext::Quantile { group } => {
            check_group(z, t, group)?;
            let mut g = valid_group_grad(z, group.clone());
            let og = ocel_grad(&z[group.clone()], t - group.start, cfg);
            for (gi, oi) in g[group.clone()].iter_mut().zip(og) {
                *gi += oi;
            }
            Ok(g)
        }
    }
}

fn check_group(z: &[f64], t: usize, group: &Range<usize>) -> Result<()> {
    if group.is_empty() || group.end > z.len() {
        return Err(Error::invalid(format!(
            "quantile group {group:?} invalid for {} logits",
            z.len()
        )));
    }
    if !group.contains(&t) {
        return Err(Error::invalid(format!(
            "quantile target {t} outside group {group:?}"
        )));
    }
    Ok(())
}

/// Fused loss and gradient, writing `scale * dL/dz` into `grad_out`. This is
/// the hot path used by the transformer.
pub(crate) fn token_loss_and_grad<R: num_traits::Float>(
    z: &[R],
    t: usize,
    group: Option<&Range<usize>>,
    cfg: &OrdinalWeightConfig,
    scale: f64,
    grad_out: &mut [R],
    scratch: &mut Vec<f64>,
) -> f64 {
    let cast = |v: f64| R::from(v).expect("finite cast");
    let v = z.len();
    scratch.clear();
    scratch.extend(z.iter().map(|v| v.to_f64().expect("finite logit")));
    let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // second half of the scratch holds exp(z - max), reused for the softmax
    scratch.extend_from_within(..v);
    let (zs, ez) = scratch.split_at_mut(v);
    let mut sum = 0.0;
    for e in ez.iter_mut() {
        *e = (*e - max).exp();
        sum += *e;
    }
    let lse_all = max + sum.ln();
    let inv = scale / sum;
    for (g, &e) in grad_out.iter_mut().zip(ez.iter()) {
        *g = cast(inv * e);
    }
    grad_out[t] = grad_out[t] - cast(scale);
    let zs = &*zs;
    match group {
        None => lse_all - zs[t],
        Some(group) => {
            let zg = &zs[group.clone()];
            let lse_group = log_sum_exp(zg.iter().copied());
            let tt = t - group.start;
            let shifted: Vec<f64> = zg
                .iter()
                .enumerate()
                .map(|(i, &zi)| zi + ordinal_weight(tt, i, cfg).ln())
                .collect();
            let lse_shift = log_sum_exp(shifted.iter().copied());
            for (k, i) in group.clone().enumerate() {
                let inner = (zg[k] - lse_group).exp();
                let weighted = (shifted[k] - lse_shift).exp();
                grad_out[i] = grad_out[i] + cast(scale * (weighted - inner));
            }
            (lse_shift - shifted[tt]) + (lse_all - lse_group)
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z.iter().copied());
    z.iter().map(|&v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn weight_spot_values() {
        let cfg = OrdinalWeightConfig::new(1000);
        assert_eq!(ordinal_weight(3, 3, &cfg), 0.5);
        assert!(close(ordinal_weight(0, 999, &cfg), 1.5, 1e-12));
        assert!(close(ordinal_weight(10, 5, &cfg), 1.5 - (-1.0f64).exp(), 1e-12));
        for d in 1..20 {
            assert!(ordinal_weight(100, 100 + d, &cfg) > ordinal_weight(100, 100 + d - 1, &cfg));
        }
    }

    #[test]
    fn cel_values() {
        assert!(close(cel(&[0.0, 0.0], 0), std::f64::consts::LN_2, 1e-15));
        let expected = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!(close(cel(&[10.0, 0.0], 0), expected, 1e-15));
        assert!(close(expected, 4.54e-5, 1e-7));
        assert!(close(cel(&[1000.0, 1000.0], 1), std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn ocel_middle_target() {
        let cfg = OrdinalWeightConfig::new(3);
        let l = ocel(&[0.0, 0.0, 0.0], 1, &cfg);
        assert!(close(l, 7f64.ln(), 1e-9), "{l}");
    }

    #[test]
    fn ocel_limit() {
        let cfg = OrdinalWeightConfig::new(10);
        let mut z = vec![0.0; 10];
        z[4] = 60.0;
        assert!(ocel(&z, 4, &cfg) < 1e-20);
    }

    #[test]
    fn group_loss_values() {
        assert_eq!(valid_group_loss(&[1.0, 2.0, 3.0], 0..3), 0.0);
        assert!(close(valid_group_loss(&[0.0; 4], 1..3), std::f64::consts::LN_2, 1e-15));
        assert!(valid_group_loss(&[20.0, 0.0, 0.0, 20.0], 1..3) > 10.0);
    }

    #[test]
    fn dispatch() {
        let cfg = OrdinalWeightConfig::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert_eq!(token_loss(&z, 2, &TokenContext::Plain, &cfg).unwrap(), cel(&z, 2));
        let ctx = TokenContext::Quantile { group: 3..7 };
        let sum = ocel(&z[3..7], 2, &cfg) + valid_group_loss(&z, 3..7);
        assert!(close(token_loss(&z, 5, &ctx, &cfg).unwrap(), sum, 1e-12));
        assert!(token_loss(&z, 1, &ctx, &cfg).is_err());
    }

    #[test]
    fn fused_matches_reference() {
        let cfg = OrdinalWeightConfig::new(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut scratch = Vec::new();
        for case in 0..50 {
            let z: Vec<f64> = (0..12).map(|_| rng.random_range(-4.0..4.0)).collect();
            let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
            let zr: Vec<f64> = zf.iter().map(|&v| v as f64).collect();
            let (ctx, t) = if case % 2 == 0 {
                (TokenContext::Quantile { group: 4..10 }, 4 + case % 6)
            } else {
                (TokenContext::Plain, case % 12)
            };
            let group = match &ctx {
                TokenContext::Quantile { group } => Some(group.clone()),
                TokenContext::Plain => None,
            };
            let mut g = vec![0f32; 12];
            let l = token_loss_and_grad(&zf, t, group.as_ref(), &cfg, 0.5, &mut g, &mut scratch);
            assert!(close(l, token_loss(&zr, t, &ctx, &cfg).unwrap(), 1e-9));
            let reference = token_loss_grad(&zr, t, &ctx, &cfg).unwrap();
            for (a, b) in g.iter().zip(reference) {
                assert!(close(*a as f64, 0.5 * b, 1e-6));
            }
        }
    }
}
