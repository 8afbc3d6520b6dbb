//! Constrained autoregressive sampling from a trained generator pair.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Table;
use crate::error::{Error, Result};
use crate::generator::TrainedGenerator;
use crate::quantizer::{PositionKind, SlotKind};
use crate::transformer::{mask_sequence, KvDecoder, ModelParameters, Preset};

/// Rows decoded together by one incremental decoder.
const DECODE_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature_categorical: f64,
    /// Applies to both bin and quantile tokens.
    pub temperature_numeric: f64,
    /// Share of leaf prompt tokens replaced by MASK, drawn per row.
    pub tree_mask: [f64; 2],
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature_categorical: 2.0,
            temperature_numeric: 1.0,
            tree_mask: [0.5, 0.75],
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::NoMask => Self {
                temperature_categorical: 0.2,
                temperature_numeric: 0.1,
                tree_mask: [0.0, 0.0],
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_categorical > 0.0) || !(self.temperature_numeric > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must be positive, got {} and {}",
                self.temperature_categorical, self.temperature_numeric
            )));
        }
        let r = self.tree_mask;
        if !((0.0..=1.0).contains(&r[0]) && (0.0..=1.0).contains(&r[1]) && r[0] <= r[1]) {
            return Err(Error::Config(format!("invalid prompt mask range {r:?}")));
        }
        Ok(())
    }
}

/// Samples a token from `valid` only: logits outside it are discarded, the
/// rest are divided by `temperature` and normalized.
pub fn constrained_sample_token<T: Copy + Into<f64>>(
    logits: &[T],
    valid: Range<u32>,
    temperature: f64,
    rng: &mut impl Rng,
) -> u32 {
    assert!(!valid.is_empty(), "empty valid token set");
    assert!(valid.end as usize <= logits.len(), "valid set exceeds vocabulary");
    assert!(temperature > 0.0, "temperature must be positive");
    let z: Vec<f64> = logits[valid.start as usize..valid.end as usize]
        .iter()
        .map(|&v| v.into() / temperature)
        .collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "no finite logit among valid tokens");
    let weights: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return valid.start + k as u32;
        }
        u -= w;
    }
    // rounding fell through: take the last token with positive weight
    let last = weights.iter().rposition(|&w| w > 0.0).expect("max has weight 1");
    valid.start + last as u32
}

/// Sequences produced by sampling, before decoding.
pub struct SampledSequences {
    pub sequences: Vec<u32>,
    pub seq_len: usize,
    /// Which generator (0 or 1) produced each row.
    pub source: Vec<u8>,
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn decode_block(
    g: &TrainedGenerator,
    model: &ModelParameters<f32>,
    leaves: &[u32],
    rows: Range<usize>,
    gc: &GenerationConfig,
) -> Result<Vec<u32>> {
    let layout = &g.layout;
    let l = layout.seq_len();
    let t = layout.n_trees();
    let n_leaf_rows = leaves.len() / t.max(1);
    let b = rows.len();
    let mut rngs: Vec<ChaCha8Rng> = rows.clone().map(|r| row_rng(gc.seed, r)).collect();
    let mut seqs = vec![0u32; b * l];
    let filler: Vec<u32> = layout.slots().iter().map(|_| 1).collect();
    for (s, rng) in rngs.iter_mut().enumerate() {
        let pick = rng.random_range(0..n_leaf_rows);
        let mut seq = layout.build_sequence(&leaves[pick * t..(pick + 1) * t], &filler)?;
        mask_sequence(&mut seq, layout, gc.tree_mask, [0.0, 0.0], rng);
        seqs[s * l..(s + 1) * l].copy_from_slice(&seq);
    }

    let mut dec = KvDecoder::new(model, b);
    let mut feed = vec![0u32; b];
    for pos in 0..l - 2 {
        for s in 0..b {
            feed[s] = seqs[s * l + pos];
        }
        let logits = dec.step(&feed)?;
        let next = pos + 1;
        if let PositionKind::Value { kind, .. } = layout.position_kind(next) {
            let temp = match kind {
                SlotKind::Cat => gc.temperature_categorical,
                SlotKind::Bin | SlotKind::Quant => gc.temperature_numeric,
            };
            let valid = layout.valid_vocab_at(next);
            let v = layout.vocab_size();
            for (s, rng) in rngs.iter_mut().enumerate() {
                seqs[s * l + next] = constrained_sample_token(&logits[s * v..(s + 1) * v], valid.clone(), temp, rng);
            }
        }
    }
    for s in 0..b {
        seqs[s * l + l - 1] = layout.eos();
    }
    Ok(seqs)
}

/// Raw token sequences for `n_rows` rows: the first `floor(n/2)` come from
/// the first generator and the rest from the second, each prompted with
/// leaf rows drawn from its own half of the training leaves.
pub fn sample_sequences(g: &TrainedGenerator, n_rows: usize, gc: &GenerationConfig) -> Result<SampledSequences> {
    if n_rows == 0 {
        return Err(Error::invalid("number of rows to generate must be at least 1"));
    }
    gc.validate()?;
    let n1 = n_rows / 2;
    let mut blocks: Vec<(usize, Range<usize>)> = Vec::new();
    for (j, span) in [(0usize, 0..n1), (1, n1..n_rows)] {
        let mut s = span.start;
        while s < span.end {
            let e = (s + DECODE_BLOCK).min(span.end);
            blocks.push((j, s..e));
            s = e;
        }
    }
    let parts: Vec<Result<Vec<u32>>> = blocks
        .par_iter()
        .map(|(j, rows)| decode_block(g, &g.models[*j], &g.leaf_splits[*j], rows.clone(), gc))
        .collect();
    let mut sequences = Vec::with_capacity(n_rows * g.layout.seq_len());
    for p in parts {
        sequences.extend(p?);
    }
    let source = (0..n_rows).map(|r| u8::from(r >= n1)).collect();
    Ok(SampledSequences {
        sequences,
        seq_len: g.layout.seq_len(),
        source,
    })
}

/// Generates and decodes `n_rows` rows in the training schema.
pub fn sample_rows(g: &TrainedGenerator, n_rows: usize, gc: &GenerationConfig) -> Result<Table> {
    let sampled = sample_sequences(g, n_rows, gc)?;
    let rows = sampled
        .sequences
        .chunks_exact(sampled.seq_len)
        .map(|seq| g.tokenizer.decode_row(&g.layout.value_ids(seq)?))
        .collect::<Result<Vec<_>>>()?;
    Table::new(g.schema.clone(), rows)
}

/// Empirical distribution of a multiset of rows.
pub fn empirical_distribution<K: Ord + Clone>(rows: &[K]) -> BTreeMap<K, f64> {
    let mut out = BTreeMap::new();
    let w = 1.0 / rows.len() as f64;
    for r in rows {
        *out.entry(r.clone()).or_insert(0.0) += w;
    }
    out
}

/// Mixture of the empirical distributions of `partitions` with `weights`.
pub fn mixture_distribution<K: Ord + Clone>(partitions: &[&[K]], weights: &[f64]) -> Result<BTreeMap<K, f64>> {
    if partitions.len() != weights.len() || partitions.is_empty() {
        return Err(Error::invalid("one weight per nonempty partition is required"));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid(format!("mixture weights {weights:?} must be nonnegative and sum to 1")));
    }
    let mut out = BTreeMap::new();
    for (part, &w) in partitions.iter().zip(weights) {
        if part.is_empty() {
            return Err(Error::invalid("empty partition"));
        }
        for (k, p) in empirical_distribution(part) {
            *out.entry(k).or_insert(0.0) += w * p;
        }
    }
    Ok(out)
}

/// Total variation distance `0.5 * sum |p - q|` over the union of supports.
pub fn total_variation<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut tv = 0.0;
    for (k, a) in p {
        tv += (a - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, b) in q {
        if !p.contains_key(k) {
            tv += b.abs();
        }
    }
    0.5 * tv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_always_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = [100.0f32, -5.0, 3.0, 0.0];
        for _ in 0..100 {
            assert_eq!(constrained_sample_token(&z, 1..2, 1.0, &mut rng), 1);
        }
    }

    #[test]
    fn uniform_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = [9.0f64, 0.0, 0.0, 0.0, 0.0, 9.0];
        let mut counts = [0usize; 6];
        for _ in 0..100_000 {
            counts[constrained_sample_token(&z, 1..5, 1.0, &mut rng) as usize] += 1;
        }
        assert_eq!(counts[0] + counts[5], 0);
        for c in &counts[1..5] {
            assert!((*c as f64 / 1e5 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn near_zero_temperature_is_argmax() {
        let z = [0.1f64, 0.5, 0.3];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(constrained_sample_token(&z, 0..3, 1e-4, &mut rng), 1);
        }
    }

    #[test]
    fn mixture_of_halves_is_the_whole() {
        let rows = vec!["a", "b", "b", "c"];
        let full = empirical_distribution(&rows);
        let mix = mixture_distribution(&[&rows[..2], &rows[2..]], &[0.5, 0.5]).unwrap();
        assert!(total_variation(&full, &mix) < 1e-15);
        let uneven = mixture_distribution(&[&rows[..1], &rows[1..]], &[0.25, 0.75]).unwrap();
        assert!(total_variation(&full, &uneven) < 1e-15);
        assert!(mixture_distribution(&[&rows[..]], &[0.9]).is_err());
    }
}
