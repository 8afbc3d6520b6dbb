use rand::seq::index::sample;
use rand::Rng;

use crate::quantizer::VocabLayout;

fn draw_ratio(range: [f64; 2], rng: &mut impl Rng) -> f64 {
    if range[0] >= range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// `floor(ratio * n + u)` with `u ~ U[0, 1)`, an unbiased integer count.
fn stochastic_count(ratio: f64, n: usize, rng: &mut impl Rng) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    if ratio >= 1.0 {
        return n;
    }
    ((ratio * n as f64 + rng.random::<f64>()).floor() as usize).min(n)
}

/// Masks one sequence in place: draws a tree ratio and a value ratio, masks
/// that share of leaf and value positions, then swaps the mask bits of any
/// numeric column whose bin token is visible while its quantile token is
/// masked. BOS and EOS are never touched.
pub fn mask_sequence(seq: &mut [u32], layout: &VocabLayout, tree_range: [f64; 2], value_range: [f64; 2], rng: &mut impl Rng) {
    let t = layout.n_trees();
    let n_val = layout.slots().len();
    debug_assert_eq!(seq.len(), layout.seq_len());
    let tree_ratio = draw_ratio(tree_range, rng);
    let value_ratio = draw_ratio(value_range, rng);
    let mut masked = vec![false; seq.len()];
    let k = stochastic_count(tree_ratio, t, rng);
    for i in sample(rng, t, k) {
        masked[1 + i] = true;
    }
    let k = stochastic_count(value_ratio, n_val, rng);
    for i in sample(rng, n_val, k) {
        masked[1 + t + i] = true;
    }
    for (bin, quant) in layout.numeric_pairs() {
        if !masked[bin] && masked[quant] {
            masked.swap(bin, quant);
        }
    }
    let mask = layout.mask();
    for (tok, m) in seq.iter_mut().zip(masked) {
        if m {
            *tok = mask;
        }
    }
}

/// Masked copy of a row-major batch of sequences; the input is the target.
pub fn apply_mask(batch: &[u32], layout: &VocabLayout, tree_range: [f64; 2], value_range: [f64; 2], rng: &mut impl Rng) -> Vec<u32> {
    let mut out = batch.to_vec();
    for seq in out.chunks_exact_mut(layout.seq_len()) {
        mask_sequence(seq, layout, tree_range, value_range, rng);
    }
    out
}
