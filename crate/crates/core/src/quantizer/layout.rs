//! Token-id address space and per-position vocabulary.
//!
//! Ids are laid out family by family:
//!
//! ```text
//! [0, n_l)                 leaf tokens, shared by all trees
//! [n_l, +n_c)              category tokens
//! [.., +n_b)               k-means bin tokens
//! [.., +n_q)               quantile tokens
//! V-3, V-2, V-1            BOS, EOS, MASK
//! ```
//!
//! A row becomes `[BOS, leaf_1..leaf_T, value slots.., EOS]`. Positions are
//! 0-based throughout this crate.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataTokenizer, SlotKind, ValueSlot};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenFamily {
    Leaf,
    Cat,
    Bin,
    Quant,
    Bos,
    Eos,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionKind {
    Bos,
    Leaf { tree: usize },
    Value { slot: usize, kind: SlotKind, column: usize },
    Eos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    leaf_counts: Vec<usize>,
    slots: Vec<ValueSlot>,
    n_leaf: usize,
    n_cat: usize,
    n_bin: usize,
    n_quant: usize,
}

impl VocabLayout {
    pub fn new(leaf_counts: Vec<usize>, slots: Vec<ValueSlot>) -> Result<Self> {
        if leaf_counts.contains(&0) {
            return Err(Error::invalid("every tree needs at least one leaf"));
        }
        if slots.iter().any(|s| s.size == 0) {
            return Err(Error::invalid("every value slot needs at least one id"));
        }
        let max_of = |kind| {
            slots
                .iter()
                .filter(|s| s.kind == kind)
                .map(|s| s.size)
                .max()
                .unwrap_or(0)
        };
        Ok(Self {
            n_leaf: leaf_counts.iter().copied().max().unwrap_or(0),
            n_cat: max_of(SlotKind::Cat),
            n_bin: max_of(SlotKind::Bin),
            n_quant: max_of(SlotKind::Quant),
            leaf_counts,
            slots,
        })
    }

    pub fn from_tokenizer(leaf_counts: Vec<usize>, tokenizer: &DataTokenizer) -> Result<Self> {
        Self::new(leaf_counts, tokenizer.slots())
    }

    pub fn n_leaf(&self) -> usize {
        self.n_leaf
    }
    pub fn n_cat(&self) -> usize {
        self.n_cat
    }
    pub fn n_bin(&self) -> usize {
        self.n_bin
    }
    pub fn n_quant(&self) -> usize {
        self.n_quant
    }
    pub fn n_trees(&self) -> usize {
        self.leaf_counts.len()
    }
    pub fn leaf_counts(&self) -> &[usize] {
        &self.leaf_counts
    }
    pub fn slots(&self) -> &[ValueSlot] {
        &self.slots
    }

    pub fn vocab_size(&self) -> usize {
        self.n_leaf + self.n_cat + self.n_bin + self.n_quant + 3
    }

    pub fn seq_len(&self) -> usize {
        2 + self.n_trees() + self.slots.len()
    }

    pub fn family_range(&self, family: TokenFamily) -> Range<u32> {
        let cat = self.n_leaf;
        let bin = cat + self.n_cat;
        let quant = bin + self.n_bin;
        let special = quant + self.n_quant;
        let r = match family {
            TokenFamily::Leaf => 0..cat,
            TokenFamily::Cat => cat..bin,
            TokenFamily::Bin => bin..quant,
            TokenFamily::Quant => quant..special,
            TokenFamily::Bos => special..special + 1,
            TokenFamily::Eos => special + 1..special + 2,
            TokenFamily::Mask => special + 2..special + 3,
        };
        r.start as u32..r.end as u32
    }

    pub fn bos(&self) -> u32 {
        self.family_range(TokenFamily::Bos).start
    }
    pub fn eos(&self) -> u32 {
        self.family_range(TokenFamily::Eos).start
    }
    pub fn mask(&self) -> u32 {
        self.family_range(TokenFamily::Mask).start
    }

    pub fn family_of(&self, token: u32) -> Option<TokenFamily> {
        use TokenFamily::*;
        [Leaf, Cat, Bin, Quant, Bos, Eos, Mask]
            .into_iter()
            .find(|f| self.family_range(*f).contains(&token))
    }

    pub fn position_kind(&self, pos: usize) -> PositionKind {
        let t = self.n_trees();
        if pos == 0 {
            PositionKind::Bos
        } else if pos <= t {
            PositionKind::Leaf { tree: pos - 1 }
        } else if pos < self.seq_len() - 1 {
            let slot = pos - t - 1;
            PositionKind::Value {
                slot,
                kind: self.slots[slot].kind,
                column: self.slots[slot].column,
            }
        } else {
            assert!(pos < self.seq_len(), "position {pos} past sequence end");
            PositionKind::Eos
        }
    }

    /// The contiguous set of token ids allowed at `pos`.
    pub fn valid_vocab_at(&self, pos: usize) -> Range<u32> {
        match self.position_kind(pos) {
            PositionKind::Bos => self.family_range(TokenFamily::Bos),
            PositionKind::Eos => self.family_range(TokenFamily::Eos),
            PositionKind::Leaf { tree } => 0..self.leaf_counts[tree] as u32,
            PositionKind::Value { slot, kind, .. } => {
                let start = self.family_range(slot_family(kind)).start;
                start..start + self.slots[slot].size as u32
            }
        }
    }

    /// Quantile group `[Q_s, Q_e)` when `pos` holds a quantile token.
    pub fn quant_group(&self, pos: usize) -> Option<Range<usize>> {
        match self.position_kind(pos) {
            PositionKind::Value {
                kind: SlotKind::Quant,
                ..
            } => {
                let r = self.valid_vocab_at(pos);
                Some(r.start as usize..r.end as usize)
            }
            _ => None,
        }
    }

    pub fn is_tree_position(&self, pos: usize) -> bool {
        pos >= 1 && pos <= self.n_trees()
    }

    pub fn is_value_position(&self, pos: usize) -> bool {
        pos > self.n_trees() && pos + 1 < self.seq_len()
    }

    /// `(bin position, quantile position)` for every numeric column.
    pub fn numeric_pairs(&self) -> Vec<(usize, usize)> {
        let base = self.n_trees() + 1;
        self.slots
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].kind == SlotKind::Bin && w[1].kind == SlotKind::Quant)
            .map(|(i, _)| (base + i, base + i + 1))
            .collect()
    }

    /// `[BOS, leaf tokens, value tokens, EOS]` from 1-based leaf and value ids.
    pub fn build_sequence(&self, leaf_row: &[u32], value_ids: &[u32]) -> Result<Vec<u32>> {
        if leaf_row.len() != self.n_trees() || value_ids.len() != self.slots.len() {
            return Err(Error::invalid(format!(
                "expected {} leaf ids and {} value ids, got {} and {}",
                self.n_trees(),
                self.slots.len(),
                leaf_row.len(),
                value_ids.len()
            )));
        }
        let mut seq = Vec::with_capacity(self.seq_len());
        seq.push(self.bos());
        for (pos, &id) in (1..).zip(leaf_row.iter().chain(value_ids)) {
            let range = self.valid_vocab_at(pos);
            let size = range.end - range.start;
            if id == 0 || id > size {
                return Err(Error::IdOutOfRange {
                    position: pos,
                    id,
                    lo: 1,
                    hi: size + 1,
                });
            }
            seq.push(range.start + id - 1);
        }
        seq.push(self.eos());
        Ok(seq)
    }

    /// 1-based value ids of a full sequence (inverse of `build_sequence`).
    pub fn value_ids(&self, seq: &[u32]) -> Result<Vec<u32>> {
        if seq.len() != self.seq_len() {
            return Err(Error::invalid(format!(
                "sequence length {} != {}",
                seq.len(),
                self.seq_len()
            )));
        }
        (self.n_trees() + 1..self.seq_len() - 1)
            .map(|pos| {
                let range = self.valid_vocab_at(pos);
                let tok = seq[pos];
                if range.contains(&tok) {
                    Ok(tok - range.start + 1)
                } else {
                    Err(Error::IdOutOfRange {
                        position: pos,
                        id: tok,
                        lo: range.start,
                        hi: range.end,
                    })
                }
            })
            .collect()
    }
}

fn slot_family(kind: SlotKind) -> TokenFamily {
    match kind {
        SlotKind::Cat => TokenFamily::Cat,
        SlotKind::Bin => TokenFamily::Bin,
        SlotKind::Quant => TokenFamily::Quant,
    }
}
