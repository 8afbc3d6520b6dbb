//! Reversible per-column codecs: label encoding for categorical columns and
//! the (k-means bin, quantile) pair for numeric columns.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{KMeans1D, QuantileBins};
use crate::dataset::{drop_missing, Cell, ColumnKind, Table};
use crate::error::{Error, Result};
use crate::util::mix_seed;

/// Bijection between category strings and ids `1..=len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryMap {
    categories: Vec<String>,
    index: HashMap<String, u32>,
}

impl CategoryMap {
    pub fn new(categories: Vec<String>) -> Self {
        let index = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u32 + 1))
            .collect();
        Self { categories, index }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn id(&self, category: &str) -> Option<u32> {
        self.index.get(category).copied()
    }

    pub fn category(&self, id: u32) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.categories.get(i as usize))
            .map(String::as_str)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }
}

impl From<Vec<String>> for CategoryMap {
    fn from(v: Vec<String>) -> Self {
        Self::new(v)
    }
}

impl From<CategoryMap> for Vec<String> {
    fn from(m: CategoryMap) -> Self {
        m.categories
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "codec", rename_all = "lowercase")]
pub enum ColumnCodec {
    Categorical(CategoryMap),
    Numeric {
        kmeans: KMeans1D,
        quantiles: QuantileBins,
    },
}

/// Kind of discrete value occupying one slot of an encoded row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Cat,
    Bin,
    Quant,
}

/// One slot of an encoded row: its source column, kind and id count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSlot {
    pub column: usize,
    pub kind: SlotKind,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTokenizer {
    names: Vec<String>,
    codecs: Vec<ColumnCodec>,
    k: usize,
    q: usize,
}

impl DataTokenizer {
    /// Fits on the complete rows of `t`. Categorical columns list declared
    /// categories first (declaration order), then any other observed values
    /// in sorted order.
    pub fn fit(t: &Table, k: usize, q: usize, seed: u64) -> Result<Self> {
        let t = drop_missing(t);
        if t.is_empty() {
            return Err(Error::invalid("tokenizer fit on a table with no complete rows"));
        }
        let codecs = t
            .schema()
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| -> Result<ColumnCodec> {
                Ok(match col.kind {
                    ColumnKind::Categorical => {
                        let declared = col.categories.clone().unwrap_or_default();
                        let observed: BTreeSet<&str> = t.column(c).filter_map(Cell::as_cat).collect();
                        let mut cats = declared.clone();
                        cats.extend(
                            observed
                                .into_iter()
                                .filter(|o| !declared.iter().any(|d| d == o))
                                .map(str::to_owned),
                        );
                        ColumnCodec::Categorical(CategoryMap::new(cats))
                    }
                    ColumnKind::Numeric => {
                        let values = t.numeric_values(c);
                        ColumnCodec::Numeric {
                            kmeans: KMeans1D::fit(&values, k, mix_seed(seed, c as u64))?,
                            quantiles: QuantileBins::fit(&values, q)?,
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: t.schema().names().map(str::to_owned).collect(),
            codecs,
            k,
            q,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn codecs(&self) -> &[ColumnCodec] {
        &self.codecs
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Slots of an encoded row in column order; numeric columns contribute
    /// a bin slot followed by a quantile slot.
    pub fn slots(&self) -> Vec<ValueSlot> {
        let mut out = Vec::new();
        for (column, codec) in self.codecs.iter().enumerate() {
            match codec {
                ColumnCodec::Categorical(m) => out.push(ValueSlot {
                    column,
                    kind: SlotKind::Cat,
                    size: m.len(),
                }),
                ColumnCodec::Numeric { kmeans, quantiles } => {
                    out.push(ValueSlot {
                        column,
                        kind: SlotKind::Bin,
                        size: kmeans.n_bins(),
                    });
                    out.push(ValueSlot {
                        column,
                        kind: SlotKind::Quant,
                        size: quantiles.n_bins(),
                    });
                }
            }
        }
        out
    }

    pub fn max_categories(&self) -> usize {
        self.max_slot(SlotKind::Cat)
    }

    pub fn max_bins(&self) -> usize {
        self.max_slot(SlotKind::Bin)
    }

    pub fn max_quantiles(&self) -> usize {
        self.max_slot(SlotKind::Quant)
    }

    fn max_slot(&self, kind: SlotKind) -> usize {
        self.slots()
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.size)
            .max()
            .unwrap_or(0)
    }

    /// Encodes one row into 1-based ids.
    pub fn encode_row(&self, row: &[Cell]) -> Result<Vec<u32>> {
        if row.len() != self.codecs.len() {
            return Err(Error::invalid(format!(
                "row has {} cells, tokenizer has {} columns",
                row.len(),
                self.codecs.len()
            )));
        }
        let mut out = Vec::with_capacity(row.len() * 2);
        for ((cell, codec), name) in row.iter().zip(&self.codecs).zip(&self.names) {
            match (codec, cell) {
                (ColumnCodec::Categorical(map), Cell::Cat(s)) => {
                    let id = map.id(s).ok_or_else(|| Error::UnseenCategory {
                        column: name.clone(),
                        value: s.to_string(),
                    })?;
                    out.push(id);
                }
                (ColumnCodec::Numeric { kmeans, quantiles }, Cell::Num(v)) if v.is_finite() => {
                    out.push(kmeans.assign(*v) as u32 + 1);
                    out.push(quantiles.bin_of(*v) as u32 + 1);
                }
                (_, other) => {
                    return Err(Error::InvalidValue {
                        column: name.clone(),
                        reason: format!("cannot encode {other:?}"),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Decodes 1-based ids. Numeric values come from the quantile bin
    /// representative; the k-means bin id only has to be in range.
    pub fn decode_row(&self, ids: &[u32]) -> Result<Vec<Cell>> {
        let slots = self.slots();
        if ids.len() != slots.len() {
            return Err(Error::invalid(format!(
                "expected {} ids, got {}",
                slots.len(),
                ids.len()
            )));
        }
        for (pos, (slot, &id)) in slots.iter().zip(ids).enumerate() {
            if id == 0 || id as usize > slot.size {
                return Err(Error::IdOutOfRange {
                    position: pos,
                    id,
                    lo: 1,
                    hi: slot.size as u32 + 1,
                });
            }
        }
        let mut cells = Vec::with_capacity(self.codecs.len());
        let mut it = ids.iter();
        for codec in &self.codecs {
            match codec {
                ColumnCodec::Categorical(map) => {
                    let id = *it.next().expect("length checked");
                    cells.push(Cell::cat(map.category(id).expect("range checked")));
                }
                ColumnCodec::Numeric { quantiles, .. } => {
                    let _bin = it.next();
                    let quant = *it.next().expect("length checked");
                    cells.push(Cell::Num(quantiles.representative(quant as usize - 1)));
                }
            }
        }
        Ok(cells)
    }
}
