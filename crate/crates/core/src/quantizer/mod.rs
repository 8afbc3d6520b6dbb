//! Dual quantization of numeric columns, label encoding of categorical ones,
//! and the token-id layout of a full row sequence.

mod kmeans;
mod layout;
mod quantile;
mod tokenizer;

pub use kmeans::KMeans1D;
pub use layout::{PositionKind, TokenFamily, VocabLayout};
pub use quantile::{linear_quantile, QuantileBins};
pub use tokenizer::{CategoryMap, ColumnCodec, DataTokenizer, SlotKind, ValueSlot};
