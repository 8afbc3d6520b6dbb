use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "S")]
    Small,
    #[serde(rename = "L")]
    Large,
    /// Large widths without masking, long patience and cold sampling.
    #[serde(rename = "NM")]
    NoMask,
    /// Tiny model for tests and quick runs.
    #[serde(rename = "TINY")]
    Tiny,
}

impl Preset {
    /// `(hidden, feed-forward, heads, layers)`.
    pub fn dims(self) -> (usize, usize, usize, usize) {
        match self {
            Preset::Small => (256, 1024, 8, 6),
            Preset::Large | Preset::NoMask => (768, 3072, 12, 6),
            Preset::Tiny => (64, 256, 4, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Small => "S",
            Preset::Large => "L",
            Preset::NoMask => "NM",
            Preset::Tiny => "TINY",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S" => Ok(Preset::Small),
            "L" => Ok(Preset::Large),
            "NM" => Ok(Preset::NoMask),
            "TINY" => Ok(Preset::Tiny),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected S, L, NM or TINY)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Maximum sequence length `L`.
    pub max_len: usize,
    /// Vocabulary size `V`.
    pub vocab: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn from_preset(preset: Preset, vocab: usize, max_len: usize) -> Self {
        let (d_model, d_ff, n_heads, n_layers) = preset.dims();
        Self {
            preset,
            d_model,
            d_ff,
            n_heads,
            n_layers,
            max_len,
            vocab,
            dropout: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 || self.max_len == 0 || self.vocab == 0 {
            return Err(Error::Config("feed-forward width, length and vocabulary must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Shared first-phase steps; `None` uses `min(ceil(20 n / B), s / 10)`.
    pub shared_steps: Option<usize>,
    pub val_interval: usize,
    pub patience: usize,
    pub tree_mask: [f64; 2],
    pub value_mask: [f64; 2],
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 5e-4,
            max_steps: 5000,
            shared_steps: None,
            val_interval: 100,
            patience: 3,
            tree_mask: [0.5, 0.75],
            value_mask: [0.25, 0.5],
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::NoMask => Self {
                patience: 100,
                tree_mask: [0.0, 0.0],
                value_mask: [0.0, 0.0],
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn shared_steps_for(&self, n_rows: usize) -> usize {
        let rule = (20 * n_rows).div_ceil(self.batch_size.max(1)).min(self.max_steps / 10);
        self.shared_steps.unwrap_or(rule).min(self.max_steps)
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| (0.0..=1.0).contains(&r[0]) && (0.0..=1.0).contains(&r[1]) && r[0] <= r[1];
        if !range_ok(self.tree_mask) || !range_ok(self.value_mask) {
            return Err(Error::Config(format!(
                "mask ranges must lie in [0, 1] with low <= high, got {:?} and {:?}",
                self.tree_mask, self.value_mask
            )));
        }
        if self.batch_size == 0 || self.val_interval == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, validation interval and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("learning rate, clip norm and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_widths() {
        assert_eq!(Preset::Small.dims(), (256, 1024, 8, 6));
        assert_eq!(Preset::Large.dims(), (768, 3072, 12, 6));
        assert_eq!(Preset::NoMask.dims(), Preset::Large.dims());
        assert_eq!("tiny".parse::<Preset>().unwrap(), Preset::Tiny);
        assert!("xl".parse::<Preset>().is_err());
    }

    #[test]
    fn no_mask_constants() {
        let t = TrainConfig::for_preset(Preset::NoMask);
        assert_eq!((t.tree_mask, t.value_mask, t.patience), ([0.0, 0.0], [0.0, 0.0], 100));
        let d = TrainConfig::for_preset(Preset::Small);
        assert_eq!((d.batch_size, d.max_steps, d.learning_rate), (128, 5000, 5e-4));
    }

    #[test]
    fn shared_step_rule() {
        let t = TrainConfig::default();
        // 20 epochs of 100 rows at batch 128 is 16 steps; s/10 is 500
        assert_eq!(t.shared_steps_for(100), 16);
        assert_eq!(t.shared_steps_for(100_000), 500);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let t = TrainConfig {
            tree_mask: [0.8, 0.2],
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }
}
