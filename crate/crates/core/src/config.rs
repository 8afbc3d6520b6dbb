//! Run configuration: a preset plus optional overrides of every knob.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::GenerationConfig;
use crate::transformer::{ModelConfig, Preset, TrainConfig};
use crate::tree::GbmParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_steps: Option<usize>,
    pub shared_steps: Option<usize>,
    pub val_interval: Option<usize>,
    pub patience: Option<usize>,
    pub tree_mask: Option<[f64; 2]>,
    pub value_mask: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOverrides {
    pub temperature_categorical: Option<f64>,
    pub temperature_numeric: Option<f64>,
    pub tree_mask: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// K-means bins per numeric column.
    pub k: usize,
    /// Quantile bins per numeric column.
    pub q: usize,
    /// Random-search trials for the tree ensemble; `None` uses the preset default.
    pub tree_trials: Option<usize>,
    /// Fixed ensemble parameters used when no tuning runs.
    pub gbm: Option<GbmParams>,
    pub train: TrainOverrides,
    pub model: ModelOverrides,
    pub generation: GenerationOverrides,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Small)
    }
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            preset,
            k: 10,
            q: 1000,
            tree_trials: None,
            gbm: None,
            train: TrainOverrides::default(),
            model: ModelOverrides::default(),
            generation: GenerationOverrides::default(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rc: RunConfig = serde_json::from_str(text)?;
        rc.validate()?;
        Ok(rc)
    }

    pub fn tree_trials(&self) -> usize {
        self.tree_trials.unwrap_or(match self.preset {
            Preset::Tiny => 0,
            _ => 10,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.train;
        let base = TrainConfig::for_preset(self.preset);
        TrainConfig {
            batch_size: o.batch_size.unwrap_or(base.batch_size),
            learning_rate: o.learning_rate.unwrap_or(base.learning_rate),
            max_steps: o.max_steps.unwrap_or(base.max_steps),
            shared_steps: o.shared_steps.or(base.shared_steps),
            val_interval: o.val_interval.unwrap_or(base.val_interval),
            patience: o.patience.unwrap_or(base.patience),
            tree_mask: o.tree_mask.unwrap_or(base.tree_mask),
            value_mask: o.value_mask.unwrap_or(base.value_mask),
            seed: self.seed,
            ..base
        }
    }

    pub fn model_config(&self, vocab: usize, max_len: usize) -> ModelConfig {
        let o = &self.model;
        let base = ModelConfig::from_preset(self.preset, vocab, max_len);
        ModelConfig {
            d_model: o.d_model.unwrap_or(base.d_model),
            d_ff: o.d_ff.unwrap_or(base.d_ff),
            n_heads: o.n_heads.unwrap_or(base.n_heads),
            n_layers: o.n_layers.unwrap_or(base.n_layers),
            dropout: o.dropout.unwrap_or(base.dropout),
            ..base
        }
    }

    /// Generation defaults; the prompt mask follows the training tree mask.
    pub fn generation_config(&self) -> GenerationConfig {
        let o = &self.generation;
        let base = GenerationConfig::for_preset(self.preset);
        GenerationConfig {
            temperature_categorical: o.temperature_categorical.unwrap_or(base.temperature_categorical),
            temperature_numeric: o.temperature_numeric.unwrap_or(base.temperature_numeric),
            tree_mask: o.tree_mask.unwrap_or(self.train_config().tree_mask),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.q == 0 {
            return Err(Error::Config(format!("K and Q must be positive, got {} and {}", self.k, self.q)));
        }
        if let Some(g) = &self.gbm {
            g.validate()?;
        }
        self.train_config().validate()?;
        self.model_config(1, 1).validate()?;
        self.generation_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_mask_preset_constants() {
        let rc = RunConfig::for_preset(Preset::NoMask);
        let tc = rc.train_config();
        let gc = rc.generation_config();
        assert_eq!((tc.tree_mask, tc.value_mask, tc.patience), ([0.0; 2], [0.0; 2], 100));
        assert_eq!((gc.temperature_categorical, gc.temperature_numeric), (0.2, 0.1));
        assert_eq!(gc.tree_mask, [0.0; 2]);
        assert_eq!(rc.model_config(10, 5).d_model, 768);
    }

    #[test]
    fn json_overrides_merge_over_preset() {
        let rc = RunConfig::from_json(r#"{"preset":"TINY","train":{"max_steps":50},"model":{"n_layers":1}}"#).unwrap();
        assert_eq!(rc.train_config().max_steps, 50);
        assert_eq!(rc.train_config().batch_size, 128);
        assert_eq!(rc.model_config(10, 5).n_layers, 1);
        assert_eq!(rc.model_config(10, 5).d_model, 64);
        assert_eq!(rc.tree_trials(), 0);
        assert!(RunConfig::from_json(r#"{"bogus":1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train":{"tree_mask":[0.9,0.1]}}"#).is_err());
    }
}
