//! The fitted pipeline and its checkpoint file.
//!
//! File layout: magic `TTFC`, format version (`u32` LE), header length
//! (`u64` LE), a JSON header, then the parameters of both models as raw
//! little-endian `f32` in the order given by the header's tensor manifest.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{drop_missing, Schema, Table};
use crate::error::{Error, Result};
use crate::quantizer::{DataTokenizer, VocabLayout};
use crate::sampler::GenerationConfig;
use crate::transformer::{self, ModelConfig, ModelParameters, ParamLayout, TensorInfo, TrainConfig, TrainLog};
use crate::tree::{fit_gbm, tune_hyperparams, Ensemble, TuneResult};
use crate::util::mix_seed;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TTFC";
pub const CHECKPOINT_VERSION: u32 = 1;

const SEED_TARGET: u64 = 11;
const SEED_TUNE: u64 = 12;
const SEED_TREE: u64 = 13;
const SEED_TOKENIZER: u64 = 14;

/// Everything needed to generate rows: two split models with their own leaf
/// prompts, the tokenizer, the token layout and the conditioning ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGenerator {
    /// Schema of generated tables (training column order).
    pub schema: Schema,
    pub target: String,
    pub tokenizer: DataTokenizer,
    pub layout: VocabLayout,
    pub ensemble: Ensemble,
    /// Row-major 1-based leaf ids (`T` per row) of each model's half of the training rows.
    pub leaf_splits: [Vec<u32>; 2],
    pub models: [ModelParameters<f32>; 2],
    pub train_config: TrainConfig,
    pub generation: GenerationConfig,
    pub history: TrainLog,
    pub tuning: Option<TuneResult>,
    pub run_config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: Schema,
    target: String,
    tokenizer: DataTokenizer,
    layout: VocabLayout,
    ensemble: Ensemble,
    leaf_splits: [Vec<u32>; 2],
    model_config: ModelConfig,
    train_config: TrainConfig,
    generation: GenerationConfig,
    history: TrainLog,
    tuning: Option<TuneResult>,
    run_config: RunConfig,
    n_params: usize,
    /// Per-model tensor order; model 1 follows model 0.
    tensors: Vec<TensorInfo>,
}

impl TrainedGenerator {
    pub fn model_config(&self) -> &ModelConfig {
        &self.models[0].config
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = self.models[0].config.clone();
        let header = Header {
            schema: self.schema.clone(),
            target: self.target.clone(),
            tokenizer: self.tokenizer.clone(),
            layout: self.layout.clone(),
            ensemble: self.ensemble.clone(),
            leaf_splits: self.leaf_splits.clone(),
            tensors: self.models[0].layout.tensors(&cfg),
            n_params: self.models[0].n_params(),
            model_config: cfg,
            train_config: self.train_config.clone(),
            generation: self.generation.clone(),
            history: self.history.clone(),
            tuning: self.tuning.clone(),
            run_config: self.run_config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * header.n_params);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for m in &self.models {
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        let layout = ParamLayout::new(&header.model_config);
        if layout.total != header.n_params || layout.tensors(&header.model_config) != header.tensors {
            return Err(Error::Checkpoint("tensor manifest does not match the model configuration".into()));
        }
        let tensors = &body[hlen..];
        if tensors.len() != 2 * 4 * header.n_params {
            return Err(Error::Checkpoint(format!(
                "expected {} tensor bytes, found {}",
                2 * 4 * header.n_params,
                tensors.len()
            )));
        }
        let read = |k: usize| -> Result<ModelParameters<f32>> {
            let data: Vec<f32> = tensors[k * 4 * header.n_params..(k + 1) * 4 * header.n_params]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let p = ModelParameters {
                config: header.model_config.clone(),
                layout: layout.clone(),
                data,
            };
            if !p.all_finite() {
                return Err(Error::Checkpoint(format!("model {k} has non-finite weights")));
            }
            Ok(p)
        };
        let models = [read(0)?, read(1)?];
        if header.layout.vocab_size() != header.model_config.vocab || header.layout.seq_len() != header.model_config.max_len {
            return Err(Error::Checkpoint("layout and model configuration disagree".into()));
        }
        Ok(Self {
            schema: header.schema,
            target: header.target,
            tokenizer: header.tokenizer,
            layout: header.layout,
            ensemble: header.ensemble,
            leaf_splits: header.leaf_splits,
            models,
            train_config: header.train_config,
            generation: header.generation,
            history: header.history,
            tuning: header.tuning,
            run_config: header.run_config,
        })
    }

    /// Writes to a temporary sibling file, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes `bytes` so that `path` either keeps its old content or gets all of the new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// The target column: the explicit choice, else the schema's designated
/// target, else a seeded random column.
pub fn resolve_target(t: &Table, target: Option<&str>, seed: u64) -> Result<String> {
    if let Some(name) = target.or(t.schema().target.as_deref()) {
        return match t.schema().index_of(name) {
            Some(_) => Ok(name.to_owned()),
            None => Err(Error::Schema(format!("target {name:?} is not a column"))),
        };
    }
    if t.n_cols() < 2 {
        return Err(Error::Schema("need at least two columns to pick a target".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SEED_TARGET));
    let idx = rng.random_range(0..t.n_cols());
    let name = t.schema().columns[idx].name.clone();
    log::info!("no target given; picked column {name:?} at random");
    Ok(name)
}

/// Runs the whole fitting pipeline on `t`: drop incomplete rows, fit (and
/// optionally tune) the ensemble, compute leaf prompts, fit the tokenizer,
/// build sequences and train both models.
pub fn fit(t: &Table, target: Option<&str>, rc: &RunConfig) -> Result<TrainedGenerator> {
    rc.validate()?;
    let t = drop_missing(t);
    let target = resolve_target(&t, target, rc.seed)?;
    log::info!("fitting on {} complete rows, target {target:?}", t.n_rows());

    let trials = rc.tree_trials();
    let (params, tuning) = if trials > 0 {
        let res = tune_hyperparams(&t, &target, trials, mix_seed(rc.seed, SEED_TUNE))?;
        log::info!("tuned ensemble over {trials} trials: best cross-validated score {:.4}", res.best_score);
        (res.best.clone(), Some(res))
    } else {
        (rc.gbm.clone().unwrap_or_default(), None)
    };
    let ensemble = fit_gbm(&t, &target, &params, mix_seed(rc.seed, SEED_TREE))?;
    let leaves = ensemble.apply_leaves(&t)?;
    log::info!(
        "ensemble: {} trees, up to {} leaves",
        ensemble.n_trees(),
        ensemble.max_leaves()
    );

    let tokenizer = DataTokenizer::fit(&t, rc.k, rc.q, mix_seed(rc.seed, SEED_TOKENIZER))?;
    let layout = VocabLayout::from_tokenizer(ensemble.leaf_counts(), &tokenizer)?;
    let mut sequences = Vec::with_capacity(t.n_rows() * layout.seq_len());
    for (i, row) in t.rows().iter().enumerate() {
        sequences.extend(layout.build_sequence(leaves.row(i), &tokenizer.encode_row(row)?)?);
    }
    log::info!("vocabulary V={}, sequence length L={}", layout.vocab_size(), layout.seq_len());

    let mc = rc.model_config(layout.vocab_size(), layout.seq_len());
    let tc = rc.train_config();
    let outcome = transformer::train(&sequences, &layout, &mc, &tc)?;
    let leaf_splits = outcome
        .splits
        .clone()
        .map(|rows| rows.iter().flat_map(|&r| leaves.row(r).iter().copied()).collect());
    let mut schema = t.schema().clone();
    schema.target = Some(target.clone());
    Ok(TrainedGenerator {
        schema,
        target,
        tokenizer,
        layout,
        ensemble,
        leaf_splits,
        models: outcome.models,
        train_config: tc,
        generation: rc.generation_config(),
        history: outcome.log,
        tuning,
        run_config: rc.clone(),
    })
}
