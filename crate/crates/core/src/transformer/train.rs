//! Two-phase training: shared steps on all rows, then one model per half of
//! the rows, each validated on the other half with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::mask::apply_mask;
use super::model::{loss_and_grad, Dropout, LossSpec};
use super::optim::Adam;
use super::params::{ModelParameters, Real};
use crate::error::{Error, Result};
use crate::loss::OrdinalWeightConfig;
use crate::quantizer::{TokenFamily, VocabLayout};
use crate::util::mix_seed;

/// Sequences per gradient work unit; partial sums are reduced in unit order.
const CHUNK: usize = 16;

const SEED_INIT: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_PHASE: u64 = 3;
const SEED_VALID: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Shared,
    G1,
    G2,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Shared => 0,
            Phase::G1 => 1,
            Phase::G2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub phase: Phase,
    /// 1-based global step.
    pub step: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRun {
    pub phase: Phase,
    pub baseline_val_loss: f64,
    pub best_val_loss: f64,
    /// Global step of the returned checkpoint.
    pub best_step: usize,
    pub last_step: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub shared_steps: usize,
    pub entries: Vec<LogEntry>,
    pub runs: Vec<SplitRun>,
}

pub struct TrainOutcome {
    pub models: [ModelParameters<f32>; 2],
    /// Row indices (into the training sequences) of each half.
    pub splits: [Vec<usize>; 2],
    pub log: TrainLog,
}

/// Per-position loss context for a layout.
pub(crate) struct LossContext {
    groups: Vec<Option<std::ops::Range<usize>>>,
    cfg: OrdinalWeightConfig,
}

impl LossContext {
    pub(crate) fn new(layout: &VocabLayout) -> Self {
        Self {
            groups: (0..layout.seq_len()).map(|p| layout.quant_group(p)).collect(),
            cfg: OrdinalWeightConfig::new(layout.n_quant().max(1)),
        }
    }

    fn spec(&self) -> LossSpec<'_> {
        LossSpec {
            groups: &self.groups,
            cfg: &self.cfg,
        }
    }
}

/// Mean loss over all target positions and, if `grad` is given, its gradient
/// (overwritten). Work is split into fixed chunks so the result does not
/// depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_loss<R: Real>(
    p: &ModelParameters<R>,
    inputs: &[u32],
    targets: &[u32],
    seq_len: usize,
    ctx: &LossContext,
    dropout: Option<(f64, u64)>,
    grad: Option<&mut [R]>,
) -> Result<f64> {
    let n_seq = inputs.len() / seq_len;
    let denom = (n_seq * (seq_len - 1)) as f64;
    let scale = 1.0 / denom;
    let spec = ctx.spec();
    let starts: Vec<usize> = (0..n_seq).step_by(CHUNK).collect();
    let workers = rayon::current_num_threads().max(1);
    let want_grad = grad.is_some();
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = R::zero());
    }
    let mut total = 0.0;
    for group in starts.chunks(workers) {
        let parts: Vec<Result<(f64, Option<Vec<R>>)>> = group
            .par_iter()
            .map(|&s0| {
                let s1 = (s0 + CHUNK).min(n_seq);
                let range = s0 * seq_len..s1 * seq_len;
                let dr = dropout.map(|(rate, seed)| Dropout {
                    rate,
                    seed: mix_seed(seed, s0 as u64),
                });
                let mut g = want_grad.then(|| vec![R::zero(); p.n_params()]);
                let loss = loss_and_grad(
                    p,
                    &inputs[range.clone()],
                    &targets[range],
                    s1 - s0,
                    seq_len,
                    &spec,
                    dr,
                    scale,
                    g.as_deref_mut(),
                )?;
                Ok((loss, g))
            })
            .collect();
        for part in parts {
            let (loss, g) = part?;
            total += loss;
            if let (Some(acc), Some(g)) = (grad.as_deref_mut(), g) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
        }
    }
    Ok(total / denom)
}

/// Mean token loss of `p` on `sequences` under a mask drawn from `seed`.
pub fn validation_loss<R: Real>(
    p: &ModelParameters<R>,
    sequences: &[u32],
    layout: &VocabLayout,
    tc: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = apply_mask(sequences, layout, tc.tree_mask, tc.value_mask, &mut rng);
    batch_loss(p, &inputs, sequences, layout.seq_len(), &LossContext::new(layout), None, None)
}

/// Epoch-wise shuffled batches over a fixed row set.
struct BatchStream {
    rows: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(rows: Vec<usize>, seed: u64) -> Self {
        let mut s = Self {
            rows,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.rows.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, b: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.cursor == self.rows.len() {
                self.rows.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (b - out.len()).min(self.rows.len() - self.cursor);
            out.extend_from_slice(&self.rows[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

fn gather(sequences: &[u32], rows: &[usize], l: usize) -> Vec<u32> {
    rows.iter().flat_map(|&r| sequences[r * l..(r + 1) * l].iter().copied()).collect()
}

struct Trainer<'a> {
    sequences: &'a [u32],
    layout: &'a VocabLayout,
    tc: &'a TrainConfig,
    dropout: f64,
    ctx: LossContext,
    grad: Vec<f32>,
    log: TrainLog,
}

impl Trainer<'_> {
    fn step(
        &mut self,
        p: &mut ModelParameters<f32>,
        opt: &mut Adam,
        stream: &mut BatchStream,
        phase: Phase,
        step: usize,
    ) -> Result<()> {
        let l = self.layout.seq_len();
        let b = self.tc.batch_size.min(stream.rows.len());
        let rows = stream.next_batch(b);
        let targets = gather(self.sequences, &rows, l);
        let step_seed = mix_seed(mix_seed(self.tc.seed, SEED_PHASE + phase.tag()), step as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let inputs = apply_mask(&targets, self.layout, self.tc.tree_mask, self.tc.value_mask, &mut rng);
        let loss = batch_loss(
            p,
            &inputs,
            &targets,
            l,
            &self.ctx,
            Some((self.dropout, step_seed)),
            Some(&mut self.grad),
        )?;
        let norm = opt.update(&mut p.data, &self.grad);
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "phase {phase:?}, step {step}: loss {loss}, gradient norm {norm}, batch of {b} rows"
            )));
        }
        log::debug!("phase={phase:?} step={step} train_loss={loss:.5} grad_norm={norm:.4}");
        self.log.entries.push(LogEntry {
            phase,
            step,
            train_loss: loss,
            grad_norm: norm,
            val_loss: None,
        });
        Ok(())
    }
}

/// Trains the shared model, then the two split models.
pub fn train(sequences: &[u32], layout: &VocabLayout, mc: &ModelConfig, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    mc.validate()?;
    let l = layout.seq_len();
    if mc.max_len != l || mc.vocab != layout.vocab_size() {
        return Err(Error::Config(format!(
            "model expects V={} L={}, layout has V={} L={}",
            mc.vocab,
            mc.max_len,
            layout.vocab_size(),
            l
        )));
    }
    if !sequences.len().is_multiple_of(l) {
        return Err(Error::invalid("token buffer is not a whole number of sequences"));
    }
    let n = sequences.len() / l;
    if n < 4 {
        return Err(Error::invalid(format!("training needs at least 4 rows, got {n}")));
    }

    let quant = layout.family_range(TokenFamily::Quant);
    let mut shared = ModelParameters::<f32>::init(
        mc.clone(),
        Some(quant.start as usize..quant.end as usize),
        mix_seed(tc.seed, SEED_INIT),
    )?;
    let mut opt = Adam::new(shared.n_params(), tc.learning_rate, tc.beta1, tc.beta2, tc.eps, tc.grad_clip);
    let mut trainer = Trainer {
        sequences,
        layout,
        tc,
        dropout: mc.dropout,
        ctx: LossContext::new(layout),
        grad: vec![0.0; shared.n_params()],
        log: TrainLog::default(),
    };

    let s0 = tc.shared_steps_for(n);
    trainer.log.shared_steps = s0;
    log::info!(
        "training {} parameters on {n} rows: {s0} shared steps, up to {} total",
        shared.n_params(),
        tc.max_steps
    );
    let mut stream = BatchStream::new((0..n).collect(), mix_seed(tc.seed, SEED_PHASE));
    for step in 1..=s0 {
        trainer.step(&mut shared, &mut opt, &mut stream, Phase::Shared, step)?;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, SEED_SPLIT)));
    let (a, b) = order.split_at(n / 2);
    let mut splits = [a.to_vec(), b.to_vec()];
    splits.iter_mut().for_each(|s| s.sort_unstable());

    if s0 >= tc.max_steps {
        log::info!("no split phase: shared steps reach the step budget");
        let log = trainer.log;
        return Ok(TrainOutcome {
            models: [shared.clone(), shared],
            splits,
            log,
        });
    }

    let mut models = Vec::with_capacity(2);
    for (j, phase) in [Phase::G1, Phase::G2].into_iter().enumerate() {
        let own = &splits[j];
        let other = &splits[1 - j];
        let val_targets = gather(sequences, other, l);
        let mut vrng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, SEED_VALID + phase.tag()));
        let val_inputs = apply_mask(&val_targets, layout, tc.tree_mask, tc.value_mask, &mut vrng);
        let val = |p: &ModelParameters<f32>, ctx: &LossContext| -> Result<f64> {
            let v = batch_loss(p, &val_inputs, &val_targets, l, ctx, None, None)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteLoss(format!("validation loss {v} in phase {phase:?}")))
            }
        };

        let mut p = shared.clone();
        let mut o = opt.clone();
        let mut stream = BatchStream::new(own.clone(), mix_seed(tc.seed, SEED_PHASE + phase.tag()));
        let baseline = val(&p, &trainer.ctx)?;
        log::info!("phase={phase:?} step={s0} val_loss={baseline:.5} (baseline)");
        let mut run = SplitRun {
            phase,
            baseline_val_loss: baseline,
            best_val_loss: baseline,
            best_step: s0,
            last_step: s0,
            stopped_early: false,
        };
        let mut best = p.clone();
        let mut bad = 0;
        for step in s0 + 1..=tc.max_steps {
            trainer.step(&mut p, &mut o, &mut stream, phase, step)?;
            run.last_step = step;
            if step % tc.val_interval == 0 {
                let v = val(&p, &trainer.ctx)?;
                if let Some(e) = trainer.log.entries.last_mut() {
                    e.val_loss = Some(v);
                }
                let train_loss = trainer.log.entries.last().map_or(f64::NAN, |e| e.train_loss);
                log::info!("phase={phase:?} step={step} train_loss={train_loss:.5} val_loss={v:.5}");
                if v < run.best_val_loss {
                    run.best_val_loss = v;
                    run.best_step = step;
                    best = p.clone();
                    bad = 0;
                } else {
                    bad += 1;
                    if bad >= tc.patience {
                        run.stopped_early = true;
                        log::info!("phase={phase:?} early stop at step {step}; best step {}", run.best_step);
                        break;
                    }
                }
            }
        }
        trainer.log.runs.push(run);
        models.push(best);
    }
    let g2 = models.pop().expect("two models");
    let g1 = models.pop().expect("two models");
    Ok(TrainOutcome {
        models: [g1, g2],
        splits,
        log: trainer.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{SlotKind, ValueSlot};
    use crate::transformer::config::Preset;

    fn toy() -> (VocabLayout, Vec<u32>) {
        let layout = VocabLayout::new(
            vec![3, 2],
            vec![
                ValueSlot {
                    column: 0,
                    kind: SlotKind::Cat,
                    size: 3,
                },
                ValueSlot {
                    column: 1,
                    kind: SlotKind::Bin,
                    size: 2,
                },
                ValueSlot {
                    column: 1,
                    kind: SlotKind::Quant,
                    size: 8,
                },
            ],
        )
        .unwrap();
        let mut seqs = Vec::new();
        for i in 0..40u32 {
            let c = i % 3 + 1;
            let bin = if c == 1 { 1 } else { 2 };
            let q = if bin == 1 { 1 + i % 4 } else { 5 + i % 4 };
            seqs.extend(layout.build_sequence(&[c, 1 + (i % 2)], &[c, bin, q]).unwrap());
        }
        (layout, seqs)
    }

    fn tiny(layout: &VocabLayout) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            n_layers: 1,
            ..ModelConfig::from_preset(Preset::Tiny, layout.vocab_size(), layout.seq_len())
        }
    }

    #[test]
    fn batch_stream_covers_each_epoch() {
        let mut s = BatchStream::new((0..10).collect(), 3);
        let mut first: Vec<usize> = s.next_batch(4);
        first.extend(s.next_batch(6));
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn budget_equal_to_shared_steps_gives_twin_models() {
        let (layout, seqs) = toy();
        let tc = TrainConfig {
            batch_size: 8,
            max_steps: 5,
            shared_steps: Some(5),
            ..TrainConfig::default()
        };
        let out = train(&seqs, &layout, &tiny(&layout), &tc).unwrap();
        assert_eq!(out.models[0], out.models[1]);
        assert_eq!(out.splits[0].len() + out.splits[1].len(), 40);
    }

    #[test]
    fn returns_best_checkpoint_and_is_deterministic() {
        let (layout, seqs) = toy();
        let tc = TrainConfig {
            batch_size: 8,
            max_steps: 60,
            shared_steps: Some(10),
            val_interval: 10,
            patience: 2,
            learning_rate: 1e-2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mc = tiny(&layout);
        let a = train(&seqs, &layout, &mc, &tc).unwrap();
        let b = train(&seqs, &layout, &mc, &tc).unwrap();
        assert_eq!(a.models[0].data, b.models[0].data);
        assert_eq!(a.log, b.log);
        for (j, run) in a.log.runs.iter().enumerate() {
            let other = gather(&seqs, &a.splits[1 - j], layout.seq_len());
            let mut vrng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, SEED_VALID + run.phase.tag()));
            let inputs = apply_mask(&other, &layout, tc.tree_mask, tc.value_mask, &mut vrng);
            let v = batch_loss(&a.models[j], &inputs, &other, layout.seq_len(), &LossContext::new(&layout), None, None)
                .unwrap();
            assert_eq!(v, run.best_val_loss);
            assert!(run.best_val_loss <= run.baseline_val_loss);
        }
    }
}
