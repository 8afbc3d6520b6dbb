//! Decoder-only transformer with hand-written backpropagation.

mod config;
mod mask;
mod model;
mod optim;
mod params;
mod train;

pub use config::{ModelConfig, Preset, TrainConfig};
pub use mask::{apply_mask, mask_sequence};
pub use model::{forward_logits, KvDecoder};
pub use optim::Adam;
pub use params::{LayerOffsets, ModelParameters, ParamLayout, Real, TensorInfo};
pub use train::{train, validation_loss, LogEntry, Phase, SplitRun, TrainLog, TrainOutcome};

/// Summed loss and its gradient over a batch, for external gradient checks.
///
/// `inputs` and `targets` are row-major `n x L` token ids; the loss is the
/// mean over target positions `1..L` as in training, without dropout.
pub fn batch_loss_and_grad<R: Real>(
    p: &ModelParameters<R>,
    inputs: &[u32],
    targets: &[u32],
    layout: &crate::quantizer::VocabLayout,
) -> crate::Result<(f64, Vec<R>)> {
    let mut grad = vec![R::zero(); p.n_params()];
    let ctx = train::LossContext::new(layout);
    let loss = train::batch_loss(p, inputs, targets, layout.seq_len(), &ctx, None, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Mean loss over a batch without dropout.
pub fn batch_loss<R: Real>(
    p: &ModelParameters<R>,
    inputs: &[u32],
    targets: &[u32],
    layout: &crate::quantizer::VocabLayout,
) -> crate::Result<f64> {
    let ctx = train::LossContext::new(layout);
    train::batch_loss(p, inputs, targets, layout.seq_len(), &ctx, None, None)
}
