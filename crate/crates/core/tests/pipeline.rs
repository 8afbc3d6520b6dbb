mod common;

use tabgen_core::config::RunConfig;
use tabgen_core::generator::{fit, TrainedGenerator, CHECKPOINT_VERSION};
use tabgen_core::sampler::{sample_rows, sample_sequences};
use tabgen_core::tree::GbmParams;
use tabgen_core::transformer::Preset;
use tabgen_core::Error;

fn quick_config(seed: u64) -> RunConfig {
    let mut rc = RunConfig::for_preset(Preset::Tiny);
    rc.seed = seed;
    rc.q = 40;
    rc.gbm = Some(GbmParams {
        n_trees: 4,
        max_leaves: 6,
        ..GbmParams::default()
    });
    rc.train.batch_size = Some(16);
    rc.train.max_steps = Some(10);
    rc.train.val_interval = Some(5);
    rc.model.n_layers = Some(1);
    rc
}

fn trained() -> TrainedGenerator {
    fit(&common::toy_table(200, 3), Some("c"), &quick_config(5)).unwrap()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let g = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ttf");
    g.save(&path).unwrap();
    let back = TrainedGenerator::load(&path).unwrap();
    assert_eq!(back.models, g.models);
    assert_eq!(back.ensemble, g.ensemble);
    assert_eq!(back.tokenizer, g.tokenizer);
    assert_eq!(back.layout, g.layout);
    assert_eq!(back.history, g.history);
    assert_eq!(back, g);
    let gc = g.generation.clone();
    assert_eq!(sample_rows(&back, 20, &gc).unwrap(), sample_rows(&g, 20, &gc).unwrap());
}

#[test]
fn checkpoint_rejects_wrong_version_and_truncation() {
    let bytes = trained().to_bytes().unwrap();
    let mut wrong = bytes.clone();
    wrong[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        TrainedGenerator::from_bytes(&wrong),
        Err(Error::CheckpointVersion { found, expected }) if found == CHECKPOINT_VERSION + 1 && expected == CHECKPOINT_VERSION
    ));
    assert!(matches!(TrainedGenerator::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Checkpoint(_))));
    assert!(matches!(TrainedGenerator::from_bytes(b"TTFX"), Err(Error::Checkpoint(_))));
}

#[test]
fn generated_sequences_respect_position_vocabularies() {
    let g = trained();
    let s = sample_sequences(&g, 130, &g.generation).unwrap();
    let l = g.layout.seq_len();
    assert_eq!(s.sequences.len(), 130 * l);
    assert_eq!(s.source.iter().filter(|&&m| m == 0).count(), 65);
    for seq in s.sequences.chunks(l) {
        for (pos, &tok) in seq.iter().enumerate() {
            if g.layout.is_tree_position(pos) {
                // prompt: a training leaf or the mask token
                assert!(g.layout.valid_vocab_at(pos).contains(&tok) || tok == g.layout.mask());
            } else {
                assert!(g.layout.valid_vocab_at(pos).contains(&tok), "pos {pos} token {tok}");
            }
        }
    }
}

#[test]
fn generation_is_seeded() {
    let g = trained();
    let mut gc = g.generation.clone();
    let a = sample_rows(&g, 40, &gc).unwrap();
    assert_eq!(a, sample_rows(&g, 40, &gc).unwrap());
    gc.seed += 1;
    assert_ne!(a, sample_rows(&g, 40, &gc).unwrap());
    assert_eq!(a.schema(), &g.schema);
    assert!(sample_rows(&g, 0, &gc).is_err());
}

#[test]
fn fitting_is_deterministic_per_seed() {
    let t = common::toy_table(150, 9);
    let a = fit(&t, Some("a"), &quick_config(2)).unwrap();
    let b = fit(&t, Some("a"), &quick_config(2)).unwrap();
    assert_eq!(a.models, b.models);
    assert_eq!(a.history, b.history);
}

#[test]
fn seeded_random_target_when_none_is_given() {
    let mut t = common::toy_table(150, 4);
    t = t.with_schema_target(None).unwrap();
    let a = fit(&t, None, &quick_config(8)).unwrap();
    let b = fit(&t, None, &quick_config(8)).unwrap();
    assert_eq!(a.target, b.target);
    assert!(t.schema().index_of(&a.target).is_some());
}

#[test]
fn too_few_rows_is_an_error() {
    let t = common::toy_table(10, 1);
    assert!(fit(&t, Some("c"), &quick_config(0)).is_err());
}
