//! End-to-end run on the bimodal desk table: fit, generate, evaluate.
//!
//! `cargo run --release -p tabgen-core --example desk_benchmark [config.json]`

#[path = "../tests/common/mod.rs"]
mod common;

use std::time::Instant;

use tabgen_core::config::RunConfig;
use tabgen_core::dataset::split;
use tabgen_core::eval::{evaluate, EvalOptions};
use tabgen_core::generator::fit;
use tabgen_core::sampler::sample_rows;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let rc = match std::env::args().nth(1) {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::from_json(include_str!("desk_benchmark.json"))?,
    };
    let t0 = Instant::now();
    let full = common::desk_table(2000, 7);
    let (train, test) = split(&full, 0.8, 1)?;
    let g = fit(&train, Some("label"), &rc)?;
    let t_fit = t0.elapsed().as_secs_f64();
    let synth = sample_rows(&g, train.n_rows(), &g.generation)?;
    let t_gen = t0.elapsed().as_secs_f64() - t_fit;
    let rep = evaluate(&train, &test, &synth, &EvalOptions { seed: 0, target: Some("label".into()), skip_mle: false })?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    println!("fit {t_fit:.1}s, generate {t_gen:.1}s, total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
