//! Seeded synthetic tables shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tabgen_core::dataset::{Cell, ColumnSpec, Schema, Table};

/// Gap between the two modes of `bimodal`, in units of its within-mode spread.
pub const MODE_GAP: f64 = 10.0;

/// Columns: `bimodal` (modes at 0 and 10, unit spread), correlated numerics
/// `u` and `v`, categoricals `color` (driven by `u`) and `shape` (driven by
/// the mode), and the binary target `label`.
pub fn desk_table(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let rows = (0..n)
        .map(|_| {
            let mode = rng.random_bool(0.5);
            let bimodal = std.sample(&mut rng) + if mode { MODE_GAP } else { 0.0 };
            let u: f64 = std.sample(&mut rng);
            let v = 0.8 * u + 0.6 * std.sample(&mut rng);
            let color = if rng.random_bool(0.1) {
                ["red", "green", "blue"][rng.random_range(0..3)]
            } else if u < -0.5 {
                "red"
            } else if u < 0.5 {
                "green"
            } else {
                "blue"
            };
            let shape = if rng.random_bool(if mode { 0.2 } else { 0.8 }) { "round" } else { "square" };
            let logit = 1.5 * u + if mode { 1.0 } else { -1.0 } + if shape == "round" { 0.5 } else { -0.5 };
            let p = 1.0 / (1.0 + (-logit).exp());
            let label = if rng.random_bool(p) { "yes" } else { "no" };
            vec![
                Cell::Num(round3(bimodal)),
                Cell::Num(round3(u)),
                Cell::Num(round3(v)),
                Cell::cat(color),
                Cell::cat(shape),
                Cell::cat(label),
            ]
        })
        .collect();
    let schema = Schema::new(vec![
        ColumnSpec::numeric("bimodal"),
        ColumnSpec::numeric("u"),
        ColumnSpec::numeric("v"),
        ColumnSpec::categorical("color"),
        ColumnSpec::categorical("shape"),
        ColumnSpec::categorical("label"),
    ])
    .unwrap()
    .with_target("label")
    .unwrap();
    Table::new(schema, rows).unwrap()
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Five columns, two numeric and three categorical, for quick model runs.
pub fn toy_table(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..10.0);
            let y = (x + rng.random_range(-1.0..1.0) * 2.0).round();
            let a = if x < 5.0 { "lo" } else { "hi" };
            let b = ["p", "q", "r"][rng.random_range(0..3)];
            let c = if rng.random_bool(if x > 3.0 { 0.7 } else { 0.3 }) { "t" } else { "f" };
            vec![Cell::Num((x * 100.0).round() / 100.0), Cell::Num(y), Cell::cat(a), Cell::cat(b), Cell::cat(c)]
        })
        .collect();
    let schema = Schema::new(vec![
        ColumnSpec::numeric("x"),
        ColumnSpec::numeric("y"),
        ColumnSpec::categorical("a"),
        ColumnSpec::categorical("b"),
        ColumnSpec::categorical("c"),
    ])
    .unwrap()
    .with_target("c")
    .unwrap();
    Table::new(schema, rows).unwrap()
}
