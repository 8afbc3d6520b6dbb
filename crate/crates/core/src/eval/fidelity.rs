//! Column-wise (shape) and pair-wise (trend) similarity between a real and a
//! synthetic table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Cell, ColumnKind, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMetric {
    /// One minus the two-sample Kolmogorov–Smirnov statistic.
    KsComplement,
    /// One minus the total variation distance of category frequencies.
    TvComplement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnShape {
    pub column: String,
    pub metric: ShapeMetric,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    /// Mean of the column scores.
    pub score: f64,
    pub columns: Vec<ColumnShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMetric {
    /// `1 - |rho_real - rho_synth| / 2` with Pearson correlations.
    CorrelationSimilarity,
    /// One minus the total variation distance of the joint frequency tables.
    ContingencySimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTrend {
    pub columns: [String; 2],
    pub metric: TrendMetric,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// Mean of the pair scores.
    pub score: f64,
    pub pairs: Vec<PairTrend>,
    /// Numeric columns inside mixed pairs are cut at real-data deciles.
    pub numeric_discretization: String,
}

fn check_pair(real: &Table, synth: &Table) -> Result<()> {
    if !real.schema().same_layout(synth.schema()) {
        return Err(Error::Schema("real and synthetic tables have different columns".into()));
    }
    if real.is_empty() || synth.is_empty() {
        return Err(Error::invalid("fidelity metrics need nonempty tables"));
    }
    Ok(())
}

fn present_numbers(t: &Table, col: usize) -> Vec<f64> {
    t.column(col).filter_map(Cell::as_num).collect()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS statistic needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

fn frequencies<K: Ord>(items: impl Iterator<Item = K>) -> BTreeMap<K, f64> {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    let mut n = 0usize;
    for k in items {
        *counts.entry(k).or_default() += 1;
        n += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
}

fn tv<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    crate::sampler::total_variation(p, q)
}

pub fn shape_report(real: &Table, synth: &Table) -> Result<ShapeReport> {
    check_pair(real, synth)?;
    let mut columns = Vec::with_capacity(real.n_cols());
    for (c, spec) in real.schema().columns.iter().enumerate() {
        let (metric, score) = match spec.kind {
            ColumnKind::Numeric => {
                let d = ks_statistic(&present_numbers(real, c), &present_numbers(synth, c))
                    .map_err(|_| Error::invalid(format!("column {:?} has no values in one table", spec.name)))?;
                (ShapeMetric::KsComplement, 1.0 - d)
            }
            ColumnKind::Categorical => {
                let p = frequencies(real.column(c).filter_map(Cell::as_cat));
                let q = frequencies(synth.column(c).filter_map(Cell::as_cat));
                if p.is_empty() || q.is_empty() {
                    return Err(Error::invalid(format!("column {:?} has no values in one table", spec.name)));
                }
                (ShapeMetric::TvComplement, 1.0 - tv(&p, &q))
            }
        };
        columns.push(ColumnShape {
            column: spec.name.clone(),
            metric,
            score: score.clamp(0.0, 1.0),
        });
    }
    let score = columns.iter().map(|c| c.score).sum::<f64>() / columns.len() as f64;
    Ok(ShapeReport { score, columns })
}

pub fn shape_score(real: &Table, synth: &Table) -> Result<f64> {
    Ok(shape_report(real, synth)?.score)
}

/// Pearson correlation; zero when either side has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let r = sxy / (sxx * syy).sqrt();
    if r.is_finite() {
        r.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interior decile cut points of `values`, duplicates removed.
pub fn decile_edges(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..10).map(|k| quantile_sorted(&sorted, k as f64 / 10.0)).collect();
    edges.dedup();
    edges
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Cat(String),
    Bin(usize),
}

fn key_of(cell: &Cell, edges: Option<&[f64]>) -> Option<Key> {
    match (cell, edges) {
        (Cell::Cat(s), _) => Some(Key::Cat(s.to_string())),
        (Cell::Num(v), Some(e)) => Some(Key::Bin(e.partition_point(|x| x < v))),
        _ => None,
    }
}

fn joint(t: &Table, a: usize, b: usize, ea: Option<&[f64]>, eb: Option<&[f64]>) -> BTreeMap<(Key, Key), f64> {
    frequencies(
        t.rows()
            .iter()
            .filter_map(|r| Some((key_of(&r[a], ea)?, key_of(&r[b], eb)?))),
    )
}

fn paired_numbers(t: &Table, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
    t.rows()
        .iter()
        .filter_map(|r| Some((r[a].as_num()?, r[b].as_num()?)))
        .unzip()
}

pub fn trend_report(real: &Table, synth: &Table) -> Result<TrendReport> {
    check_pair(real, synth)?;
    let cols = &real.schema().columns;
    if cols.len() < 2 {
        return Err(Error::invalid("trend needs at least two columns"));
    }
    let edges: Vec<Option<Vec<f64>>> = cols
        .iter()
        .enumerate()
        .map(|(c, s)| s.is_numeric().then(|| decile_edges(&present_numbers(real, c))))
        .collect();
    let mut pairs = Vec::new();
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            let both_numeric = cols[a].is_numeric() && cols[b].is_numeric();
            let (metric, score) = if both_numeric {
                let (rx, ry) = paired_numbers(real, a, b);
                let (sx, sy) = paired_numbers(synth, a, b);
                let diff = (pearson(&rx, &ry) - pearson(&sx, &sy)).abs();
                (TrendMetric::CorrelationSimilarity, 1.0 - diff / 2.0)
            } else {
                let (ea, eb) = (edges[a].as_deref(), edges[b].as_deref());
                let p = joint(real, a, b, ea, eb);
                let q = joint(synth, a, b, ea, eb);
                let score = if p.is_empty() || q.is_empty() { 0.0 } else { 1.0 - tv(&p, &q) };
                (TrendMetric::ContingencySimilarity, score)
            };
            pairs.push(PairTrend {
                columns: [cols[a].name.clone(), cols[b].name.clone()],
                metric,
                score: score.clamp(0.0, 1.0),
            });
        }
    }
    let score = pairs.iter().map(|p| p.score).sum::<f64>() / pairs.len() as f64;
    Ok(TrendReport {
        score,
        pairs,
        numeric_discretization: "deciles of the real column".into(),
    })
}

pub fn trend_score(real: &Table, synth: &Table) -> Result<f64> {
    Ok(trend_report(real, synth)?.score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnSpec, Schema};

    fn table(rows: Vec<Vec<Cell>>, kinds: &[bool]) -> Table {
        let cols = kinds
            .iter()
            .enumerate()
            .map(|(i, &num)| {
                if num {
                    ColumnSpec::numeric(format!("c{i}"))
                } else {
                    ColumnSpec::categorical(format!("c{i}"))
                }
            })
            .collect();
        Table::new(Schema::new(cols).unwrap(), rows).unwrap()
    }

    #[test]
    fn ks_hand_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        // F_a jumps to 1/2 at 1, F_b is still 0 there
        assert_eq!(ks_statistic(&[1.0, 3.0], &[2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn disjoint_categories_score_zero() {
        let r = table(vec![vec![Cell::cat("a")], vec![Cell::cat("b")]], &[false]);
        let s = table(vec![vec![Cell::cat("c")], vec![Cell::cat("d")]], &[false]);
        assert_eq!(shape_score(&r, &s).unwrap(), 0.0);
        assert_eq!(shape_score(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn opposite_correlation_scores_zero() {
        let r = table((0..5).map(|i| vec![Cell::Num(i as f64), Cell::Num(2.0 * i as f64)]).collect(), &[true, true]);
        let s = table((0..5).map(|i| vec![Cell::Num(i as f64), Cell::Num(-(i as f64))]).collect(), &[true, true]);
        let rep = trend_report(&r, &s).unwrap();
        assert!(rep.score.abs() < 1e-12);
        assert_eq!(trend_score(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn contingency_against_hand_joint() {
        // real: x == y always (joint mass 1/2 on (a,a) and (b,b));
        // synth: independent, 1/4 on each cell. TV = 0.5 * (1/4*4) = 0.5.
        let rows = |pairs: &[(&str, &str)]| pairs.iter().map(|(x, y)| vec![Cell::cat(x), Cell::cat(y)]).collect();
        let r = table(rows(&[("a", "a"), ("b", "b"), ("a", "a"), ("b", "b")]), &[false, false]);
        let s = table(rows(&[("a", "a"), ("a", "b"), ("b", "a"), ("b", "b")]), &[false, false]);
        assert!((trend_score(&r, &s).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decile_edges_of_uniform_grid() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let e = decile_edges(&v);
        assert_eq!(e, (1..10).map(|k| 10.0 * k as f64).collect::<Vec<_>>());
        assert_eq!(decile_edges(&[2.0; 7]), vec![2.0]);
    }
}
