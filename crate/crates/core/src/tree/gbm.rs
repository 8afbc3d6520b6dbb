//! Gradient boosting with histogram split finding and leaf-wise growth.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{drop_missing, Cell, ColumnKind, Table};
use crate::error::{Error, Result};
use crate::util::sigmoid;

/// Smallest table the booster accepts.
pub const MIN_ROWS: usize = 20;
const MAX_NUMERIC_BINS: usize = 255;
/// Damping added to the hessian sum of every leaf.
const LEAF_L2: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub feature_fraction: f64,
    pub bagging_fraction: f64,
    pub min_split_gain: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            learning_rate: 0.1,
            max_depth: 6,
            max_leaves: 31,
            min_samples_leaf: 10,
            feature_fraction: 1.0,
            bagging_fraction: 1.0,
            min_split_gain: 0.0,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if self.n_trees == 0
            || self.max_depth == 0
            || self.max_leaves < 1
            || self.min_samples_leaf == 0
            || !(self.learning_rate > 0.0 && self.learning_rate <= 1.0)
            || !frac_ok(self.feature_fraction)
            || !frac_ok(self.bagging_fraction)
            || !(self.min_split_gain >= 0.0)
        {
            return Err(Error::Config(format!("invalid boosting parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Logistic,
    SquaredError,
}

/// What the ensemble predicts: membership of one class, or a numeric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Class { positive: String },
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `value <= threshold` goes left.
    Threshold(f64),
    /// Category codes seen at this node during training, per side.
    Categories { left: Vec<u32>, right: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        /// Branch for missing or unseen values: the side with more training rows.
        default_left: bool,
    },
    Leaf {
        value: f64,
        /// 1-based, consecutive within a tree in depth-first order.
        leaf_id: u32,
    },
}

/// Node-array tree; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_leaves: usize,
}

impl Tree {
    fn leaf(&self, value_of: impl Fn(usize) -> f64) -> (u32, f64) {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, leaf_id } => return (*leaf_id, *value),
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                    default_left,
                } => {
                    let v = value_of(*feature);
                    let go_left = if v.is_nan() {
                        *default_left
                    } else {
                        match rule {
                            SplitRule::Threshold(th) => v <= *th,
                            SplitRule::Categories { left, right } => {
                                let code = v as u32;
                                if left.contains(&code) {
                                    true
                                } else if right.contains(&code) {
                                    false
                                } else {
                                    *default_left
                                }
                            }
                        }
                    };
                    idx = if go_left { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub target: String,
    pub target_spec: TargetSpec,
    pub objective: Objective,
    pub features: Vec<FeatureInfo>,
    pub base_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
    pub params: GbmParams,
}

/// `n x T` matrix of 1-based leaf ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafIndexMatrix {
    n_rows: usize,
    n_trees: usize,
    data: Vec<u32>,
}

impl LeafIndexMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_trees(&self) -> usize {
        self.n_trees
    }
    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.n_trees..(i + 1) * self.n_trees]
    }
    pub fn get(&self, i: usize, k: usize) -> u32 {
        self.data[i * self.n_trees + k]
    }
    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.data.chunks(self.n_trees.max(1)).take(self.n_rows)
    }
}

impl Ensemble {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.trees.iter().map(|t| t.n_leaves).collect()
    }

    pub fn max_leaves(&self) -> usize {
        self.trees.iter().map(|t| t.n_leaves).max().unwrap_or(0)
    }

    /// Column-major feature values for `t`; categories become their fit-time
    /// code, while missing or unseen values become NaN.
    fn feature_columns(&self, t: &Table) -> Result<Vec<Vec<f64>>> {
        self.features
            .iter()
            .map(|f| {
                let idx = t.schema().index_of(&f.name).ok_or_else(|| {
                    Error::Schema(format!("feature column {:?} missing from table", f.name))
                })?;
                let kind = t.schema().columns[idx].kind;
                match (&f.kind, kind) {
                    (FeatureKind::Numeric, ColumnKind::Numeric) => {
                        Ok(t.column(idx).map(|c| c.as_num().unwrap_or(f64::NAN)).collect())
                    }
                    (FeatureKind::Categorical { categories }, ColumnKind::Categorical) => {
                        let lookup: BTreeMap<&str, f64> = categories
                            .iter()
                            .enumerate()
                            .map(|(i, c)| (c.as_str(), i as f64))
                            .collect();
                        Ok(t.column(idx)
                            .map(|c| c.as_cat().and_then(|s| lookup.get(s).copied()).unwrap_or(f64::NAN))
                            .collect())
                    }
                    _ => Err(Error::Schema(format!(
                        "feature column {:?} changed kind since fitting",
                        f.name
                    ))),
                }
            })
            .collect()
    }

    pub fn apply_leaves(&self, t: &Table) -> Result<LeafIndexMatrix> {
        let cols = self.feature_columns(t)?;
        let n = t.n_rows();
        let cols = &cols;
        let data = (0..n)
            .flat_map(|row| self.trees.iter().map(move |tree| tree.leaf(|f| cols[f][row]).0))
            .collect();
        Ok(LeafIndexMatrix {
            n_rows: n,
            n_trees: self.trees.len(),
            data,
        })
    }

    /// Raw additive score per row.
    pub fn raw_scores(&self, t: &Table) -> Result<Vec<f64>> {
        let cols = self.feature_columns(t)?;
        Ok((0..t.n_rows())
            .map(|i| {
                self.base_score
                    + self.shrinkage * self.trees.iter().map(|tr| tr.leaf(|f| cols[f][i]).1).sum::<f64>()
            })
            .collect())
    }

    /// Probabilities for the logistic objective, values for squared error.
    pub fn predict(&self, t: &Table) -> Result<Vec<f64>> {
        let raw = self.raw_scores(t)?;
        Ok(match self.objective {
            Objective::Logistic => raw.into_iter().map(sigmoid).collect(),
            Objective::SquaredError => raw,
        })
    }
}

/// The majority class (ties broken by name) of a categorical column.
pub fn majority_class(t: &Table, column: usize) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in t.column(column).filter_map(Cell::as_cat) {
        *counts.entry(c).or_default() += 1;
    }
    let max = counts.values().copied().max()?;
    counts
        .into_iter()
        .find(|(_, n)| *n == max)
        .map(|(c, _)| c.to_owned())
}

/// Fits the ensemble on `target`. Categorical targets are reduced to
/// majority-class-versus-rest with a logistic objective; numeric targets use
/// squared error.
pub fn fit_gbm(t: &Table, target: &str, params: &GbmParams, seed: u64) -> Result<Ensemble> {
    let tidx = t
        .schema()
        .index_of(target)
        .ok_or_else(|| Error::Schema(format!("target {target:?} is not a column")))?;
    let spec = match t.schema().columns[tidx].kind {
        ColumnKind::Numeric => TargetSpec::Numeric,
        ColumnKind::Categorical => TargetSpec::Class {
            positive: majority_class(&drop_missing(t), tidx)
                .ok_or_else(|| Error::invalid("target column has no values"))?,
        },
    };
    fit_gbm_with(t, target, spec, params, seed)
}

pub fn fit_gbm_with(
    t: &Table,
    target: &str,
    spec: TargetSpec,
    params: &GbmParams,
    seed: u64,
) -> Result<Ensemble> {
    params.validate()?;
    let t = drop_missing(t);
    let tidx = t
        .schema()
        .index_of(target)
        .ok_or_else(|| Error::Schema(format!("target {target:?} is not a column")))?;
    if t.n_rows() < MIN_ROWS {
        return Err(Error::invalid(format!(
            "boosting needs at least {MIN_ROWS} complete rows, got {}",
            t.n_rows()
        )));
    }
    let (objective, y): (Objective, Vec<f64>) = match &spec {
        TargetSpec::Class { positive } => {
            if t.schema().columns[tidx].kind != ColumnKind::Categorical {
                return Err(Error::Schema(format!("class target {target:?} is numeric")));
            }
            let y: Vec<f64> = t
                .column(tidx)
                .map(|c| f64::from(u8::from(c.as_cat() == Some(positive.as_str()))))
                .collect();
            (Objective::Logistic, y)
        }
        TargetSpec::Numeric => {
            if t.schema().columns[tidx].kind != ColumnKind::Numeric {
                return Err(Error::Schema(format!("numeric target {target:?} is categorical")));
            }
            (Objective::SquaredError, t.numeric_values(tidx))
        }
    };
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::invalid(format!("target {target:?} is constant")));
    }

    let mut features = Vec::new();
    let mut columns = Vec::new();
    for (c, col) in t.schema().columns.iter().enumerate() {
        if c == tidx {
            continue;
        }
        match col.kind {
            ColumnKind::Numeric => {
                features.push(FeatureInfo {
                    name: col.name.clone(),
                    kind: FeatureKind::Numeric,
                });
                columns.push(t.numeric_values(c));
            }
            ColumnKind::Categorical => {
                let cats: Vec<String> = t
                    .column(c)
                    .filter_map(Cell::as_cat)
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .map(str::to_owned)
                    .collect();
                let codes = t
                    .column(c)
                    .map(|cell| {
                        let s = cell.as_cat().expect("complete categorical row");
                        cats.binary_search_by(|x| x.as_str().cmp(s)).expect("observed") as f64
                    })
                    .collect();
                features.push(FeatureInfo {
                    name: col.name.clone(),
                    kind: FeatureKind::Categorical { categories: cats },
                });
                columns.push(codes);
            }
        }
    }
    if features.is_empty() {
        return Err(Error::invalid("boosting needs at least one feature column"));
    }

    let (base_score, trees) = boost(&columns, &features, &y, objective, params, seed);
    Ok(Ensemble {
        target: target.to_owned(),
        target_spec: spec,
        objective,
        features,
        base_score,
        shrinkage: params.learning_rate,
        trees,
        params: params.clone(),
    })
}

enum Binner {
    Numeric { uppers: Vec<f64> },
    Categorical { n: usize },
}

impl Binner {
    fn new(values: &[f64], kind: &FeatureKind) -> Self {
        match kind {
            FeatureKind::Categorical { categories } => Binner::Categorical {
                n: categories.len(),
            },
            FeatureKind::Numeric => {
                let mut distinct = values.to_vec();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                let uppers = if distinct.len() <= MAX_NUMERIC_BINS {
                    distinct
                } else {
                    let nd = distinct.len();
                    let mut u: Vec<f64> = (1..=MAX_NUMERIC_BINS)
                        .map(|k| distinct[(k * nd).div_ceil(MAX_NUMERIC_BINS) - 1])
                        .collect();
                    u.dedup();
                    u
                };
                Binner::Numeric { uppers }
            }
        }
    }

    fn n_bins(&self) -> usize {
        match self {
            Binner::Numeric { uppers } => uppers.len(),
            Binner::Categorical { n } => *n,
        }
    }

    fn bin(&self, v: f64) -> u32 {
        match self {
            Binner::Numeric { uppers } => uppers.partition_point(|&u| u < v).min(uppers.len() - 1) as u32,
            Binner::Categorical { .. } => v as u32,
        }
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    rule: SplitRule,
    left_rows: Vec<usize>,
    right_rows: Vec<usize>,
}

struct OpenLeaf {
    node: usize,
    depth: usize,
    rows: Vec<usize>,
    best: Option<Candidate>,
}

struct Grower<'a> {
    binned: &'a [Vec<u32>],
    binners: &'a [Binner],
    params: &'a GbmParams,
    features: Vec<usize>,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[usize], resid: &[f64], depth: usize) -> Option<Candidate> {
        let min_leaf = self.params.min_samples_leaf;
        if depth >= self.params.max_depth || rows.len() < 2 * min_leaf {
            return None;
        }
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&r| resid[r]).sum();
        let parent = total * total / n;
        let mut best: Option<(f64, usize, SplitRule, Vec<bool>)> = None;

        for &f in &self.features {
            let nb = self.binners[f].n_bins();
            let mut sum = vec![0.0; nb];
            let mut cnt = vec![0usize; nb];
            for &r in rows {
                let b = self.binned[f][r] as usize;
                sum[b] += resid[r];
                cnt[b] += 1;
            }
            // Order of bins to scan: numeric bins in value order, categories by mean residual.
            let order: Vec<usize> = match &self.binners[f] {
                Binner::Numeric { .. } => (0..nb).filter(|&b| cnt[b] > 0).collect(),
                Binner::Categorical { .. } => {
                    let mut o: Vec<usize> = (0..nb).filter(|&b| cnt[b] > 0).collect();
                    o.sort_by(|&a, &b| {
                        (sum[a] / cnt[a] as f64)
                            .total_cmp(&(sum[b] / cnt[b] as f64))
                            .then(a.cmp(&b))
                    });
                    o
                }
            };
            let (mut gl, mut nl) = (0.0, 0usize);
            for (k, &b) in order.iter().enumerate().take(order.len().saturating_sub(1)) {
                gl += sum[b];
                nl += cnt[b];
                let nr = rows.len() - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let gr = total - gl;
                let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                if gain > self.params.min_split_gain
                    && gain > 1e-12 * (1.0 + parent.abs())
                    && best.as_ref().is_none_or(|(g, ..)| gain > *g)
                {
                    let (rule, left_bins) = match &self.binners[f] {
                        Binner::Numeric { uppers } => (SplitRule::Threshold(uppers[b]), {
                            let mut v = vec![false; nb];
                            v[..=b].iter_mut().for_each(|x| *x = true);
                            v
                        }),
                        Binner::Categorical { .. } => {
                            let mut left: Vec<u32> = order[..=k].iter().map(|&c| c as u32).collect();
                            let mut right: Vec<u32> = order[k + 1..].iter().map(|&c| c as u32).collect();
                            left.sort_unstable();
                            right.sort_unstable();
                            let mut v = vec![false; nb];
                            for &c in &left {
                                v[c as usize] = true;
                            }
                            (SplitRule::Categories { left, right }, v)
                        }
                    };
                    best = Some((gain, f, rule, left_bins));
                }
            }
        }

        best.map(|(gain, feature, rule, left_bins)| {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&r| left_bins[self.binned[feature][r] as usize]);
            Candidate {
                gain,
                feature,
                rule,
                left_rows,
                right_rows,
            }
        })
    }

    /// Leaf-wise growth: repeatedly split the open leaf with the largest gain.
    fn grow(&self, bag: Vec<usize>, grad: &[f64], hess: &[f64]) -> Tree {
        let resid: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut nodes = vec![Node::Leaf {
            value: 0.0,
            leaf_id: 0,
        }];
        let best = self.best_split(&bag, &resid, 0);
        let mut open = vec![OpenLeaf {
            node: 0,
            depth: 0,
            rows: bag,
            best,
        }];
        let mut closed: Vec<OpenLeaf> = Vec::new();

        while open.len() + closed.len() < self.params.max_leaves {
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.as_ref().map(|c| (i, c.gain)))
                .fold(None::<(usize, f64)>, |acc, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                });
            let Some((i, _)) = pick else { break };
            let leaf = open.swap_remove(i);
            let cand = leaf.best.expect("picked leaf has a split");
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf {
                value: 0.0,
                leaf_id: 0,
            });
            nodes.push(Node::Leaf {
                value: 0.0,
                leaf_id: 0,
            });
            nodes[leaf.node] = Node::Split {
                feature: cand.feature,
                rule: cand.rule,
                left: li,
                right: ri,
                default_left: cand.left_rows.len() >= cand.right_rows.len(),
            };
            for (node, rows) in [(li, cand.left_rows), (ri, cand.right_rows)] {
                let best = self.best_split(&rows, &resid, leaf.depth + 1);
                open.push(OpenLeaf {
                    node,
                    depth: leaf.depth + 1,
                    rows,
                    best,
                });
            }
            // keep open leaves in a stable order so ties pick the earliest node
            open.sort_by_key(|l| l.node);
            let (still_open, done): (Vec<_>, Vec<_>) = open.into_iter().partition(|l| l.best.is_some());
            open = still_open;
            closed.extend(done);
        }

        for leaf in open.iter().chain(&closed) {
            let g: f64 = leaf.rows.iter().map(|&r| grad[r]).sum();
            let h: f64 = leaf.rows.iter().map(|&r| hess[r]).sum();
            nodes[leaf.node] = Node::Leaf {
                value: -g / (h + LEAF_L2),
                leaf_id: 0,
            };
        }
        let n_leaves = number_leaves(&mut nodes);
        Tree { nodes, n_leaves }
    }
}

/// Assigns consecutive 1-based leaf ids in depth-first, left-first order.
fn number_leaves(nodes: &mut [Node]) -> usize {
    let mut next = 0u32;
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        match &mut nodes[i] {
            Node::Leaf { leaf_id, .. } => {
                next += 1;
                *leaf_id = next;
            }
            Node::Split { left, right, .. } => {
                let (l, r) = (*left, *right);
                stack.push(r);
                stack.push(l);
            }
        }
    }
    next as usize
}

fn boost(
    columns: &[Vec<f64>],
    features: &[FeatureInfo],
    y: &[f64],
    objective: Objective,
    params: &GbmParams,
    seed: u64,
) -> (f64, Vec<Tree>) {
    let n = y.len();
    let binners: Vec<Binner> = columns
        .iter()
        .zip(features)
        .map(|(c, f)| Binner::new(c, &f.kind))
        .collect();
    let binned: Vec<Vec<u32>> = columns
        .iter()
        .zip(&binners)
        .map(|(c, b)| c.iter().map(|&v| b.bin(v)).collect())
        .collect();

    let mean = y.iter().sum::<f64>() / n as f64;
    let base = match objective {
        Objective::SquaredError => mean,
        Objective::Logistic => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };
    let mut raw = vec![base; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bag = ((params.bagging_fraction * n as f64).round() as usize).clamp(1, n);
    let n_feat = ((params.feature_fraction * columns.len() as f64).ceil() as usize).clamp(1, columns.len());

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            match objective {
                Objective::SquaredError => {
                    grad[i] = raw[i] - y[i];
                    hess[i] = 1.0;
                }
                Objective::Logistic => {
                    let p = sigmoid(raw[i]);
                    grad[i] = p - y[i];
                    hess[i] = (p * (1.0 - p)).max(1e-12);
                }
            }
        }
        let mut bag: Vec<usize> = if n_bag < n {
            sample(&mut rng, n, n_bag).into_vec()
        } else {
            (0..n).collect()
        };
        bag.sort_unstable();
        let mut feats: Vec<usize> = if n_feat < columns.len() {
            sample(&mut rng, columns.len(), n_feat).into_vec()
        } else {
            (0..columns.len()).collect()
        };
        feats.sort_unstable();

        let grower = Grower {
            binned: &binned,
            binners: &binners,
            params,
            features: feats,
        };
        let tree = grower.grow(bag, &grad, &hess);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += params.learning_rate * tree.leaf(|f| columns[f][i]).1;
        }
        trees.push(tree);
    }
    (base, trees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnSpec, Schema};

    fn stump(threshold: f64, lo: f64, hi: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    rule: SplitRule::Threshold(threshold),
                    left: 1,
                    right: 2,
                    default_left: true,
                },
                Node::Leaf { value: lo, leaf_id: 1 },
                Node::Leaf { value: hi, leaf_id: 2 },
            ],
            n_leaves: 2,
        }
    }

    fn one_feature_table(xs: &[f64]) -> Table {
        let schema = Schema::new(vec![ColumnSpec::numeric("x")]).unwrap();
        Table::new(schema, xs.iter().map(|&x| vec![Cell::Num(x)]).collect()).unwrap()
    }

    fn toy_ensemble(trees: Vec<Tree>, base: f64, shrinkage: f64, objective: Objective) -> Ensemble {
        Ensemble {
            target: "y".into(),
            target_spec: TargetSpec::Numeric,
            objective,
            features: vec![FeatureInfo {
                name: "x".into(),
                kind: FeatureKind::Numeric,
            }],
            base_score: base,
            shrinkage,
            trees,
            params: GbmParams::default(),
        }
    }

    #[test]
    fn threshold_ties_route_left() {
        let e = toy_ensemble(vec![stump(2.5, 0.0, 0.0)], 0.0, 1.0, Objective::SquaredError);
        let j = e.apply_leaves(&one_feature_table(&[2.5, 2.6, -1.0])).unwrap();
        assert_eq!((j.get(0, 0), j.get(1, 0), j.get(2, 0)), (1, 2, 1));
    }

    #[test]
    fn hand_traced_two_tree_prediction() {
        // tree 1: x <= 1 -> -1 else 2 ; tree 2: x <= 3 -> 0.5 else -0.5
        let e = toy_ensemble(
            vec![stump(1.0, -1.0, 2.0), stump(3.0, 0.5, -0.5)],
            10.0,
            0.1,
            Objective::SquaredError,
        );
        let p = e.predict(&one_feature_table(&[0.0, 2.0, 3.0, 4.0])).unwrap();
        let expected = [10.0 + 0.1 * (-1.0 + 0.5), 10.0 + 0.1 * (2.0 + 0.5), 10.0 + 0.1 * (2.0 + 0.5), 10.0 + 0.1 * (2.0 - 0.5)];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_leaves_give_base_score() {
        let single = Tree {
            nodes: vec![Node::Leaf { value: 0.0, leaf_id: 1 }],
            n_leaves: 1,
        };
        let e = toy_ensemble(vec![single], 3.0, 0.1, Objective::SquaredError);
        let t = one_feature_table(&[1.0, 5.0, -2.0]);
        assert!(e.predict(&t).unwrap().iter().all(|&v| v == 3.0));
        assert!(e.apply_leaves(&t).unwrap().rows().all(|r| r == [1]));
        let e = toy_ensemble(vec![stump(0.0, -5.0, 5.0)], 0.0, 1.0, Objective::Logistic);
        assert!(e.predict(&t).unwrap().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn leaf_numbering_is_depth_first() {
        let mut nodes = vec![
            Node::Split {
                feature: 0,
                rule: SplitRule::Threshold(0.0),
                left: 1,
                right: 2,
                default_left: true,
            },
            Node::Split {
                feature: 0,
                rule: SplitRule::Threshold(-1.0),
                left: 3,
                right: 4,
                default_left: true,
            },
            Node::Leaf { value: 0.0, leaf_id: 0 },
            Node::Leaf { value: 0.0, leaf_id: 0 },
            Node::Leaf { value: 0.0, leaf_id: 0 },
        ];
        assert_eq!(number_leaves(&mut nodes), 3);
        let ids: Vec<u32> = nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { leaf_id, .. } => Some(*leaf_id),
                _ => None,
            })
            .collect();
        assert_eq!(ids, vec![3, 1, 2]);
    }

    #[test]
    fn binner_uppers_route_like_thresholds() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        let b = Binner::new(&xs, &FeatureKind::Numeric);
        let Binner::Numeric { uppers } = &b else { unreachable!() };
        assert!(uppers.len() <= MAX_NUMERIC_BINS);
        for &x in &xs {
            let bin = b.bin(x) as usize;
            assert!(x <= uppers[bin]);
            if bin > 0 {
                assert!(x > uppers[bin - 1]);
            }
        }
    }
}
