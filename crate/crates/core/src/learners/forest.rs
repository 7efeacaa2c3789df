//! Bagged CART forests: Gini-impurity classification trees and
//! variance-reduction regression trees, each split searched over a fresh random
//! subset of the input features.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// Features tried per split; `None` means `ceil(d / 3)`.
    pub features_per_split: Option<usize>,
    pub min_leaf: usize,
    /// Bootstrap resampling of the rows for each tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 100,
            features_per_split: None,
            min_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn features_for(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or(d.div_ceil(3))
    }

    fn validate(&self, d: usize) -> Result<()> {
        let k = self.features_for(d);
        if k == 0 || k > d {
            return Err(invalid(format!(
                "features per split must lie in 1..={d}, got {k}"
            )));
        }
        if self.num_trees == 0 || self.min_leaf == 0 {
            return Err(invalid("num_trees and min_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class frequencies (classification) or a single mean (regression).
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Copy)]
enum Labels<'a> {
    Classes(&'a [usize], usize),
    Values(ArrayView1<'a, f64>),
}

impl Labels<'_> {
    fn leaf(&self, rows: &[usize]) -> Vec<f64> {
        match *self {
            Labels::Classes(c, k) => {
                let mut f = vec![0.0; k];
                for &i in rows {
                    f[c[i]] += 1.0;
                }
                let n = rows.len() as f64;
                f.iter_mut().for_each(|v| *v /= n);
                f
            }
            Labels::Values(y) => {
                vec![rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64]
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match *self {
            Labels::Classes(c, _) => rows.iter().all(|&i| c[i] == c[rows[0]]),
            Labels::Values(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
        }
    }
}

/// Running impurity statistics for one side of a candidate split.
#[derive(Clone)]
enum Side {
    Gini { counts: Vec<f64>, n: f64, sum_sq: f64 },
    Var { n: f64, sum: f64, sum_sq: f64 },
}

impl Side {
    fn empty(labels: &Labels) -> Self {
        match labels {
            Labels::Classes(_, k) => Side::Gini {
                counts: vec![0.0; *k],
                n: 0.0,
                sum_sq: 0.0,
            },
            Labels::Values(_) => Side::Var {
                n: 0.0,
                sum: 0.0,
                sum_sq: 0.0,
            },
        }
    }

    fn add(&mut self, labels: &Labels, i: usize, sign: f64) {
        match (self, labels) {
            (Side::Gini { counts, n, sum_sq }, Labels::Classes(c, _)) => {
                let k = c[i];
                *sum_sq -= counts[k] * counts[k];
                counts[k] += sign;
                *sum_sq += counts[k] * counts[k];
                *n += sign;
            }
            (Side::Var { n, sum, sum_sq }, Labels::Values(y)) => {
                *n += sign;
                *sum += sign * y[i];
                *sum_sq += sign * y[i] * y[i];
            }
            _ => unreachable!("side and label kinds always match"),
        }
    }

    /// Node impurity times its size: `n * gini` or the sum of squared deviations.
    fn weighted_impurity(&self) -> f64 {
        match self {
            Side::Gini { n, sum_sq, .. } if *n > 0.0 => n - sum_sq / n,
            Side::Var { n, sum, sum_sq } if *n > 0.0 => (sum_sq - sum * sum / n).max(0.0),
            _ => 0.0,
        }
    }
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    labels: Labels<'a>,
    features: usize,
    min_leaf: usize,
    rng: rng::Rng,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn best_split_on(&self, rows: &mut [usize], feature: usize) -> Option<SplitChoice> {
        let x = self.x;
        rows.sort_by(|&a, &b| x[[a, feature]].total_cmp(&x[[b, feature]]));
        let mut left = Side::empty(&self.labels);
        let mut right = Side::empty(&self.labels);
        for &i in rows.iter() {
            right.add(&self.labels, i, 1.0);
        }
        let n = rows.len();
        let mut best: Option<SplitChoice> = None;
        for pos in 0..n - 1 {
            let i = rows[pos];
            left.add(&self.labels, i, 1.0);
            right.add(&self.labels, i, -1.0);
            let here = x[[i, feature]];
            let next = x[[rows[pos + 1], feature]];
            if here == next || pos + 1 < self.min_leaf || n - pos - 1 < self.min_leaf {
                continue;
            }
            let score = left.weighted_impurity() + right.weighted_impurity();
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mid = here + (next - here) / 2.0;
                // Keep the threshold strictly below `next` under rounding.
                let threshold = if mid < next { mid } else { here };
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        if rows.len() < 2 * self.min_leaf || self.labels.is_pure(rows) {
            self.nodes[id] = Node::Leaf(self.labels.leaf(rows));
            return id;
        }
        let d = self.x.ncols();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        // Draw `features` candidates; if none of them admits a split, keep
        // scanning the remaining features in random order.
        let mut best: Option<SplitChoice> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.features && best.is_some() {
                break;
            }
            if let Some(c) = self.best_split_on(rows, f) {
                if best.as_ref().is_none_or(|b| c.score < b.score) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            self.nodes[id] = Node::Leaf(self.labels.leaf(rows));
            return id;
        };
        let x = self.x;
        let mid = partition(rows, |&i| x[[i, split.feature]] <= split.threshold);
        let (l_rows, r_rows) = rows.split_at_mut(mid);
        let left = self.grow(l_rows);
        let right = self.grow(r_rows);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// In-place stable-enough partition; returns the count of rows satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(&rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

fn grow_tree<'a>(x: ArrayView2<'a, f64>, labels: Labels<'a>, cfg: &ForestConfig, seed: u64) -> Tree {
    let n = x.nrows();
    let mut rng = rng::seeded(seed);
    let mut rows: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut g = Grower {
        x,
        labels,
        features: cfg.features_for(x.ncols()),
        min_leaf: cfg.min_leaf,
        rng,
        nodes: Vec::new(),
    };
    g.grow(&mut rows);
    Tree { nodes: g.nodes }
}

fn grow_forest<'a>(x: ArrayView2<'a, f64>, labels: Labels<'a>, cfg: &ForestConfig) -> Result<Vec<Tree>> {
    cfg.validate(x.ncols())?;
    Ok((0..cfg.num_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, labels, cfg, rng::derive_seed(cfg.seed, t as u64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestClassifier {
    pub trees: Vec<Tree>,
    pub num_classes: usize,
    pub dim: usize,
}

impl ForestClassifier {
    /// Mean over trees of the leaf class frequencies.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.num_classes));
        for (row, mut p) in x.outer_iter().zip(out.outer_iter_mut()) {
            for t in &self.trees {
                for (acc, v) in p.iter_mut().zip(t.leaf_value(row)) {
                    *acc += v;
                }
            }
            p /= self.trees.len() as f64;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRegressor {
    pub trees: Vec<Tree>,
    pub dim: usize,
}

impl ForestRegressor {
    /// Mean over trees of the leaf means.
    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.outer_iter()
            .map(|row| {
                self.trees.iter().map(|t| t.leaf_value(row)[0]).sum::<f64>()
                    / self.trees.len() as f64
            })
            .collect()
    }
}

pub fn fit_forest_classifier(
    x: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &ForestConfig,
) -> Result<ForestClassifier> {
    super::check_labels(x.nrows(), labels, num_classes)?;
    let trees = grow_forest(x, Labels::Classes(labels, num_classes), cfg)?;
    Ok(ForestClassifier {
        trees,
        num_classes,
        dim: x.ncols(),
    })
}

pub fn fit_forest_regressor(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &ForestConfig,
) -> Result<ForestRegressor> {
    if x.nrows() < 2 {
        return Err(invalid("regression needs at least 2 rows"));
    }
    if x.nrows() != y.len() {
        return Err(invalid(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    let trees = grow_forest(x, Labels::Values(y), cfg)?;
    Ok(ForestRegressor {
        trees,
        dim: x.ncols(),
    })
}
