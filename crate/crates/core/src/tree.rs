//! Depth-limited CART trees.
//!
//! Trees are grown greedily: at each node the (feature, threshold) pair
//! minimizing the weighted child impurity is chosen, with an optional extra
//! cost `sparse_cost` charged whenever the candidate feature has not yet been
//! used in this tree. That cost steers ties (and near-ties, as arise between
//! correlated columns) toward re-using features, producing feature-sparse
//! trees. Classification leaves store the class-1 probability so downstream
//! pruning can treat predictions as real-valued columns.
//!
//! A fitted tree records its used-feature indicator vector and the
//! accumulated weighted impurity decrease per feature; the latter feeds MDI
//! importance scores. A tree of depth `d` has at most `2^d - 1` internal
//! nodes and therefore uses at most `2^d - 1` distinct features.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Task};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot fit a tree on zero rows")]
    EmptyData,
    #[error("gini criterion requires labels in {{0,1}}, got {0}")]
    NonBinaryTarget(f64),
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("importance requires at least one tree")]
    NoTrees,
}

/// Node impurity measure used to score splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    /// Gini impurity over {0,1} labels.
    Gini,
    /// Within-node variance of real targets.
    SquaredError,
}

/// Tree-fitting parameters.
#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub criterion: SplitCriterion,
    /// Maximum node depth; a stump has depth 1.
    pub max_depth: usize,
    /// Extra impurity cost charged when a split introduces a feature the
    /// tree has not used yet. Zero recovers standard CART.
    pub sparse_cost: f64,
    pub min_samples_leaf: usize,
    /// When set, each split considers only this many features, drawn
    /// uniformly without replacement.
    pub feature_subsample: Option<usize>,
}

impl TreeConfig {
    pub fn new(criterion: SplitCriterion, max_depth: usize) -> Self {
        Self {
            criterion,
            max_depth,
            sparse_cost: 0.0,
            min_samples_leaf: 1,
            feature_subsample: None,
        }
    }

    pub fn with_sparse_cost(mut self, cost: f64) -> Self {
        self.sparse_cost = cost;
        self
    }

    pub fn with_feature_subsample(mut self, k: usize) -> Self {
        self.feature_subsample = Some(k);
        self
    }
}

/// A single tree node. Rows route left when `value <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted depth-limited CART tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    nodes: Vec<Node>,
    depth: usize,
    n_features: usize,
    used: Vec<bool>,
    impurity_decreases: Vec<f64>,
}

impl TreeModel {
    /// Fit on all rows of `x`.
    pub fn fit(
        x: ArrayView2<'_, f64>,
        targets: ArrayView1<'_, f64>,
        config: &TreeConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, TreeError> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Self::fit_on_rows(x, targets, &rows, config, rng)
    }

    /// Fit on the given row indices (repeats allowed, as in a bootstrap bag).
    pub fn fit_on_rows(
        x: ArrayView2<'_, f64>,
        targets: ArrayView1<'_, f64>,
        rows: &[usize],
        config: &TreeConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, TreeError> {
        if rows.is_empty() || x.nrows() == 0 {
            return Err(TreeError::EmptyData);
        }
        if targets.len() != x.nrows() {
            return Err(TreeError::DimensionMismatch {
                expected: x.nrows(),
                got: targets.len(),
            });
        }
        if config.max_depth == 0 {
            return Err(TreeError::InvalidParam("max_depth must be >= 1".into()));
        }
        if config.sparse_cost < 0.0 {
            return Err(TreeError::InvalidParam("sparse_cost must be >= 0".into()));
        }
        for &r in rows {
            let t = targets[r];
            if !t.is_finite() {
                return Err(TreeError::NonFiniteTarget(r));
            }
            if config.criterion == SplitCriterion::Gini && t != 0.0 && t != 1.0 {
                return Err(TreeError::NonBinaryTarget(t));
            }
        }

        let p = x.ncols();
        let mut builder = Builder {
            x,
            targets,
            config,
            total_rows: rows.len(),
            nodes: Vec::new(),
            used: vec![false; p],
            decreases: vec![0.0; p],
            max_seen_depth: 0,
            rng,
        };
        builder.grow(rows.to_vec(), 0);
        Ok(TreeModel {
            nodes: builder.nodes,
            depth: builder.max_seen_depth,
            n_features: p,
            used: builder.used,
            impurity_decreases: builder.decreases,
        })
    }

    /// Convenience wrapper fitting on a dataset's own labels with the
    /// criterion implied by its task.
    pub fn fit_dataset(
        data: &Dataset,
        max_depth: usize,
        sparse_cost: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, TreeError> {
        let criterion = match data.task() {
            Task::Classification => SplitCriterion::Gini,
            Task::Regression => SplitCriterion::SquaredError,
        };
        let config = TreeConfig::new(criterion, max_depth).with_sparse_cost(sparse_cost);
        Self::fit(data.features(), data.labels(), &config, rng)
    }

    /// Leaf value for one row.
    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Leaf values for every row of `x`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, TreeError> {
        if x.ncols() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        Ok(Array1::from_iter(
            x.outer_iter().map(|row| self.predict_row(row)),
        ))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Indicator vector: `used()[j]` is true when feature `j` appears in at
    /// least one split of this tree.
    pub fn used(&self) -> &[bool] {
        &self.used
    }

    /// Indices of the features this tree splits on, ascending.
    pub fn used_features(&self) -> Vec<usize> {
        (0..self.n_features).filter(|&j| self.used[j]).collect()
    }

    pub fn n_used_features(&self) -> usize {
        self.used.iter().filter(|&&u| u).count()
    }

    /// Accumulated weighted impurity decrease per feature.
    pub fn impurity_decreases(&self) -> &[f64] {
        &self.impurity_decreases
    }
}

/// MDI importance scores: the per-feature mean over trees of accumulated
/// impurity decrease, normalized to sum to one. `all_zero` flags a
/// degenerate ensemble with no splits at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mdi {
    pub values: Vec<f64>,
    pub all_zero: bool,
}

/// Mean-decrease-impurity scores over an ensemble of trees.
pub fn mdi_importances(trees: &[TreeModel]) -> Result<Mdi, TreeError> {
    let first = trees.first().ok_or(TreeError::NoTrees)?;
    let p = first.n_features;
    let mut totals = vec![0.0; p];
    for tree in trees {
        if tree.n_features != p {
            return Err(TreeError::DimensionMismatch {
                expected: p,
                got: tree.n_features,
            });
        }
        for (t, d) in totals.iter_mut().zip(&tree.impurity_decreases) {
            *t += d;
        }
    }
    let n = trees.len() as f64;
    for t in totals.iter_mut() {
        *t /= n;
    }
    let sum: f64 = totals.iter().sum();
    if sum > 0.0 {
        for t in totals.iter_mut() {
            *t /= sum;
        }
        Ok(Mdi {
            values: totals,
            all_zero: false,
        })
    } else {
        Ok(Mdi {
            values: totals,
            all_zero: true,
        })
    }
}

struct Builder<'a, R: Rng> {
    x: ArrayView2<'a, f64>,
    targets: ArrayView1<'a, f64>,
    config: &'a TreeConfig,
    total_rows: usize,
    nodes: Vec<Node>,
    used: Vec<bool>,
    decreases: Vec<f64>,
    max_seen_depth: usize,
    rng: &'a mut R,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Weighted child impurity plus the sparse cost, the quantity minimized.
    penalized: f64,
    /// Raw impurity decrease, before any sparse cost.
    decrease: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        self.max_seen_depth = self.max_seen_depth.max(depth);
        let parent_impurity = self.impurity(&rows);
        let can_split = depth < self.config.max_depth
            && rows.len() >= 2 * self.config.min_samples_leaf
            && parent_impurity > 0.0;

        let best = if can_split {
            self.best_split(&rows, parent_impurity)
        } else {
            None
        };

        match best {
            Some(split) => {
                let (left_rows, right_rows) = partition(self.x, &rows, split.feature, split.threshold);
                self.used[split.feature] = true;
                self.decreases[split.feature] +=
                    rows.len() as f64 / self.total_rows as f64 * split.decrease;

                let idx = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 }); // patched below
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[idx] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                idx
            }
            None => {
                let idx = self.nodes.len();
                self.nodes.push(Node::Leaf {
                    value: self.leaf_value(&rows),
                });
                idx
            }
        }
    }

    /// Best split by penalized weighted child impurity. Ties break toward
    /// the lowest feature index, then the lowest threshold, by scanning in
    /// that order and only accepting strict improvements.
    fn best_split(&mut self, rows: &[usize], parent_impurity: f64) -> Option<BestSplit> {
        let candidates = self.candidate_features();
        let mut best: Option<BestSplit> = None;
        let n = rows.len() as f64;

        for feature in candidates {
            let mut pairs: Vec<(f64, f64)> = rows
                .iter()
                .map(|&r| (self.x[(r, feature)], self.targets[r]))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let cost = if self.used[feature] {
                0.0
            } else {
                self.config.sparse_cost
            };

            match self.config.criterion {
                SplitCriterion::Gini => {
                    let total_ones: f64 = pairs.iter().map(|&(_, t)| t).sum();
                    let mut left_ones = 0.0;
                    for i in 0..pairs.len() - 1 {
                        left_ones += pairs[i].1;
                        if pairs[i].0 >= pairs[i + 1].0 {
                            continue;
                        }
                        let nl = (i + 1) as f64;
                        let nr = n - nl;
                        if (nl as usize) < self.config.min_samples_leaf
                            || (nr as usize) < self.config.min_samples_leaf
                        {
                            continue;
                        }
                        let weighted = nl / n * gini(nl, left_ones)
                            + nr / n * gini(nr, total_ones - left_ones);
                        self.consider(
                            &mut best,
                            feature,
                            midpoint(pairs[i].0, pairs[i + 1].0),
                            weighted + cost,
                            parent_impurity - weighted,
                        );
                    }
                }
                SplitCriterion::SquaredError => {
                    let total_sum: f64 = pairs.iter().map(|&(_, t)| t).sum();
                    let total_sq: f64 = pairs.iter().map(|&(_, t)| t * t).sum();
                    let mut left_sum = 0.0;
                    let mut left_sq = 0.0;
                    for i in 0..pairs.len() - 1 {
                        left_sum += pairs[i].1;
                        left_sq += pairs[i].1 * pairs[i].1;
                        if pairs[i].0 >= pairs[i + 1].0 {
                            continue;
                        }
                        let nl = (i + 1) as f64;
                        let nr = n - nl;
                        if (nl as usize) < self.config.min_samples_leaf
                            || (nr as usize) < self.config.min_samples_leaf
                        {
                            continue;
                        }
                        let weighted = nl / n * variance(nl, left_sum, left_sq)
                            + nr / n * variance(nr, total_sum - left_sum, total_sq - left_sq);
                        self.consider(
                            &mut best,
                            feature,
                            midpoint(pairs[i].0, pairs[i + 1].0),
                            weighted + cost,
                            parent_impurity - weighted,
                        );
                    }
                }
            }
        }

        // only split when the penalized objective strictly improves
        best.filter(|b| b.penalized < parent_impurity)
    }

    fn consider(
        &self,
        best: &mut Option<BestSplit>,
        feature: usize,
        threshold: f64,
        penalized: f64,
        decrease: f64,
    ) {
        // a candidate must beat the incumbent by more than accumulated
        // rounding noise, otherwise the earlier (lowest feature index,
        // lowest threshold) split stands; equal partitions reached through
        // different summation orders then resolve deterministically
        let better = match best {
            None => true,
            Some(b) => penalized < b.penalized - 1e-12 * (1.0 + b.penalized.abs()),
        };
        if better {
            *best = Some(BestSplit {
                feature,
                threshold,
                penalized,
                decrease,
            });
        }
    }

    /// Features examined at this node, ascending so the tie-break order is
    /// well defined under subsampling.
    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.x.ncols();
        match self.config.feature_subsample {
            Some(k) if k < p => {
                let mut pool: Vec<usize> = (0..p).collect();
                for i in 0..k {
                    let j = i + self.rng.random_range(0..p - i);
                    pool.swap(i, j);
                }
                pool.truncate(k);
                pool.sort_unstable();
                pool
            }
            _ => (0..p).collect(),
        }
    }

    fn impurity(&self, rows: &[usize]) -> f64 {
        let n = rows.len() as f64;
        match self.config.criterion {
            SplitCriterion::Gini => {
                let ones: f64 = rows.iter().map(|&r| self.targets[r]).sum();
                gini(n, ones)
            }
            SplitCriterion::SquaredError => {
                let sum: f64 = rows.iter().map(|&r| self.targets[r]).sum();
                let sq: f64 = rows.iter().map(|&r| self.targets[r] * self.targets[r]).sum();
                variance(n, sum, sq)
            }
        }
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let n = rows.len() as f64;
        rows.iter().map(|&r| self.targets[r]).sum::<f64>() / n
    }
}

fn gini(n: f64, ones: f64) -> f64 {
    let p = ones / n;
    (2.0 * p * (1.0 - p)).max(0.0)
}

fn variance(n: f64, sum: f64, sq: f64) -> f64 {
    let mean = sum / n;
    (sq / n - mean * mean).max(0.0)
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

fn partition(
    x: ArrayView2<'_, f64>,
    rows: &[usize],
    feature: usize,
    threshold: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        if x[(r, feature)] <= threshold {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    (left, right)
}
