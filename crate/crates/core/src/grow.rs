//! Diverse-forest construction.
//!
//! Two growers are provided. Incremental depth bagging adds bagged trees of
//! depth `d` until the ensemble training loss converges, then increments `d`
//! up to a configured maximum. Incremental depth bag-boosting uses a bagged
//! sub-ensemble as the weak learner of each gradient-boosting stage: stage
//! `d` grows depth-`d` trees on the current pseudo-residuals until training
//! loss converges, then folds the stage in, updates the residuals, and
//! measures the stage's out-of-bag improvement `delta`. Boosting stops when
//! `delta` turns negative; the stage that produced the negative value is
//! discarded. The first stage is always kept.
//!
//! Shallow early stages and residual-driven later stages give trees that use
//! small, varied feature sets, which is what makes the downstream pruning
//! problem able to trade features for accuracy at a fine granularity.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sample_bag, Bag, DataError, Dataset, Task};
use crate::tree::{SplitCriterion, TreeConfig, TreeError, TreeModel};
use crate::util::{log_loss, mean_std, sigmoid, softplus};

const PROB_CLIP: f64 = 1e-6;
/// Residual magnitude below which a boosting run stops: nothing left to fit.
/// Twice the probability clip, so a single-class fit lands under the floor.
const RESIDUAL_FLOOR: f64 = 2.0 * PROB_CLIP;

#[derive(Debug, Error)]
pub enum GrowError {
    #[error("training loss is not finite")]
    NonFiniteLoss,
    #[error("no rows are out-of-bag for any stage tree")]
    NoUsableRows,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How a forest was grown; controls how tree columns combine into an
/// ensemble prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    /// Prediction is the mean of all tree outputs.
    Bagged,
    /// Prediction is the offset plus the sum over stages of each stage's
    /// mean tree output, scaled by the learning rate.
    BagBoosted,
}

/// Per-tree growth metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeMeta {
    /// Depth stage the tree was grown at.
    pub depth: usize,
    /// Boosting iteration (equals the depth stage for both growers).
    pub stage: usize,
    pub bag: Bag,
}

/// An ordered tree ensemble with growth metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<TreeModel>,
    meta: Vec<TreeMeta>,
    /// Initial prediction: label mean for regression and bagged
    /// classification, base-rate log-odds for boosted classification.
    offset: f64,
    mode: GrowthMode,
    task: Task,
    learning_rate: f64,
    n_features: usize,
}

impl Forest {
    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn meta(&self) -> &[TreeMeta] {
        &self.meta
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn mode(&self) -> GrowthMode {
        self.mode
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Number of depth/boosting stages present.
    pub fn n_stages(&self) -> usize {
        self.meta.iter().map(|m| m.stage).max().unwrap_or(0)
    }

    /// Tree index ranges per stage, in stage order.
    pub fn stage_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges = Vec::new();
        let mut start = 0;
        for i in 1..=self.meta.len() {
            if i == self.meta.len() || self.meta[i].stage != self.meta[start].stage {
                ranges.push(start..i);
                start = i;
            }
        }
        ranges
    }

    /// Ensemble output per row: the mean tree output for bagged forests, the
    /// offset plus scaled stage means for boosted ones. For classification
    /// the bagged output is a probability and the boosted output a margin.
    pub fn raw_predictions(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, GrowError> {
        let staged = self.staged_predictions(x)?;
        Ok(staged
            .into_iter()
            .next_back()
            .unwrap_or_else(|| Array1::from_elem(x.nrows(), self.offset)))
    }

    /// Ensemble output after each successive stage. Entry `s` is the
    /// prediction using stages `1..=s+1`.
    pub fn staged_predictions(
        &self,
        x: ArrayView2<'_, f64>,
    ) -> Result<Vec<Array1<f64>>, GrowError> {
        let m = x.nrows();
        let mut out = Vec::new();
        match self.mode {
            GrowthMode::Bagged => {
                let mut sum = Array1::<f64>::zeros(m);
                let mut count = 0usize;
                for range in self.stage_ranges() {
                    for tree in &self.trees[range.clone()] {
                        sum = sum + tree.predict(x)?;
                        count += 1;
                    }
                    out.push(sum.mapv(|v| v / count as f64));
                }
            }
            GrowthMode::BagBoosted => {
                let mut acc = Array1::from_elem(m, self.offset);
                for range in self.stage_ranges() {
                    let mut stage_sum = Array1::<f64>::zeros(m);
                    for tree in &self.trees[range.clone()] {
                        stage_sum = stage_sum + tree.predict(x)?;
                    }
                    let k = range.len() as f64;
                    acc = acc + stage_sum.mapv(|v| self.learning_rate * v / k);
                    out.push(acc.clone());
                }
            }
        }
        Ok(out)
    }

    /// Class-1 probabilities (classification) or predictions (regression).
    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, GrowError> {
        let raw = self.raw_predictions(x)?;
        Ok(match (self.task, self.mode) {
            (Task::Classification, GrowthMode::BagBoosted) => raw.mapv(sigmoid),
            _ => raw,
        })
    }

    /// Per-tree prediction columns as used by the pruning problem: raw leaf
    /// outputs for bagged forests, the tree's share of its stage
    /// contribution for boosted ones (so unit weights reproduce the grown
    /// ensemble up to the offset).
    pub fn prediction_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, GrowError> {
        let m = x.nrows();
        let n = self.trees.len();
        let mut a = Array2::zeros((m, n));
        let stage_sizes: Vec<usize> = match self.mode {
            GrowthMode::Bagged => vec![1; n],
            GrowthMode::BagBoosted => {
                let mut sizes = vec![1; n];
                for r in self.stage_ranges() {
                    let len = r.len();
                    for i in r {
                        sizes[i] = len;
                    }
                }
                sizes
            }
        };
        for (i, tree) in self.trees.iter().enumerate() {
            let preds = tree.predict(x)?;
            let scale = match self.mode {
                GrowthMode::Bagged => 1.0,
                GrowthMode::BagBoosted => self.learning_rate / stage_sizes[i] as f64,
            };
            a.column_mut(i).assign(&preds.mapv(|v| v * scale));
        }
        Ok(a)
    }
}

/// Training-loss convergence test: converged once the last `window` losses
/// span at most `epsilon` (inclusive).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub window: usize,
    pub epsilon: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 5,
            epsilon: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    config: MonitorConfig,
    history: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(config: MonitorConfig) -> Result<Self, GrowError> {
        if config.window == 0 {
            return Err(GrowError::InvalidParam(
                "monitor window must be >= 1".into(),
            ));
        }
        if !(config.epsilon > 0.0) {
            return Err(GrowError::InvalidParam(
                "monitor epsilon must be > 0".into(),
            ));
        }
        Ok(Self {
            config,
            history: Vec::new(),
        })
    }

    /// Record a loss and report whether the tube condition now holds.
    pub fn update(&mut self, loss: f64) -> Result<bool, GrowError> {
        if !loss.is_finite() {
            return Err(GrowError::NonFiniteLoss);
        }
        self.history.push(loss);
        Ok(self.converged())
    }

    pub fn converged(&self) -> bool {
        let n = self.config.window;
        if self.history.len() < n {
            return false;
        }
        let tail = &self.history[self.history.len() - n..];
        let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min <= self.config.epsilon
    }

    /// Clear history at a depth increment.
    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}

/// One growth-trace record, serialized as a JSON line for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Tree {
        index: usize,
        depth: usize,
        stage: usize,
        train_loss: f64,
    },
    StageEnd {
        stage: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        usable_rows: Option<usize>,
        accepted: bool,
    },
    Warning {
        message: String,
    },
}

/// Ordered growth events for one grower run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GrowthTrace {
    pub events: Vec<TraceEvent>,
}

impl GrowthTrace {
    pub fn warnings(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Warning { message } => Some(message.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Out-of-bag improvement per stage, in stage order.
    pub fn stage_deltas(&self) -> Vec<(usize, f64, bool)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::StageEnd {
                    stage,
                    delta: Some(delta),
                    accepted,
                    ..
                } => Some((*stage, *delta, *accepted)),
                _ => None,
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("trace events serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Parameters for incremental depth bagging.
#[derive(Debug, Clone)]
pub struct BaggingConfig {
    pub max_depth: usize,
    pub monitor: MonitorConfig,
    /// Hard cap on total trees; hitting it is a warning, not an error.
    pub tree_cap: usize,
    /// Extra split cost for feature-sparse trees; zero is plain CART.
    pub sparse_cost: f64,
}

impl BaggingConfig {
    pub fn new(max_depth: usize) -> Self {
        Self {
            max_depth,
            monitor: MonitorConfig::default(),
            tree_cap: 500,
            sparse_cost: 0.0,
        }
    }
}

/// Parameters for incremental depth bag-boosting.
#[derive(Debug, Clone)]
pub struct BagBoostConfig {
    pub monitor: MonitorConfig,
    pub learning_rate: f64,
    pub tree_cap: usize,
    /// Optional hard stage cap, mostly for experiments.
    pub stage_cap: Option<usize>,
    /// When false, ignore the sign of delta and grow until a cap is hit;
    /// deltas are still recorded in the trace.
    pub oob_stop: bool,
    pub sparse_cost: f64,
}

impl Default for BagBoostConfig {
    fn default() -> Self {
        Self {
            monitor: MonitorConfig::default(),
            learning_rate: 1.0,
            tree_cap: 500,
            stage_cap: None,
            oob_stop: true,
            sparse_cost: 0.0,
        }
    }
}

/// Per-row error used when scoring out-of-bag improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    Squared,
    Logistic,
    Absolute,
}

impl ErrorMetric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => ErrorMetric::Logistic,
            Task::Regression => ErrorMetric::Squared,
        }
    }

    fn row_error(&self, label: f64, pred: f64) -> f64 {
        match self {
            ErrorMetric::Squared => (label - pred).powi(2),
            ErrorMetric::Absolute => (label - pred).abs(),
            // pred is a margin; labels map to {-1, +1}
            ErrorMetric::Logistic => softplus(-(2.0 * label - 1.0) * pred),
        }
    }
}

/// Out-of-bag improvement of a candidate stage over the current ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageImprovement {
    /// Mean per-row error reduction over the usable rows.
    pub delta: f64,
    pub usable_rows: usize,
    /// Rows out-of-bag for no stage tree, excluded from the mean.
    pub skipped_rows: usize,
    /// Standard deviation of the per-row improvements.
    pub per_row_std: f64,
}

impl StageImprovement {
    /// Standard error of `delta` as an estimate of the expected improvement.
    pub fn std_error(&self) -> f64 {
        self.per_row_std / (self.usable_rows as f64).sqrt()
    }
}

/// Score a candidate stage the way boosting will apply it, but for each row
/// use only the stage trees whose bag excludes that row. `current` holds the
/// ensemble output before the stage (margins for boosted classification).
pub fn oob_improvement(
    current: ArrayView1<'_, f64>,
    stage_trees: &[TreeModel],
    stage_bags: &[Bag],
    x: ArrayView2<'_, f64>,
    labels: ArrayView1<'_, f64>,
    metric: ErrorMetric,
    learning_rate: f64,
) -> Result<StageImprovement, GrowError> {
    if stage_trees.len() != stage_bags.len() {
        return Err(GrowError::InvalidParam(format!(
            "{} trees but {} bags",
            stage_trees.len(),
            stage_bags.len()
        )));
    }
    let m = x.nrows();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (tree, bag) in stage_trees.iter().zip(stage_bags) {
        for &row in &bag.oob {
            sums[row] += tree.predict_row(x.row(row));
            counts[row] += 1;
        }
    }
    let mut improvements = Vec::new();
    let mut skipped = 0usize;
    for i in 0..m {
        if counts[i] == 0 {
            skipped += 1;
            continue;
        }
        let contribution = learning_rate * sums[i] / counts[i] as f64;
        let before = metric.row_error(labels[i], current[i]);
        let after = metric.row_error(labels[i], current[i] + contribution);
        improvements.push(before - after);
    }
    if improvements.is_empty() {
        return Err(GrowError::NoUsableRows);
    }
    let (delta, per_row_std) = mean_std(&improvements);
    Ok(StageImprovement {
        delta,
        usable_rows: improvements.len(),
        skipped_rows: skipped,
        per_row_std,
    })
}

/// Grow a bagged forest with incrementally increasing depth.
pub fn incremental_depth_bagging(
    data: &Dataset,
    config: &BaggingConfig,
    rng: &mut impl Rng,
) -> Result<(Forest, GrowthTrace), GrowError> {
    if config.max_depth < 1 {
        return Err(GrowError::InvalidParam("max_depth must be >= 1".into()));
    }
    let m = data.n_rows();
    let x = data.features();
    let y = data.labels();
    let criterion = match data.task() {
        Task::Classification => SplitCriterion::Gini,
        Task::Regression => SplitCriterion::SquaredError,
    };
    let offset = y.sum() / m as f64;

    let mut trace = GrowthTrace::default();
    let mut trees: Vec<TreeModel> = Vec::new();
    let mut meta: Vec<TreeMeta> = Vec::new();
    let mut pred_sum = Array1::<f64>::zeros(m);
    let mut capped = false;

    'depths: for depth in 1..=config.max_depth {
        let mut monitor = ConvergenceMonitor::new(config.monitor.clone())?;
        loop {
            if trees.len() >= config.tree_cap {
                capped = true;
                break 'depths;
            }
            let bag = sample_bag(m, rng)?;
            let tree_cfg = TreeConfig::new(criterion, depth).with_sparse_cost(config.sparse_cost);
            let tree = TreeModel::fit_on_rows(x, y, &bag.in_bag, &tree_cfg, rng)?;
            pred_sum = pred_sum + tree.predict(x)?;
            trees.push(tree);
            meta.push(TreeMeta {
                depth,
                stage: depth,
                bag,
            });
            let mean = pred_sum.mapv(|v| v / trees.len() as f64);
            let loss = bagged_train_loss(mean.view(), y, data.task());
            trace.events.push(TraceEvent::Tree {
                index: trees.len() - 1,
                depth,
                stage: depth,
                train_loss: loss,
            });
            if monitor.update(loss)? {
                break;
            }
        }
        trace.events.push(TraceEvent::StageEnd {
            stage: depth,
            delta: None,
            usable_rows: None,
            accepted: true,
        });
    }
    if capped {
        trace.events.push(TraceEvent::Warning {
            message: format!("tree cap {} reached before convergence", config.tree_cap),
        });
    }

    Ok((
        Forest {
            trees,
            meta,
            offset,
            mode: GrowthMode::Bagged,
            task: data.task(),
            learning_rate: 1.0,
            n_features: data.n_features(),
        },
        trace,
    ))
}

/// Grow a bag-boosted forest: each stage is a bagged sub-ensemble fit on the
/// current pseudo-residuals, accepted while its out-of-bag improvement stays
/// non-negative.
pub fn incremental_depth_bag_boosting(
    data: &Dataset,
    config: &BagBoostConfig,
    rng: &mut impl Rng,
) -> Result<(Forest, GrowthTrace), GrowError> {
    if !(config.learning_rate > 0.0) {
        return Err(GrowError::InvalidParam("learning rate must be > 0".into()));
    }
    let m = data.n_rows();
    let x = data.features();
    let y = data.labels();
    let task = data.task();
    let metric = ErrorMetric::for_task(task);

    let offset = match task {
        Task::Regression => y.sum() / m as f64,
        Task::Classification => {
            let rate = (y.sum() / m as f64).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            (rate / (1.0 - rate)).ln()
        }
    };

    let mut trace = GrowthTrace::default();
    let mut trees: Vec<TreeModel> = Vec::new();
    let mut meta: Vec<TreeMeta> = Vec::new();
    let mut current = Array1::from_elem(m, offset);
    let mut residuals = pseudo_residuals(current.view(), y, task);

    let mut stage = 0usize;
    let mut stopped_reason: Option<String> = None;
    loop {
        stage += 1;
        if let Some(cap) = config.stage_cap {
            if stage > cap {
                break;
            }
        }
        let max_abs = residuals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if max_abs <= RESIDUAL_FLOOR {
            stopped_reason = Some(format!(
                "residuals vanished entering stage {stage}; offset-only or converged fit"
            ));
            break;
        }
        if trees.len() >= config.tree_cap {
            stopped_reason = Some(format!(
                "tree cap {} reached before out-of-bag stopping",
                config.tree_cap
            ));
            break;
        }

        // Grow the stage's bagged sub-ensemble on the residuals.
        let depth = stage;
        let mut monitor = ConvergenceMonitor::new(config.monitor.clone())?;
        let mut stage_trees: Vec<TreeModel> = Vec::new();
        let mut stage_bags: Vec<Bag> = Vec::new();
        let mut stage_sum = Array1::<f64>::zeros(m);
        let mut capped = false;
        loop {
            if trees.len() + stage_trees.len() >= config.tree_cap {
                capped = true;
                break;
            }
            let bag = sample_bag(m, rng)?;
            let tree_cfg = TreeConfig::new(SplitCriterion::SquaredError, depth)
                .with_sparse_cost(config.sparse_cost);
            let tree = TreeModel::fit_on_rows(x, residuals.view(), &bag.in_bag, &tree_cfg, rng)?;
            stage_sum = stage_sum + tree.predict(x)?;
            stage_trees.push(tree);
            stage_bags.push(bag);

            let k = stage_trees.len() as f64;
            let candidate = &current + &stage_sum.mapv(|v| config.learning_rate * v / k);
            let loss = boosted_train_loss(candidate.view(), y, task);
            trace.events.push(TraceEvent::Tree {
                index: trees.len() + stage_trees.len() - 1,
                depth,
                stage,
                train_loss: loss,
            });
            if monitor.update(loss)? {
                break;
            }
        }

        let improvement = oob_improvement(
            current.view(),
            &stage_trees,
            &stage_bags,
            x,
            y,
            metric,
            config.learning_rate,
        )?;
        // The first stage is always kept; from stage two on, a negative
        // out-of-bag improvement rejects the stage and ends growth.
        let accepted = stage == 1 || !config.oob_stop || improvement.delta >= 0.0;
        let rejected_by_delta = config.oob_stop && stage > 1 && improvement.delta < 0.0;
        trace.events.push(TraceEvent::StageEnd {
            stage,
            delta: Some(improvement.delta),
            usable_rows: Some(improvement.usable_rows),
            accepted,
        });
        if improvement.skipped_rows > 0 {
            trace.events.push(TraceEvent::Warning {
                message: format!(
                    "stage {stage}: {} rows had no out-of-bag tree and were skipped",
                    improvement.skipped_rows
                ),
            });
        }

        if rejected_by_delta {
            break;
        }

        let k = stage_trees.len() as f64;
        current = &current + &stage_sum.mapv(|v| config.learning_rate * v / k);
        residuals = pseudo_residuals(current.view(), y, task);
        for (tree, bag) in stage_trees.into_iter().zip(stage_bags) {
            trees.push(tree);
            meta.push(TreeMeta { depth, stage, bag });
        }

        if capped {
            stopped_reason = Some(format!(
                "tree cap {} reached before out-of-bag stopping",
                config.tree_cap
            ));
            break;
        }
    }
    if let Some(message) = stopped_reason {
        trace.events.push(TraceEvent::Warning { message });
    }

    Ok((
        Forest {
            trees,
            meta,
            offset,
            mode: GrowthMode::BagBoosted,
            task,
            learning_rate: config.learning_rate,
            n_features: data.n_features(),
        },
        trace,
    ))
}

/// Negative gradient of the per-row loss at the current predictions:
/// `y - z` for squared loss, `y - sigmoid(z)` for logistic loss.
pub fn pseudo_residuals(
    current: ArrayView1<'_, f64>,
    labels: ArrayView1<'_, f64>,
    task: Task,
) -> Array1<f64> {
    match task {
        Task::Regression => &labels - &current,
        Task::Classification => Array1::from_iter(
            labels
                .iter()
                .zip(current.iter())
                .map(|(&y, &z)| y - sigmoid(z)),
        ),
    }
}

/// Training loss of a bagged ensemble's averaged predictions.
pub fn bagged_train_loss(
    mean_preds: ArrayView1<'_, f64>,
    labels: ArrayView1<'_, f64>,
    task: Task,
) -> f64 {
    let m = labels.len() as f64;
    match task {
        Task::Regression => {
            mean_preds
                .iter()
                .zip(labels.iter())
                .map(|(&p, &y)| (y - p).powi(2))
                .sum::<f64>()
                / m
        }
        Task::Classification => {
            mean_preds
                .iter()
                .zip(labels.iter())
                .map(|(&p, &y)| log_loss(y, p, PROB_CLIP))
                .sum::<f64>()
                / m
        }
    }
}

/// Training loss of a boosted ensemble's margin/prediction vector.
pub fn boosted_train_loss(
    current: ArrayView1<'_, f64>,
    labels: ArrayView1<'_, f64>,
    task: Task,
) -> f64 {
    let m = labels.len() as f64;
    match task {
        Task::Regression => {
            current
                .iter()
                .zip(labels.iter())
                .map(|(&z, &y)| (y - z).powi(2))
                .sum::<f64>()
                / m
        }
        Task::Classification => {
            current
                .iter()
                .zip(labels.iter())
                .map(|(&z, &y)| softplus(-(2.0 * y - 1.0) * z))
                .sum::<f64>()
                / m
        }
    }
}
