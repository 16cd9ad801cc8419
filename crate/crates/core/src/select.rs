//! End-to-end feature selection: grow once, bisect the penalty to hit the
//! requested sparsity levels, and refit a fresh random forest on each
//! selected set.
//!
//! The bisection schedule walks a target count `k'` upward from one: solve,
//! halve `lambda` when too few features come back, move `lambda` up by half
//! a step when too many, and advance `k'` on an exact hit. Every `(lambda,
//! k)` pair encountered is recorded so near-misses stay recoverable, and a
//! sparsity level that the path jumps over is reported absent rather than
//! silently substituted.
//!
//! The refit removes the shrinkage bias of the penalized solve: the pruned
//! forest's job is to pick features, the refit model's job is to predict.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sample_bag, DataError, Dataset, Task};
use crate::eval::roc_auc;
use crate::grow::{
    incremental_depth_bag_boosting, incremental_depth_bagging, BagBoostConfig, BaggingConfig,
    GrowError, GrowthTrace,
};
use crate::prune::{
    build_problem, solve_with_lambda, CostSpec, LossKind, PruneError, PruneProblem, Solution,
    SolveOptions,
};
use crate::tree::{mdi_importances, Mdi, SplitCriterion, TreeConfig, TreeError, TreeModel};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Grow(#[from] GrowError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-split feature subsampling for refit-style forests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// sqrt(p) for classification, p/3 for regression.
    TaskDefault,
    All,
    Sqrt,
    Third,
    Fixed(usize),
}

impl FeatureSubsample {
    fn resolve(&self, p: usize, task: Task) -> Option<usize> {
        let k = match self {
            FeatureSubsample::TaskDefault => match task {
                Task::Classification => (p as f64).sqrt().round() as usize,
                Task::Regression => p / 3,
            },
            FeatureSubsample::All => return None,
            FeatureSubsample::Sqrt => (p as f64).sqrt().round() as usize,
            FeatureSubsample::Third => p / 3,
            FeatureSubsample::Fixed(k) => *k,
        };
        let k = k.clamp(1, p);
        if k == p {
            None
        } else {
            Some(k)
        }
    }
}

/// Configuration of the refit / baseline random forest: bagged full-depth
/// trees with per-split feature subsampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    /// None grows to purity.
    pub max_depth: Option<usize>,
    pub subsample: FeatureSubsample,
    pub min_samples_leaf: usize,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            subsample: FeatureSubsample::TaskDefault,
            min_samples_leaf: 1,
        }
    }
}

/// A bagged random forest fit on a column subset of a dataset. Prediction
/// takes the full-width feature matrix and reads only the fitted columns.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<TreeModel>,
    columns: Vec<usize>,
    task: Task,
    n_input_features: usize,
}

impl RandomForest {
    /// Fit on the given columns of `data`. Trees are fit in parallel with
    /// per-tree seeds drawn up front, so results do not depend on scheduling.
    pub fn fit(
        data: &Dataset,
        columns: &[usize],
        config: &RandomForestConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, SelectError> {
        if columns.is_empty() {
            return Err(SelectError::InvalidParam(
                "refit requires at least one column".into(),
            ));
        }
        if config.n_trees == 0 {
            return Err(SelectError::InvalidParam("n_trees must be >= 1".into()));
        }
        let p = data.n_features();
        for &c in columns {
            if c >= p {
                return Err(SelectError::InvalidParam(format!(
                    "column {c} out of range for {p} features"
                )));
            }
        }
        let m = data.n_rows();
        let sub = gather_columns(data.features(), columns);
        let criterion = match data.task() {
            Task::Classification => SplitCriterion::Gini,
            Task::Regression => SplitCriterion::SquaredError,
        };
        let mut tree_cfg = TreeConfig::new(criterion, config.max_depth.unwrap_or(m));
        tree_cfg.min_samples_leaf = config.min_samples_leaf.max(1);
        if let Some(k) = config.subsample.resolve(columns.len(), data.task()) {
            tree_cfg = tree_cfg.with_feature_subsample(k);
        }

        let seeds: Vec<u64> = (0..config.n_trees).map(|_| rng.random()).collect();
        let labels = data.labels();
        let trees = seeds
            .into_par_iter()
            .map(|seed| {
                let mut tree_rng = ChaCha8Rng::seed_from_u64(seed);
                let bag = sample_bag(m, &mut tree_rng)?;
                let tree = TreeModel::fit_on_rows(
                    sub.view(),
                    labels,
                    &bag.in_bag,
                    &tree_cfg,
                    &mut tree_rng,
                )?;
                Ok(tree)
            })
            .collect::<Result<Vec<_>, SelectError>>()?;

        Ok(Self {
            trees,
            columns: columns.to_vec(),
            task: data.task(),
            n_input_features: p,
        })
    }

    /// Mean tree output per row: a class-1 probability for classification,
    /// a real prediction for regression.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, SelectError> {
        if x.ncols() != self.n_input_features {
            return Err(SelectError::InvalidParam(format!(
                "expected {} features, got {}",
                self.n_input_features,
                x.ncols()
            )));
        }
        let sub = gather_columns(x, &self.columns);
        let mut sum = Array1::<f64>::zeros(x.nrows());
        for tree in &self.trees {
            sum = sum + tree.predict(sub.view())?;
        }
        Ok(sum.mapv(|v| v / self.trees.len() as f64))
    }

    /// Importance scores over the model's own columns.
    pub fn mdi(&self) -> Result<Mdi, SelectError> {
        Ok(mdi_importances(&self.trees)?)
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn task(&self) -> Task {
        self.task
    }
}

fn gather_columns(x: ArrayView2<'_, f64>, columns: &[usize]) -> Array2<f64> {
    let m = x.nrows();
    let mut out = Array2::zeros((m, columns.len()));
    for (out_j, &j) in columns.iter().enumerate() {
        out.column_mut(out_j).assign(&x.column(j));
    }
    out
}

/// Full MDI ranking of the features (best first, ties toward lower index)
/// from a random forest fit on all columns.
pub fn baseline_mdi_rank(
    data: &Dataset,
    config: &RandomForestConfig,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, SelectError> {
    let all: Vec<usize> = (0..data.n_features()).collect();
    let forest = RandomForest::fit(data, &all, config, rng)?;
    let mdi = forest.mdi()?;
    let mut order: Vec<usize> = (0..data.n_features()).collect();
    order.sort_by(|&a, &b| mdi.values[b].total_cmp(&mdi.values[a]).then(a.cmp(&b)));
    Ok(order)
}

/// The embedded baseline: fit one random forest on everything and keep the
/// top `k` features by MDI importance. Returned ascending.
pub fn baseline_mdi_select(
    data: &Dataset,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, SelectError> {
    if k == 0 || k > data.n_features() {
        return Err(SelectError::InvalidParam(format!(
            "k={k} out of range for {} features",
            data.n_features()
        )));
    }
    let rank = baseline_mdi_rank(data, &RandomForestConfig::default(), rng)?;
    let mut top: Vec<usize> = rank[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// One (lambda, selected-count) observation along the bisection path.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub k: usize,
}

/// Bisection schedule controls.
#[derive(Debug, Clone)]
pub struct BisectionConfig {
    /// Sparsity levels to realize, ascending.
    pub targets: Vec<usize>,
    /// Record solutions for every encountered sparsity up to this bound.
    pub record_limit: usize,
    /// Total solve budget, including the initial doubling probes.
    pub budget: usize,
    /// Smallest lambda the schedule will try.
    pub lambda_floor: f64,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            targets: (1..=10).collect(),
            record_limit: 10,
            budget: 200,
            lambda_floor: 1e-12,
        }
    }
}

/// Everything a bisection run learned.
#[derive(Debug, Clone)]
pub struct BisectionOutcome {
    /// First solution observed at each sparsity in `1..=k_limit`.
    pub by_k: BTreeMap<usize, Solution>,
    /// Every solve performed, in order.
    pub path: Vec<PathPoint>,
    pub solves: usize,
    pub budget_exhausted: bool,
}

/// Walk lambda from an all-zero starting point down through the requested
/// sparsity levels: halve lambda while the solution is too sparse, and once
/// a level is bracketed from both sides, bisect the bracket geometrically.
/// A bracket that collapses without an exact hit marks that level
/// unreachable and the schedule moves on, so one jump in the selection path
/// cannot starve the remaining levels of budget.
pub fn bisect_lambda(
    problem: &PruneProblem,
    config: &BisectionConfig,
    opts: &SolveOptions,
) -> Result<BisectionOutcome, SelectError> {
    if config.targets.is_empty() || config.targets.iter().any(|&t| t == 0) {
        return Err(SelectError::InvalidParam(
            "bisection targets must be non-empty and >= 1".into(),
        ));
    }
    let mut targets = config.targets.clone();
    targets.sort_unstable();
    targets.dedup();
    let record_limit = config.record_limit.max(*targets.last().expect("non-empty"));

    let mut outcome = BisectionOutcome {
        by_k: BTreeMap::new(),
        path: Vec::new(),
        solves: 0,
        budget_exhausted: false,
    };

    // warm-start each solve from its predecessor along the path
    let mut last_w: Option<Array1<f64>> = None;
    let mut solve_at = |lambda: f64, out: &mut BisectionOutcome| -> Result<usize, SelectError> {
        let sol =
            crate::prune::solve_warm(problem, lambda, last_w.as_ref().map(|w| w.view()), opts)?;
        last_w = Some(Array1::from_vec(sol.w.clone()));
        let k = sol.selected.len();
        out.solves += 1;
        out.path.push(PathPoint { lambda, k });
        if (1..=record_limit).contains(&k) {
            out.by_k.entry(k).or_insert(sol);
        }
        Ok(k)
    };

    // find a lambda with zero selected features by doubling from one
    let mut lambda = 1.0f64;
    let mut k_last = solve_at(lambda, &mut outcome)?;
    while k_last > 0 {
        if outcome.solves >= config.budget {
            outcome.budget_exhausted = true;
            return Ok(outcome);
        }
        if lambda > 1e18 {
            return Err(SelectError::InvalidParam(
                "could not find a lambda with zero selected features".into(),
            ));
        }
        lambda *= 2.0;
        k_last = solve_at(lambda, &mut outcome)?;
    }

    'targets: for &target in &targets {
        if outcome.by_k.contains_key(&target) {
            continue;
        }
        // lam_sparse: smallest lambda seen giving fewer features than the
        // target; lam_dense: largest lambda giving more.
        let mut lam_sparse = f64::INFINITY;
        let mut lam_dense: Option<f64> = None;
        for point in &outcome.path {
            if point.k < target {
                lam_sparse = lam_sparse.min(point.lambda);
            } else if point.k > target {
                lam_dense = Some(lam_dense.map_or(point.lambda, |d: f64| d.max(point.lambda)));
            }
        }

        loop {
            if outcome.by_k.contains_key(&target) {
                break;
            }
            if outcome.solves >= config.budget {
                outcome.budget_exhausted = true;
                break 'targets;
            }
            let next = match lam_dense {
                None => lam_sparse / 2.0,
                Some(dense) => {
                    if lam_sparse <= dense * (1.0 + 1e-9) {
                        // bracket collapsed on a selection-path jump; the
                        // level may still exist in another lambda interval,
                        // so spend a bounded number of probe steps on the
                        // half-step walk before giving the level up
                        break;
                    }
                    (lam_sparse * dense).sqrt()
                }
            };
            if next < config.lambda_floor || !next.is_finite() {
                break;
            }
            lambda = next;
            k_last = solve_at(lambda, &mut outcome)?;
            if k_last < target {
                lam_sparse = lam_sparse.min(lambda);
            } else if k_last > target {
                lam_dense = Some(lam_dense.map_or(lambda, |d: f64| d.max(lambda)));
            }
        }

        // fallback exploration: halve below the target, move up by half a
        // step above it, for a bounded number of solves
        let mut probes = 16usize;
        while probes > 0 && !outcome.by_k.contains_key(&target) {
            if outcome.solves >= config.budget {
                outcome.budget_exhausted = true;
                break 'targets;
            }
            let next = if k_last < target {
                lambda / 2.0
            } else {
                lambda + lambda / 2.0
            };
            if next < config.lambda_floor || !next.is_finite() {
                break;
            }
            lambda = next;
            k_last = solve_at(lambda, &mut outcome)?;
            probes -= 1;
        }
    }
    Ok(outcome)
}

/// Forest grower driving the selection.
#[derive(Debug, Clone)]
pub enum GrowerChoice {
    BagBoost(BagBoostConfig),
    Bagging(BaggingConfig),
}

impl Default for GrowerChoice {
    fn default() -> Self {
        GrowerChoice::BagBoost(BagBoostConfig::default())
    }
}

/// What the selection run should produce.
#[derive(Debug, Clone, Copy)]
pub enum SelectionMode {
    /// Bisect until this sparsity is realized.
    TargetK(usize),
    /// Realize every sparsity up to `k_max` that the path can reach.
    FullPath,
    /// Single solve at an explicit lambda; no bisection.
    FixedLambda(f64),
}

#[derive(Debug, Clone)]
pub struct ControlBurnConfig {
    pub grower: GrowerChoice,
    pub costs: CostSpec,
    pub mode: SelectionMode,
    pub k_max: usize,
    pub bisection_budget: usize,
    pub lambda_floor: f64,
    pub refit: RandomForestConfig,
    pub solver: SolveOptions,
    /// Skip refitting entirely (selection sets and lambdas only).
    pub refit_models: bool,
}

impl ControlBurnConfig {
    pub fn new(mode: SelectionMode) -> Self {
        Self {
            grower: GrowerChoice::default(),
            costs: CostSpec::Unit,
            mode,
            k_max: 10,
            bisection_budget: 200,
            lambda_floor: 1e-12,
            refit: RandomForestConfig::default(),
            solver: SolveOptions::default(),
            refit_models: true,
        }
    }
}

/// Solver diagnostics attached to each realized sparsity level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub certified: bool,
}

/// One realized sparsity level.
#[derive(Debug, Clone)]
pub struct KRecord {
    pub lambda: f64,
    /// Selected feature indices, ascending.
    pub selected: Vec<usize>,
    pub refit: Option<RandomForest>,
    /// Training AUC (classification) or training MSE (regression) of the
    /// refit model, when one was built.
    pub train_metric: Option<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Result of one `controlburn` invocation.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub records: BTreeMap<usize, KRecord>,
    pub k_max: usize,
    pub path: Vec<PathPoint>,
    pub trace: GrowthTrace,
    /// Ensemble-growing phases performed; always one per invocation.
    pub grower_runs: usize,
    pub solves: usize,
    pub warnings: Vec<String>,
    names: Vec<String>,
    task: Task,
}

impl SelectionResult {
    pub fn feature_names(&self, k: usize) -> Option<Vec<String>> {
        self.records
            .get(&k)
            .map(|r| r.selected.iter().map(|&j| self.names[j].clone()).collect())
    }

    pub fn is_unreachable(&self, k: usize) -> bool {
        !self.records.contains_key(&k)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Serializable summary: per-k lambda, feature names, metrics.
    pub fn to_report(&self) -> SelectionReport {
        SelectionReport {
            task: self.task,
            k_max: self.k_max,
            records: self
                .records
                .iter()
                .map(|(&k, r)| ReportRecord {
                    k,
                    lambda: r.lambda,
                    features: r.selected.iter().map(|&j| self.names[j].clone()).collect(),
                    train_metric: r.train_metric,
                    objective: r.diagnostics.objective,
                    kkt_residual: r.diagnostics.kkt_residual,
                    iterations: r.diagnostics.iterations,
                    certified: r.diagnostics.certified,
                })
                .collect(),
            path: self.path.clone(),
            solves: self.solves,
            grower_runs: self.grower_runs,
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRecord {
    pub k: usize,
    pub lambda: f64,
    pub features: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_metric: Option<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub task: Task,
    pub k_max: usize,
    pub records: Vec<ReportRecord>,
    pub path: Vec<PathPoint>,
    pub solves: usize,
    pub grower_runs: usize,
    pub warnings: Vec<String>,
}

/// Grow a diverse forest once, prune it to the requested sparsity levels,
/// and refit a random forest on each selected set.
pub fn controlburn(
    data: &Dataset,
    config: &ControlBurnConfig,
    rng: &mut impl Rng,
) -> Result<SelectionResult, SelectError> {
    let p = data.n_features();
    if let SelectionMode::TargetK(k) = config.mode {
        let limit = config.k_max.min(p);
        if k == 0 || k > limit {
            return Err(SelectError::InvalidParam(format!(
                "target sparsity {k} out of range 1..={limit}"
            )));
        }
    }
    if let SelectionMode::FixedLambda(lambda) = config.mode {
        if lambda < 0.0 {
            return Err(SelectError::InvalidParam("lambda must be >= 0".into()));
        }
    }

    let mut warnings = Vec::new();

    // The single ensemble-growing phase.
    let (forest, trace) = match &config.grower {
        GrowerChoice::BagBoost(cfg) => incremental_depth_bag_boosting(data, cfg, rng)?,
        GrowerChoice::Bagging(cfg) => incremental_depth_bagging(data, cfg, rng)?,
    };
    let grower_runs = 1;
    for w in trace.warnings() {
        warnings.push(w.to_string());
    }

    let mut result = SelectionResult {
        records: BTreeMap::new(),
        k_max: config.k_max,
        path: Vec::new(),
        trace,
        grower_runs,
        solves: 0,
        warnings,
        names: data.names().to_vec(),
        task: data.task(),
    };

    if forest.n_trees() == 0 {
        result
            .warnings
            .push("grower produced an offset-only forest; nothing to select".into());
        return Ok(result);
    }

    let loss = LossKind::for_task(data.task());
    let problem = build_problem(&forest, data, &config.costs, loss, 0.0)?;

    // Which sparsity levels get solutions.
    let mut solutions: BTreeMap<usize, Solution> = BTreeMap::new();
    match config.mode {
        SelectionMode::FixedLambda(lambda) => {
            let sol = solve_with_lambda(&problem, lambda, &config.solver)?;
            result.solves = 1;
            result.path.push(PathPoint {
                lambda,
                k: sol.selected.len(),
            });
            let k = sol.selected.len();
            if k == 0 {
                result
                    .warnings
                    .push(format!("lambda {lambda} selects no features"));
            } else {
                result.k_max = result.k_max.max(k);
                solutions.insert(k, sol);
            }
        }
        SelectionMode::TargetK(k_target) => {
            let bis = BisectionConfig {
                targets: vec![k_target],
                record_limit: config.k_max,
                budget: config.bisection_budget,
                lambda_floor: config.lambda_floor,
            };
            let outcome = bisect_lambda(&problem, &bis, &config.solver)?;
            result.solves = outcome.solves;
            result.path = outcome.path;
            if outcome.budget_exhausted {
                result
                    .warnings
                    .push(format!("bisection budget {} exhausted", bis.budget));
            }
            if !outcome.by_k.contains_key(&k_target) {
                let achieved: Vec<usize> = outcome.by_k.keys().copied().collect();
                result.warnings.push(format!(
                    "sparsity {k_target} unreachable; achieved levels {achieved:?}"
                ));
            }
            solutions = outcome.by_k;
        }
        SelectionMode::FullPath => {
            let limit = config.k_max.min(p);
            let bis = BisectionConfig {
                targets: (1..=limit).collect(),
                record_limit: limit,
                budget: config.bisection_budget,
                lambda_floor: config.lambda_floor,
            };
            let outcome = bisect_lambda(&problem, &bis, &config.solver)?;
            result.solves = outcome.solves;
            result.path = outcome.path;
            if outcome.budget_exhausted {
                result
                    .warnings
                    .push(format!("bisection budget {} exhausted", bis.budget));
            }
            for k in 1..=limit {
                if !outcome.by_k.contains_key(&k) {
                    result.warnings.push(format!("sparsity {k} unreachable"));
                }
            }
            solutions = outcome.by_k;
        }
    }

    // Refit policy: everything in full-path/fixed mode, only the target in
    // target mode (the other levels are recorded without models).
    let refit_this = |k: usize| -> bool {
        if !config.refit_models {
            return false;
        }
        match config.mode {
            SelectionMode::TargetK(t) => k == t,
            _ => true,
        }
    };

    for (k, sol) in solutions {
        let diagnostics = SolveDiagnostics {
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
            certified: sol.certified,
        };
        let (refit, train_metric) = if refit_this(k) {
            let model = RandomForest::fit(data, &sol.selected, &config.refit, rng)?;
            let metric = train_metric(&model, data)?;
            (Some(model), Some(metric))
        } else {
            (None, None)
        };
        result.records.insert(
            k,
            KRecord {
                lambda: sol.lambda,
                selected: sol.selected,
                refit,
                train_metric,
                diagnostics,
            },
        );
    }

    Ok(result)
}

/// Training AUC for classification, training MSE for regression.
fn train_metric(model: &RandomForest, data: &Dataset) -> Result<f64, SelectError> {
    let preds = model.predict(data.features())?;
    Ok(match data.task() {
        Task::Classification => roc_auc(preds.view(), data.labels()).unwrap_or(f64::NAN),
        Task::Regression => {
            preds
                .iter()
                .zip(data.labels().iter())
                .map(|(&p, &y)| (y - p).powi(2))
                .sum::<f64>()
                / data.n_rows() as f64
        }
    })
}

/// Training-iteration counts for selecting `k` of `p` features: one
/// ensemble-growing phase here versus `p - k` refits for recursive feature
/// elimination.
pub fn fit_count_comparison(p: usize, k: usize) -> (usize, usize) {
    assert!(k <= p, "k must not exceed p");
    (1, p - k)
}

/// Outcome of a recursive-feature-elimination run, kept as a fit-counting
/// harness: `fits` counts the actual forest trainings performed.
#[derive(Debug, Clone)]
pub struct RfeOutcome {
    pub selected: Vec<usize>,
    pub fits: usize,
}

/// Recursive feature elimination with the same forest the baseline uses:
/// drop the lowest-MDI feature, refit, repeat until `k` remain.
pub fn rfe_select(
    data: &Dataset,
    k: usize,
    config: &RandomForestConfig,
    rng: &mut impl Rng,
) -> Result<RfeOutcome, SelectError> {
    let p = data.n_features();
    if k == 0 || k > p {
        return Err(SelectError::InvalidParam(format!(
            "k={k} out of range for {p} features"
        )));
    }
    let mut columns: Vec<usize> = (0..p).collect();
    let mut fits = 0usize;
    while columns.len() > k {
        let forest = RandomForest::fit(data, &columns, config, rng)?;
        fits += 1;
        let mdi = forest.mdi()?;
        // least important column; ties drop the higher feature index
        let drop_pos = (0..columns.len())
            .min_by(|&a, &b| {
                mdi.values[a]
                    .total_cmp(&mdi.values[b])
                    .then(columns[b].cmp(&columns[a]))
            })
            .expect("non-empty columns");
        columns.remove(drop_pos);
    }
    Ok(RfeOutcome {
        selected: columns,
        fits,
    })
}
