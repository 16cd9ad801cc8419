//! Metrics and experiment drivers.
//!
//! [`compare_cv`] runs the head-to-head study: per fold, select features
//! with the pruning pipeline and with the plain MDI ranking, refit the same
//! kind of random forest on each selected set, and score test ROC-AUC.
//! Both refits share a per-(fold, k) seed, so identical selected sets give
//! байт-identical models and an AUC difference of exactly zero.
//!
//! [`uninformative_rank_experiment`] appends a uniform-random continuous
//! column to a classification dataset and sweeps the selection path,
//! recording whether the column survives and where the refit model ranks it.
//! Continuous columns attract splits and inflate impurity importance; the
//! sweep shows the penalized selection demoting the column as the feature
//! budget tightens.
//!
//! [`synth`] holds the synthetic dataset generators the experiments run on.

use std::collections::BTreeMap;

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{make_folds, DataError, Dataset, Task};
use crate::select::{
    baseline_mdi_rank, controlburn, ControlBurnConfig, RandomForest, SelectError, SelectionMode,
};
use crate::util::mean_std;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels must have equal length")]
    LengthMismatch,
    #[error("both classes must be present to rank scores")]
    SingleClass,
    #[error("classification data required")]
    NotClassification,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Rank-based (Mann-Whitney) ROC-AUC; tied scores contribute one half.
pub fn roc_auc(scores: ArrayView1<'_, f64>, labels: ArrayView1<'_, f64>) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch);
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    // average ranks over ties
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = (0..labels.len())
        .filter(|&i| labels[i] == 1.0)
        .map(|i| ranks[i])
        .sum();
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Ok(auc)
}

/// Per-sparsity AUC summary for the two methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KComparison {
    pub k: usize,
    pub controlburn_mean: f64,
    pub controlburn_std: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// Folds where the selection path realized this sparsity.
    pub folds_counted: usize,
}

/// Selected feature names per fold and sparsity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSelections {
    pub fold: usize,
    pub controlburn: BTreeMap<usize, Vec<String>>,
    pub baseline: BTreeMap<usize, Vec<String>>,
}

/// Rank trace entry for the uninformative-feature experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankPoint {
    pub k: usize,
    pub lambda: f64,
    pub selected: bool,
    /// 1-based position of the injected column in the refit model's own
    /// importance ranking; absent when the column is not selected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// Cross-validated comparison plus any rank trace attached by the
/// uninformative-feature driver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub folds: usize,
    pub k_range: Vec<usize>,
    pub per_k: Vec<KComparison>,
    pub selections: Vec<FoldSelections>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_trace: Vec<RankPoint>,
}

impl ComparisonReport {
    /// `k,method,mean_auc,std_auc` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,method,mean_auc,std_auc\n");
        for row in &self.per_k {
            out.push_str(&format!(
                "{},controlburn,{},{}\n",
                row.k, row.controlburn_mean, row.controlburn_std
            ));
            out.push_str(&format!(
                "{},baseline,{},{}\n",
                row.k, row.baseline_mean, row.baseline_std
            ));
        }
        out
    }
}

/// Controls for [`compare_cv`].
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub k_range: Vec<usize>,
    pub folds: usize,
    /// Template for the selection runs; mode and refit policy are managed
    /// per fold.
    pub selection: ControlBurnConfig,
}

impl CompareConfig {
    pub fn new(k_range: Vec<usize>) -> Self {
        Self {
            k_range,
            folds: 5,
            selection: ControlBurnConfig::new(SelectionMode::FullPath),
        }
    }
}

/// Stratified k-fold comparison of the pruning pipeline against the MDI
/// baseline. Each fold grows one forest, walks the full selection path, and
/// refits both methods' selected sets with a shared seed before scoring
/// test AUC.
pub fn compare_cv(
    data: &Dataset,
    config: &CompareConfig,
    rng: &mut impl Rng,
) -> Result<ComparisonReport, EvalError> {
    if data.task() != Task::Classification {
        return Err(EvalError::NotClassification);
    }
    if config.k_range.is_empty() {
        return Err(EvalError::InvalidParam("empty k range".into()));
    }
    let mut k_range: Vec<usize> = config.k_range.clone();
    k_range.sort_unstable();
    k_range.dedup();
    let k_top = *k_range.last().expect("non-empty");
    if k_top > data.n_features() {
        return Err(EvalError::InvalidParam(format!(
            "k={k_top} exceeds feature count {}",
            data.n_features()
        )));
    }

    let plan = make_folds(data, config.folds, rng)?;
    let mut cb_scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut base_scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut selections = Vec::new();

    for fold in 0..config.folds {
        let fold_seed: u64 = rng.random();
        let wrap = |source: EvalError| EvalError::Fold {
            fold,
            source: Box::new(source),
        };

        let train = data.subset_rows(&plan.train_rows(fold)).map_err(|e| wrap(e.into()))?;
        let test = data.subset_rows(&plan.fold_rows(fold)).map_err(|e| wrap(e.into()))?;
        let mut fold_rng = ChaCha8Rng::seed_from_u64(fold_seed);

        let mut cb_cfg = config.selection.clone();
        cb_cfg.mode = SelectionMode::FullPath;
        cb_cfg.k_max = k_top;
        cb_cfg.refit_models = false;
        let cb = controlburn(&train, &cb_cfg, &mut fold_rng).map_err(|e| wrap(e.into()))?;

        let ranking = baseline_mdi_rank(&train, &cb_cfg.refit, &mut fold_rng)
            .map_err(|e| wrap(e.into()))?;

        let mut fold_sel = FoldSelections {
            fold,
            controlburn: BTreeMap::new(),
            baseline: BTreeMap::new(),
        };

        for &k in &k_range {
            // both methods refit from the same seed: identical selected
            // sets produce identical models and a zero AUC difference
            let refit_seed = fold_seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);

            let mut base_set: Vec<usize> = ranking[..k].to_vec();
            base_set.sort_unstable();
            let base_model = RandomForest::fit(
                &train,
                &base_set,
                &cb_cfg.refit,
                &mut ChaCha8Rng::seed_from_u64(refit_seed),
            )
            .map_err(|e| wrap(e.into()))?;
            let base_auc = roc_auc(
                base_model
                    .predict(test.features())
                    .map_err(|e| wrap(e.into()))?
                    .view(),
                test.labels(),
            )
            .map_err(|e| wrap(e))?;
            base_scores.entry(k).or_default().push(base_auc);
            fold_sel.baseline.insert(
                k,
                base_set.iter().map(|&j| data.names()[j].clone()).collect(),
            );

            if let Some(record) = cb.records.get(&k) {
                let cb_model = RandomForest::fit(
                    &train,
                    &record.selected,
                    &cb_cfg.refit,
                    &mut ChaCha8Rng::seed_from_u64(refit_seed),
                )
                .map_err(|e| wrap(e.into()))?;
                let cb_auc = roc_auc(
                    cb_model
                        .predict(test.features())
                        .map_err(|e| wrap(e.into()))?
                        .view(),
                    test.labels(),
                )
                .map_err(|e| wrap(e))?;
                cb_scores.entry(k).or_default().push(cb_auc);
                fold_sel.controlburn.insert(
                    k,
                    record
                        .selected
                        .iter()
                        .map(|&j| data.names()[j].clone())
                        .collect(),
                );
            }
        }
        selections.push(fold_sel);
    }

    let per_k = k_range
        .iter()
        .map(|&k| {
            let cb = cb_scores.get(&k).cloned().unwrap_or_default();
            let base = base_scores.get(&k).cloned().unwrap_or_default();
            let (cb_mean, cb_std) = mean_std(&cb);
            let (base_mean, base_std) = mean_std(&base);
            KComparison {
                k,
                controlburn_mean: cb_mean,
                controlburn_std: cb_std,
                baseline_mean: base_mean,
                baseline_std: base_std,
                folds_counted: cb.len(),
            }
        })
        .collect();

    Ok(ComparisonReport {
        folds: config.folds,
        k_range,
        per_k,
        selections,
        rank_trace: Vec::new(),
    })
}

/// Outcome of the uninformative-feature sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankExperiment {
    pub injected_name: String,
    pub injected_index: usize,
    pub points: Vec<RankPoint>,
}

/// Append a uniform-random continuous column, run the full selection path,
/// and trace the column's fate at every realized sparsity.
pub fn uninformative_rank_experiment(
    data: &Dataset,
    config: &ControlBurnConfig,
    rng: &mut impl Rng,
) -> Result<RankExperiment, EvalError> {
    if data.task() != Task::Classification {
        return Err(EvalError::NotClassification);
    }
    let m = data.n_rows();
    let p = data.n_features();

    let mut name = "uninformative_random".to_string();
    while data.names().contains(&name) {
        name.push('_');
    }
    let mut features = ndarray::Array2::zeros((m, p + 1));
    features
        .slice_mut(ndarray::s![.., ..p])
        .assign(&data.features());
    for i in 0..m {
        features[(i, p)] = rng.random::<f64>();
    }
    let mut names = data.names().to_vec();
    names.push(name.clone());
    let augmented = Dataset::new(features, data.labels().to_owned(), names, data.task())?;

    let mut cfg = config.clone();
    cfg.mode = SelectionMode::FullPath;
    cfg.refit_models = true;
    let result = controlburn(&augmented, &cfg, rng)?;

    let mut points = Vec::new();
    for (&k, record) in &result.records {
        let selected = record.selected.contains(&p);
        let rank = if selected {
            record.refit.as_ref().and_then(|model| {
                let mdi = model.mdi().ok()?;
                let mut order: Vec<usize> = (0..model.columns().len()).collect();
                order.sort_by(|&a, &b| mdi.values[b].total_cmp(&mdi.values[a]).then(a.cmp(&b)));
                let pos_in_model = model.columns().iter().position(|&c| c == p)?;
                order.iter().position(|&o| o == pos_in_model).map(|r| r + 1)
            })
        } else {
            None
        };
        points.push(RankPoint {
            k,
            lambda: record.lambda,
            selected,
            rank,
        });
    }

    Ok(RankExperiment {
        injected_name: name,
        injected_index: p,
        points,
    })
}

/// Synthetic dataset generators for the experiment drivers.
pub mod synth {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand_distr::{Distribution, Normal};

    /// Linear-margin binary classification.
    #[derive(Debug, Clone)]
    pub struct MarginSpec {
        pub m: usize,
        /// Coefficients of the informative features, strongest first.
        pub betas: Vec<f64>,
        /// Informative features are fair coin flips in {0,1} (entering the
        /// margin as +-beta) rather than standard normals.
        pub binary_signals: bool,
        /// Pairwise interaction terms `(i, j, coefficient)` between
        /// informative features, added to the margin on the +-1 scale.
        pub interactions: Vec<(usize, usize, f64)>,
        pub noise_continuous: usize,
        pub noise_binary: usize,
        /// Standard deviation of the additive margin noise.
        pub margin_noise: f64,
    }

    impl MarginSpec {
        pub fn n_features(&self) -> usize {
            self.betas.len() + self.noise_continuous + self.noise_binary
        }
    }

    /// Labels follow `sign(beta . x + noise)`; continuous features are
    /// standard normal, binary ones fair coin flips.
    pub fn gaussian_margin_classification(spec: &MarginSpec, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s = spec.betas.len();
        let p = spec.n_features();
        let mut features = Array2::zeros((spec.m, p));
        let mut labels = Array1::zeros(spec.m);
        for i in 0..spec.m {
            let mut margin = 0.0;
            for (j, beta) in spec.betas.iter().enumerate() {
                if spec.binary_signals {
                    let v = f64::from(rng.random::<bool>());
                    features[(i, j)] = v;
                    margin += beta * (2.0 * v - 1.0);
                } else {
                    let v = normal.sample(&mut rng);
                    features[(i, j)] = v;
                    margin += beta * v;
                }
            }
            for &(a, b, coef) in &spec.interactions {
                let signed = |v: f64| if spec.binary_signals { 2.0 * v - 1.0 } else { v };
                margin += coef * signed(features[(i, a)]) * signed(features[(i, b)]);
            }
            for j in 0..spec.noise_continuous {
                features[(i, s + j)] = normal.sample(&mut rng);
            }
            for j in 0..spec.noise_binary {
                features[(i, s + spec.noise_continuous + j)] = f64::from(rng.random::<bool>());
            }
            margin += spec.margin_noise * normal.sample(&mut rng);
            labels[i] = f64::from(margin > 0.0);
        }
        let mut names = Vec::with_capacity(p);
        for j in 0..s {
            names.push(format!("signal{}", j + 1));
        }
        for j in 0..spec.noise_continuous {
            names.push(format!("noise{}", j + 1));
        }
        for j in 0..spec.noise_binary {
            names.push(format!("bin{}", j + 1));
        }
        Dataset::new(features, labels, names, Task::Classification)
            .expect("generated data is valid")
    }

    /// Nonlinear regression benchmark: five informative uniform features,
    /// the rest irrelevant. The response follows
    /// `10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`, rescaled to
    /// roughly unit variance so loss tolerances stated on an O(1) scale
    /// apply; `noise_sd` is the post-scaling noise level.
    pub fn friedman_regression(
        m: usize,
        extra_features: usize,
        noise_sd: f64,
        seed: u64,
    ) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let p = 5 + extra_features;
        let mut features = Array2::zeros((m, p));
        let mut labels = Array1::zeros(m);
        for i in 0..m {
            for j in 0..p {
                features[(i, j)] = rng.random::<f64>();
            }
            let x = |j: usize| features[(i, j)];
            let signal = 10.0 * (std::f64::consts::PI * x(0) * x(1)).sin()
                + 20.0 * (x(2) - 0.5).powi(2)
                + 10.0 * x(3)
                + 5.0 * x(4);
            labels[i] = signal / 5.0 + noise_sd * normal.sample(&mut rng);
        }
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        Dataset::new(features, labels, names, Task::Regression).expect("generated data is valid")
    }
}
