//! Data ingestion, resampling, and synthetic correlated-feature generation.
//!
//! A [`Dataset`] is an immutable feature matrix plus a label vector. Rows are
//! resampled with replacement into [`Bag`]s for bagging (the complement of a
//! bag is its out-of-bag set), and partitioned into stratified folds for
//! cross-validation. [`duplicate_features`] builds semi-synthetic variants by
//! copying columns and adding Gaussian noise, which controls the degree of
//! feature correlation in an experiment.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prediction task the labels encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Binary classification with labels in {0, 1}.
    Classification,
    /// Regression with real-valued labels.
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classification => write!(f, "classification"),
            Task::Regression => write!(f, "regression"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),
    #[error("non-numeric value '{value}' at row {row}, column '{column}'")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },
    #[error("classification label '{value}' at row {row} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: String },
    #[error("duplicate feature name '{0}'")]
    DuplicateName(String),
    #[error("dataset must have at least one row and one feature (got {rows} x {cols})")]
    EmptyData { rows: usize, cols: usize },
    #[error("feature index {index} out of range for {p} features")]
    FeatureIndexOutOfRange { index: usize, p: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("class {label} has {count} members, cannot stratify into {k} folds")]
    ClassTooSmall { label: u8, count: usize, k: usize },
}

/// An immutable feature matrix with labels, feature names, and a task kind.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
    names: Vec<String>,
    task: Task,
}

impl Dataset {
    /// Validates and wraps the parts of a dataset: shapes must agree, names
    /// must be unique, all values finite, and classification labels in {0,1}.
    pub fn new(
        features: Array2<f64>,
        labels: Array1<f64>,
        names: Vec<String>,
        task: Task,
    ) -> Result<Self, DataError> {
        let (m, p) = features.dim();
        if m == 0 || p == 0 {
            return Err(DataError::EmptyData { rows: m, cols: p });
        }
        if labels.len() != m {
            return Err(DataError::InvalidParam(format!(
                "labels length {} != row count {m}",
                labels.len()
            )));
        }
        if names.len() != p {
            return Err(DataError::InvalidParam(format!(
                "names length {} != feature count {p}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        for (i, row) in features.outer_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonNumericCell {
                        row: i + 1,
                        column: names[j].clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(DataError::InvalidParam(format!(
                    "non-finite label at row {}",
                    i + 1
                )));
            }
            if task == Task::Classification && y != 0.0 && y != 1.0 {
                return Err(DataError::NonBinaryLabel {
                    row: i + 1,
                    value: y.to_string(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            names,
            task,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> ArrayView1<'_, f64> {
        self.labels.view()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// New dataset from a subset of rows (indices may repeat).
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset, DataError> {
        let p = self.n_features();
        let mut features = Array2::zeros((rows.len(), p));
        let mut labels = Array1::zeros(rows.len());
        for (out, &r) in rows.iter().enumerate() {
            if r >= self.n_rows() {
                return Err(DataError::InvalidParam(format!(
                    "row index {r} out of range for {} rows",
                    self.n_rows()
                )));
            }
            features.row_mut(out).assign(&self.features.row(r));
            labels[out] = self.labels[r];
        }
        Dataset::new(features, labels, self.names.clone(), self.task)
    }
}

/// A bootstrap resample: `in_bag` holds `m` row indices drawn with
/// replacement, `oob` the rows that were never drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bag {
    pub in_bag: Vec<usize>,
    pub oob: Vec<usize>,
}

/// Draw a bootstrap bag of size `m` over rows `0..m`.
pub fn sample_bag(m: usize, rng: &mut impl Rng) -> Result<Bag, DataError> {
    if m == 0 {
        return Err(DataError::InvalidParam("cannot bag zero rows".into()));
    }
    let mut drawn = vec![false; m];
    let mut in_bag = Vec::with_capacity(m);
    for _ in 0..m {
        let idx = rng.random_range(0..m);
        drawn[idx] = true;
        in_bag.push(idx);
    }
    let oob = (0..m).filter(|&i| !drawn[i]).collect();
    Ok(Bag { in_bag, oob })
}

/// Append noisy copies of the target columns: each new column equals the
/// original plus i.i.d. Gaussian(0, sigma^2) noise, named `<orig>_dup<i>`.
pub fn duplicate_features(
    data: &Dataset,
    targets: &[usize],
    copies: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Dataset, DataError> {
    let (m, p) = (data.n_rows(), data.n_features());
    if copies == 0 {
        return Err(DataError::InvalidParam("copies must be >= 1".into()));
    }
    if sigma < 0.0 {
        return Err(DataError::InvalidParam("sigma must be >= 0".into()));
    }
    for &t in targets {
        if t >= p {
            return Err(DataError::FeatureIndexOutOfRange { index: t, p });
        }
    }
    let extra = targets.len() * copies;
    let mut features = Array2::zeros((m, p + extra));
    features
        .slice_mut(ndarray::s![.., ..p])
        .assign(&data.features);
    let mut names = data.names.to_vec();

    let mut col = p;
    for &t in targets {
        for c in 1..=copies {
            let name = format!("{}_dup{c}", data.names[t]);
            if names.contains(&name) {
                return Err(DataError::DuplicateName(name));
            }
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma)
                    .map_err(|e| DataError::InvalidParam(e.to_string()))?;
                for i in 0..m {
                    features[(i, col)] = data.features[(i, t)] + noise.sample(rng);
                }
            } else {
                for i in 0..m {
                    features[(i, col)] = data.features[(i, t)];
                }
            }
            names.push(name);
            col += 1;
        }
    }
    Dataset::new(features, data.labels.clone(), names, data.task)
}

/// A k-fold partition of the rows. For classification the folds are
/// stratified: per-class counts differ by at most one across folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Rows assigned to fold `f`.
    pub fn fold_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Rows outside fold `f`.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != f)
            .collect()
    }
}

/// Split rows into `k` folds, stratified by class for classification tasks.
pub fn make_folds(data: &Dataset, k: usize, rng: &mut impl Rng) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::InvalidParam("fold count must be >= 2".into()));
    }
    let m = data.n_rows();
    if k > m {
        return Err(DataError::InvalidParam(format!(
            "fold count {k} exceeds row count {m}"
        )));
    }
    let mut assignments = vec![0usize; m];

    // Deal each stratum round-robin; the starting fold rotates with the
    // cumulative count so overall fold sizes stay balanced.
    let strata: Vec<Vec<usize>> = match data.task {
        Task::Classification => {
            let zeros: Vec<usize> = (0..m).filter(|&i| data.labels[i] == 0.0).collect();
            let ones: Vec<usize> = (0..m).filter(|&i| data.labels[i] == 1.0).collect();
            for (label, class) in [(0u8, &zeros), (1u8, &ones)] {
                if !class.is_empty() && class.len() < k {
                    return Err(DataError::ClassTooSmall {
                        label,
                        count: class.len(),
                        k,
                    });
                }
            }
            vec![zeros, ones]
        }
        Task::Regression => vec![(0..m).collect()],
    };

    let mut dealt = 0usize;
    for stratum in strata {
        let mut idx = stratum;
        shuffle(&mut idx, rng);
        for i in idx {
            assignments[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(FoldPlan { k, assignments })
}

/// Fisher-Yates shuffle driven by the caller's rng.
fn shuffle(values: &mut [usize], rng: &mut impl Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

/// Load a dataset from a headered CSV file. The label column is removed from
/// the features; every other cell must parse as a finite number.
pub fn load_csv(path: &Path, label_column: &str, task: Task) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = row_idx + 1;
        let mut row = Vec::with_capacity(headers.len().saturating_sub(1));
        for (col, cell) in record.iter().enumerate() {
            let trimmed = cell.trim();
            if trimmed.is_empty() {
                return Err(DataError::MissingValue {
                    row: row_no,
                    column: headers[col].clone(),
                });
            }
            let value: f64 = trimmed.parse().map_err(|_| DataError::NonNumericCell {
                row: row_no,
                column: headers[col].clone(),
                value: trimmed.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonNumericCell {
                    row: row_no,
                    column: headers[col].clone(),
                    value: trimmed.to_string(),
                });
            }
            if col == label_idx {
                if task == Task::Classification && value != 0.0 && value != 1.0 {
                    return Err(DataError::NonBinaryLabel {
                        row: row_no,
                        value: trimmed.to_string(),
                    });
                }
                labels.push(value);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }

    let m = rows.len();
    let p = names.len();
    if m == 0 || p == 0 {
        return Err(DataError::EmptyData { rows: m, cols: p });
    }
    let mut features = Array2::zeros((m, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[(i, j)] = v;
        }
    }
    Dataset::new(features, Array1::from_vec(labels), names, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn toy(m: usize, p: usize) -> Dataset {
        let features = Array2::from_shape_fn((m, p), |(i, j)| (i * p + j) as f64);
        let labels = Array1::from_shape_fn(m, |i| (i % 2) as f64);
        let names = (0..p).map(|j| format!("f{j}")).collect();
        Dataset::new(features, labels, names, Task::Classification).unwrap()
    }

    #[test]
    fn load_small_classification_csv() {
        let f = write_csv("a,b,y\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,1\n");
        let data = load_csv(f.path(), "y", Task::Classification).unwrap();
        assert_eq!(data.n_rows(), 3);
        assert_eq!(data.n_features(), 2);
        assert_eq!(data.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(data.labels().to_vec(), vec![0.0, 1.0, 1.0]);
        assert_eq!(data.features()[(1, 1)], 4.0);
    }

    #[test]
    fn load_rejects_out_of_range_class_label() {
        let f = write_csv("a,y\n1.0,0\n2.0,2\n");
        let err = load_csv(f.path(), "y", Task::Classification).unwrap_err();
        match err {
            DataError::NonBinaryLabel { row, value } => {
                assert_eq!(row, 2);
                assert_eq!(value, "2");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_regression_csv() {
        let mut body = String::from("x1,x2,target\n");
        for i in 0..100 {
            body.push_str(&format!("{},{},{}\n", i, i * 2, i as f64 * 0.5));
        }
        let f = write_csv(&body);
        let data = load_csv(f.path(), "target", Task::Regression).unwrap();
        assert_eq!(data.n_rows(), 100);
        assert_eq!(data.task(), Task::Regression);
    }

    #[test]
    fn load_reports_bad_cell_position() {
        let f = write_csv("a,b,y\n1.0,2.0,0\n1.0,oops,1\n");
        let err = load_csv(f.path(), "y", Task::Classification).unwrap_err();
        match err {
            DataError::NonNumericCell { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_rejects_missing_value_and_label_column() {
        let f = write_csv("a,b,y\n1.0,,0\n");
        assert!(matches!(
            load_csv(f.path(), "y", Task::Classification),
            Err(DataError::MissingValue { row: 1, .. })
        ));
        let f = write_csv("a,b\n1.0,2.0\n");
        assert!(matches!(
            load_csv(f.path(), "y", Task::Classification),
            Err(DataError::MissingLabelColumn(_))
        ));
        assert!(matches!(
            load_csv(Path::new("/no/such/file.csv"), "y", Task::Classification),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn dataset_rejects_duplicate_names() {
        let features = Array2::zeros((2, 2));
        let labels = Array1::zeros(2);
        let err = Dataset::new(
            features,
            labels,
            vec!["a".into(), "a".into()],
            Task::Regression,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DuplicateName(_)));
    }

    #[test]
    fn bag_of_one_row() {
        let bag = sample_bag(1, &mut rng(0)).unwrap();
        assert_eq!(bag.in_bag, vec![0]);
        assert!(bag.oob.is_empty());
    }

    #[test]
    fn bag_invariants_hold() {
        for seed in 0..20 {
            let m = 57;
            let bag = sample_bag(m, &mut rng(seed)).unwrap();
            assert_eq!(bag.in_bag.len(), m);
            let in_set: HashSet<usize> = bag.in_bag.iter().copied().collect();
            for &o in &bag.oob {
                assert!(!in_set.contains(&o));
            }
            assert_eq!(in_set.len() + bag.oob.len(), m);
        }
    }

    #[test]
    fn bag_is_deterministic_per_seed() {
        let a = sample_bag(100, &mut rng(9)).unwrap();
        let b = sample_bag(100, &mut rng(9)).unwrap();
        assert_eq!(a.in_bag, b.in_bag);
        assert_eq!(a.oob, b.oob);
    }

    // Monte Carlo oracle: E[|oob|/m] = (1 - 1/m)^m -> 1/e ~ 0.368.
    #[test]
    fn oob_fraction_concentrates_near_inv_e() {
        for m in [100usize, 1000] {
            let mut r = rng(42);
            let draws = 200;
            let mean: f64 = (0..draws)
                .map(|_| sample_bag(m, &mut r).unwrap().oob.len() as f64 / m as f64)
                .sum::<f64>()
                / draws as f64;
            assert!(
                (0.35..=0.39).contains(&mean),
                "m={m}: mean oob fraction {mean}"
            );
        }
    }

    #[test]
    fn duplicate_with_zero_sigma_copies_exactly() {
        let data = toy(10, 3);
        let out = duplicate_features(&data, &[0], 3, 0.0, &mut rng(3)).unwrap();
        assert_eq!(out.n_features(), 6);
        assert_eq!(out.names()[3], "f0_dup1");
        assert_eq!(out.names()[5], "f0_dup3");
        for i in 0..10 {
            for c in 3..6 {
                assert_eq!(out.features()[(i, c)], data.features()[(i, 0)]);
            }
        }
    }

    #[test]
    fn duplicate_grows_p_by_targets_times_copies() {
        let data = toy(6, 4);
        let out = duplicate_features(&data, &[0, 2], 2, 0.5, &mut rng(1)).unwrap();
        assert_eq!(out.n_features(), 4 + 4);
    }

    #[test]
    fn duplicate_rejects_bad_targets_and_collisions() {
        let data = toy(6, 2);
        assert!(matches!(
            duplicate_features(&data, &[5], 1, 0.0, &mut rng(0)),
            Err(DataError::FeatureIndexOutOfRange { index: 5, p: 2 })
        ));
        // a second pass over the same target regenerates the same names
        assert!(matches!(
            duplicate_features(&data, &[0, 0], 1, 0.0, &mut rng(0)),
            Err(DataError::DuplicateName(_))
        ));
    }

    // Monte Carlo oracle: corr(x, x + noise) = 1/sqrt(1 + sigma^2) ~ 0.995
    // for a unit-variance column and sigma = 0.1.
    #[test]
    fn duplicate_noise_keeps_high_correlation() {
        let m = 2000;
        let mut r = rng(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let features = Array2::from_shape_fn((m, 1), |_| normal.sample(&mut r));
        let labels = Array1::zeros(m);
        let data = Dataset::new(features, labels, vec!["x".into()], Task::Regression).unwrap();

        let mut corr_sum = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let out = duplicate_features(&data, &[0], 1, 0.1, &mut rng(seed)).unwrap();
            let a: Vec<f64> = out.features().column(0).to_vec();
            let b: Vec<f64> = out.features().column(1).to_vec();
            corr_sum += pearson(&a, &b);
        }
        let mean_corr = corr_sum / seeds as f64;
        assert!(mean_corr > 0.99, "mean correlation {mean_corr}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn folds_stratify_balanced_classes() {
        let data = toy(10, 2); // labels alternate 0/1, 5 each
        let plan = make_folds(&data, 5, &mut rng(11)).unwrap();
        for f in 0..5 {
            let rows = plan.fold_rows(f);
            assert_eq!(rows.len(), 2);
            let ones = rows.iter().filter(|&&i| data.labels()[i] == 1.0).count();
            assert_eq!(ones, 1, "fold {f} should hold one member of each class");
        }
    }

    #[test]
    fn two_folds_of_four_rows() {
        let features = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let labels = Array1::from_vec(vec![0.5, 1.5, 2.5, 3.5]);
        let data = Dataset::new(features, labels, vec!["x".into()], Task::Regression).unwrap();
        let plan = make_folds(&data, 2, &mut rng(5)).unwrap();
        assert_eq!(plan.fold_rows(0).len(), 2);
        assert_eq!(plan.fold_rows(1).len(), 2);
    }

    #[test]
    fn fold_sizes_balanced_for_103_rows() {
        let data = toy(103, 2);
        let plan = make_folds(&data, 5, &mut rng(2)).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| plan.fold_rows(f).len()).collect();
        sizes.sort_unstable();
        assert!(sizes.iter().all(|&s| s == 20 || s == 21), "sizes {sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        // stratification: per-class counts differ by at most one
        for class in [0.0, 1.0] {
            let counts: Vec<usize> = (0..5)
                .map(|f| {
                    plan.fold_rows(f)
                        .iter()
                        .filter(|&&i| data.labels()[i] == class)
                        .count()
                })
                .collect();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "class {class} counts {counts:?}");
        }
    }

    #[test]
    fn folds_reject_tiny_classes() {
        let features = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        let labels = Array1::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let data = Dataset::new(features, labels, vec!["x".into()], Task::Classification).unwrap();
        assert!(matches!(
            make_folds(&data, 3, &mut rng(0)),
            Err(DataError::ClassTooSmall { label: 1, count: 1, k: 3 })
        ));
    }

    #[test]
    fn folds_deterministic_per_seed() {
        let data = toy(40, 2);
        let a = make_folds(&data, 4, &mut rng(13)).unwrap();
        let b = make_folds(&data, 4, &mut rng(13)).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }
}
