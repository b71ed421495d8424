//! Dataset ingestion and preparation: CSV loading, standardization,
//! stratified splitting with optional test-skew rebalancing, the
//! inverse-dataset construction, and K-means inducing-point initialization.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::real::{cst, Real};
use crate::svgp::InducingInputs;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("not enough positives for the requested test composition (max achievable ratio {max_ratio})")]
    InsufficientPositives { max_ratio: f64 },
    #[error("not enough negatives to reach the requested test ratio")]
    InsufficientNegatives,
    #[error("both classes must be present")]
    SingleClass,
    #[error("M = {m} exceeds the number of data points {n}")]
    MTooLarge { m: usize, n: usize },
    #[error("column index {0} out of range")]
    ColumnOutOfRange(usize),
    #[error("train fraction must lie in (0, 1)")]
    BadFraction,
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Feature matrix, binary labels (1 = fraud) and, once standardized, the
/// per-feature statistics needed to transform new rows identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub feature_names: Vec<String>,
    /// Per-column (mean, population stddev) applied to `x`; identity (0,1)
    /// for columns that were not standardized.
    pub standardization: Option<Vec<(T, T)>>,
}

/// How to split a dataset into train and test sets.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec<T: Real> {
    pub train_fraction: T,
    /// When set, the test set is rebalanced to this fraud fraction by
    /// undersampling held-out negatives; when absent the natural skew is kept.
    pub test_fraud_ratio: Option<T>,
    pub seed: u64,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>, feature_names: Vec<String>) -> Self {
        Self {
            x,
            y,
            feature_names,
            standardization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v > cst(0.5)).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let x = DMatrix::from_fn(idx.len(), self.dim(), |r, c| self.x[(idx[r], c)]);
        let y = DVector::from_fn(idx.len(), |r, _| self.y[idx[r]]);
        Self {
            x,
            y,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    fn class_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..self.len() {
            if self.y[i] > cst(0.5) {
                pos.push(i);
            } else {
                neg.push(i);
            }
        }
        (pos, neg)
    }

    /// Computes (mean, population stddev) over the selected columns (all when
    /// `columns` is `None`) and transforms in place. Constant columns become
    /// all-zeros; their indices are returned so callers can warn.
    pub fn standardize(&mut self, columns: Option<&[usize]>) -> Result<Vec<usize>> {
        let d = self.dim();
        let selected: Vec<usize> = match columns {
            Some(c) => {
                for &j in c {
                    if j >= d {
                        return Err(DataError::ColumnOutOfRange(j));
                    }
                }
                c.to_vec()
            }
            None => (0..d).collect(),
        };
        let n = cst::<T>(self.len() as f64);
        let mut stats = vec![(T::zero(), T::one()); d];
        let mut constant = Vec::new();
        for &j in &selected {
            let mean = self.x.column(j).sum() / n;
            let var = self
                .x
                .column(j)
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                / n;
            let sd = var.sqrt();
            if sd == T::zero() {
                constant.push(j);
                stats[j] = (mean, T::one());
                for i in 0..self.len() {
                    self.x[(i, j)] = T::zero();
                }
            } else {
                stats[j] = (mean, sd);
                for i in 0..self.len() {
                    self.x[(i, j)] = (self.x[(i, j)] - mean) / sd;
                }
            }
        }
        self.standardization = Some(stats);
        Ok(constant)
    }

    /// Applies previously computed statistics, e.g. the training-set ones to
    /// a test set.
    pub fn apply_standardization(&mut self, stats: &[(T, T)]) {
        for (j, &(mean, sd)) in stats.iter().enumerate().take(self.dim()) {
            for i in 0..self.len() {
                self.x[(i, j)] = (self.x[(i, j)] - mean) / sd;
            }
        }
        self.standardization = Some(stats.to_vec());
    }

    /// Stratified random split. With `test_fraud_ratio` set, the test set is
    /// all held-out positives plus undersampled held-out negatives so that
    /// positives/total matches the ratio (±1 row); the train side keeps its
    /// natural composition.
    pub fn split(&self, spec: SplitSpec<T>) -> Result<(Self, Self)> {
        let f = spec.train_fraction.to_f64().unwrap_or(-1.0);
        if !(f > 0.0 && f < 1.0) {
            return Err(DataError::BadFraction);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (mut pos, mut neg) = self.class_indices();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let n_pos_train = (pos.len() as f64 * f).round() as usize;
        let n_neg_train = (neg.len() as f64 * f).round() as usize;
        let (pos_train, pos_test) = pos.split_at(n_pos_train.min(pos.len()));
        let (neg_train, neg_test) = neg.split_at(n_neg_train.min(neg.len()));

        let mut train_idx: Vec<usize> = pos_train.iter().chain(neg_train).copied().collect();
        train_idx.sort_unstable();

        let test_idx: Vec<usize> = match spec.test_fraud_ratio {
            None => {
                let mut idx: Vec<usize> = pos_test.iter().chain(neg_test).copied().collect();
                idx.sort_unstable();
                idx
            }
            Some(ratio) => {
                let r = ratio.to_f64().unwrap_or(0.0);
                if pos_test.is_empty() {
                    return Err(DataError::InsufficientPositives { max_ratio: 0.0 });
                }
                let total = (pos_test.len() as f64 / r).round() as usize;
                let want_neg = total.saturating_sub(pos_test.len());
                if want_neg > neg_test.len() {
                    return Err(DataError::InsufficientNegatives);
                }
                let mut idx: Vec<usize> = pos_test
                    .iter()
                    .chain(neg_test.iter().take(want_neg))
                    .copied()
                    .collect();
                idx.sort_unstable();
                idx
            }
        };
        Ok((self.subset(&train_idx), self.subset(&test_idx)))
    }

    /// Resamples with swapped class proportions: the minority class is
    /// upsampled with replacement to the majority count and the majority
    /// class subsampled without replacement to the minority count. Output
    /// size equals the input size.
    pub fn inverse_dataset(&self, seed: u64) -> Result<Self> {
        let (pos, neg) = self.class_indices();
        if pos.is_empty() || neg.is_empty() {
            return Err(DataError::SingleClass);
        }
        let (minority, majority) = if pos.len() <= neg.len() {
            (pos, neg)
        } else {
            (neg, pos)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = Vec::with_capacity(self.len());
        // minority resampled with replacement up to the majority count
        for _ in 0..majority.len() {
            idx.push(minority[rng.gen_range(0..minority.len())]);
        }
        // majority subsampled without replacement down to the minority count
        let mut maj = majority.clone();
        maj.shuffle(&mut rng);
        idx.extend(maj.into_iter().take(minority.len()));
        Ok(self.subset(&idx))
    }

    /// Seeded k-means++ initialization followed by Lloyd iterations to an
    /// assignment fixpoint (or `max_iters`); the M centroids become the
    /// inducing inputs. Duplicate centroids are perturbed by 1e-6 noise.
    pub fn kmeans_init(&self, m: usize, seed: u64, max_iters: usize) -> Result<InducingInputs<T>> {
        let n = self.len();
        if m > n {
            return Err(DataError::MTooLarge { m, n });
        }
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let sq_dist = |x: &DMatrix<T>, i: usize, c: &DMatrix<T>, k: usize| -> T {
            let mut s = T::zero();
            for j in 0..d {
                let diff = x[(i, j)] - c[(k, j)];
                s += diff * diff;
            }
            s
        };

        // k-means++ seeding
        let mut centroids = DMatrix::<T>::zeros(m, d);
        let first = rng.gen_range(0..n);
        for j in 0..d {
            centroids[(0, j)] = self.x[(first, j)];
        }
        let mut dist = vec![T::zero(); n];
        for k in 1..m {
            let mut total = 0.0f64;
            for (i, d) in dist.iter_mut().enumerate() {
                let mut best = sq_dist(&self.x, i, &centroids, 0);
                for kk in 1..k {
                    best = best.min(sq_dist(&self.x, i, &centroids, kk));
                }
                *d = best;
                total += best.to_f64().unwrap_or(0.0);
            }
            let pick = if total > 0.0 {
                let mut target = rng.gen_range(0.0..total);
                let mut chosen = n - 1;
                for (i, d) in dist.iter().enumerate() {
                    target -= d.to_f64().unwrap_or(0.0);
                    if target <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.gen_range(0..n)
            };
            for j in 0..d {
                centroids[(k, j)] = self.x[(pick, j)];
            }
        }

        // Lloyd iterations; within-cluster cost is non-increasing
        let mut assign = vec![0usize; n];
        let mut prev_cost = f64::INFINITY;
        for _ in 0..max_iters.max(1) {
            let mut changed = false;
            let mut cost = 0.0f64;
            for (i, a) in assign.iter_mut().enumerate() {
                let mut best_k = 0;
                let mut best = sq_dist(&self.x, i, &centroids, 0);
                for k in 1..m {
                    let dd = sq_dist(&self.x, i, &centroids, k);
                    if dd < best {
                        best = dd;
                        best_k = k;
                    }
                }
                cost += best.to_f64().unwrap_or(0.0);
                if *a != best_k {
                    *a = best_k;
                    changed = true;
                }
            }
            debug_assert!(cost <= prev_cost + 1e-9 * (1.0 + prev_cost.abs()));
            prev_cost = cost;
            if !changed {
                break;
            }
            let mut counts = vec![0usize; m];
            let mut sums = DMatrix::<T>::zeros(m, d);
            for i in 0..n {
                counts[assign[i]] += 1;
                for j in 0..d {
                    sums[(assign[i], j)] += self.x[(i, j)];
                }
            }
            for k in 0..m {
                if counts[k] == 0 {
                    // reseed an empty cluster at a random point
                    let pick = rng.gen_range(0..n);
                    for j in 0..d {
                        centroids[(k, j)] = self.x[(pick, j)];
                    }
                } else {
                    let c = cst::<T>(counts[k] as f64);
                    for j in 0..d {
                        centroids[(k, j)] = sums[(k, j)] / c;
                    }
                }
            }
        }

        // perturb exact duplicates so the inducing-input invariant holds
        for a in 0..m {
            for b in (a + 1)..m {
                if (0..d).all(|j| centroids[(a, j)] == centroids[(b, j)]) {
                    for j in 0..d {
                        centroids[(b, j)] += cst::<T>(1e-6 * rng.gen_range(0.5..1.5));
                    }
                }
            }
        }
        Ok(InducingInputs::new(centroids).expect("duplicates were perturbed"))
    }
}

/// Loads a CSV with a header row; every non-label column must be numeric and
/// the label column must be 0/1. Row order is preserved.
pub fn load_csv<T: Real, P: AsRef<Path>>(path: P, label_column: &str) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut labels: Vec<T> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_names.len());
        for (c, field) in record.iter().enumerate() {
            let name = headers.get(c).unwrap_or("?");
            if c == label_idx {
                let v: f64 = field.trim().trim_matches('"').parse().map_err(|_| {
                    DataError::Parse {
                        row: r + 1,
                        column: name.to_string(),
                        message: format!("label {field:?} is not numeric"),
                    }
                })?;
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::Parse {
                        row: r + 1,
                        column: name.to_string(),
                        message: format!("label must be 0 or 1, got {field:?}"),
                    });
                }
                labels.push(cst(v));
            } else {
                let v: f64 = field.trim().parse().map_err(|_| DataError::Parse {
                    row: r + 1,
                    column: name.to_string(),
                    message: format!("feature {field:?} is not numeric"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Parse {
                        row: r + 1,
                        column: name.to_string(),
                        message: "non-finite value".to_string(),
                    });
                }
                row.push(cst(v));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let d = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let y = DVector::from_vec(labels);
    Ok(Dataset::new(x, y, feature_names))
}

/// Two Gaussian blobs in the plane, labelled by blob; the standard quick
/// end-to-end classification fixture.
pub fn two_blobs<T: Real>(n: usize, positive_fraction: f64, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    let gauss = move |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let x = DMatrix::from_fn(n, 2, |i, j| {
        let center = if i < n_pos { 2.0 } else { -2.0 };
        let offset = if j == 0 { center } else { -center };
        cst::<T>(offset + 0.8 * gauss(&mut rng))
    });
    let y = DVector::from_fn(n, |i, _| if i < n_pos { T::one() } else { T::zero() });
    Dataset::new(x, y, vec!["f0".into(), "f1".into()])
}

/// Synthetic dataset with the shape of the credit-card file: `d` numeric
/// features and a rare positive class whose feature distribution is shifted.
pub fn synthetic_fraud<T: Real>(n: usize, d: usize, prevalence: f64, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = ((n as f64 * prevalence).round() as usize).max(1);
    let gauss = move |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let x = DMatrix::from_fn(n, d, |i, j| {
        let shift = if i < n_pos && j < 6 { 2.5 } else { 0.0 };
        let spread = if j == d - 1 { 80.0 } else { 1.0 };
        cst::<T>(shift + spread * gauss(&mut rng))
    });
    let y = DVector::from_fn(n, |i, _| if i < n_pos { T::one() } else { T::zero() });
    let names = (0..d)
        .map(|j| {
            if j == d - 1 {
                "Amount".to_string()
            } else {
                format!("V{}", j + 1)
            }
        })
        .collect();
    Dataset::new(x, y, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write as _;

    fn toy() -> Dataset<f64> {
        let x = DMatrix::from_row_slice(10, 2, &{
            let mut v = Vec::new();
            for i in 0..10 {
                v.push(i as f64);
                v.push(-(i as f64));
            }
            v
        });
        let y = DVector::from_fn(10, |i, _| if i < 3 { 1.0 } else { 0.0 });
        Dataset::new(x, y, vec!["a".into(), "b".into()])
    }

    #[test]
    fn load_csv_toy_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,b,Class").unwrap();
        writeln!(f, "1.0,2.0,0").unwrap();
        writeln!(f, "3.0,4.0,1").unwrap();
        writeln!(f, "5.0,6.0,\"0\"").unwrap();
        drop(f);
        let d: Dataset<f64> = load_csv(&path, "Class").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.positives(), 1);
        assert_eq!(d.feature_names, vec!["a", "b"]);

        // bad label value names the row
        let path2 = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path2).unwrap();
        writeln!(f, "a,Class").unwrap();
        writeln!(f, "1.0,2").unwrap();
        drop(f);
        let err = load_csv::<f64, _>(&path2, "Class").unwrap_err();
        match err {
            DataError::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "Class");
            }
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(
            load_csv::<f64, _>(&path, "Nope"),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn standardize_hand_values() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        let mut d = Dataset::new(x, y, vec!["c".into()]);
        let constant = d.standardize(None).unwrap();
        assert!(constant.is_empty());
        // population stddev of (1,2,3) is sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        assert_relative_eq!(d.x[(0, 0)], -1.0 / s, max_relative = 1e-12);
        assert_relative_eq!(d.x[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.x[(2, 0)], 1.0 / s, max_relative = 1e-12);
        assert_relative_eq!(d.x[(0, 0)], -1.224744871391589, max_relative = 1e-10);

        // idempotence at (0, 1)
        let stats = d.standardization.clone().unwrap();
        let before = d.x.clone();
        let mut d2 = d.clone();
        let _ = d2.standardize(None).unwrap();
        assert_relative_eq!(d2.standardization.unwrap()[0].0, 0.0, epsilon = 1e-12);
        for (a, b) in d2.x.iter().zip(before.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let _ = stats;
    }

    #[test]
    fn standardize_constant_column_becomes_zero() {
        let x = DMatrix::from_column_slice(3, 1, &[5.0, 5.0, 5.0]);
        let y = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
        let mut d = Dataset::new(x, y, vec!["c".into()]);
        let constant = d.standardize(None).unwrap();
        assert_eq!(constant, vec![0]);
        assert!(d.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_round_trip_statistics() {
        let mut d = synthetic_fraud::<f64>(500, 5, 0.1, 7);
        d.standardize(None).unwrap();
        let n = d.len() as f64;
        for j in 0..5 {
            let mean = d.x.column(j).sum() / n;
            let var = d.x.column(j).iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
            assert!(mean.abs() <= 1e-10);
            assert!((var.sqrt() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn split_stratified_counts() {
        let d = synthetic_fraud::<f64>(1000, 3, 0.1, 8);
        let (train, test) = d
            .split(SplitSpec {
                train_fraction: 0.8,
                test_fraud_ratio: None,
                seed: 1,
            })
            .unwrap();
        assert_eq!(train.len() + test.len(), 1000);
        assert_eq!(test.positives(), 20);
        assert_eq!(test.len(), 200);
    }

    #[test]
    fn split_rebalanced_test_composition() {
        let d = synthetic_fraud::<f64>(2000, 3, 0.075, 9);
        // 150 positives; hold out 20% -> 30 positives; ratio 0.15 -> 200 rows
        let (_, test) = d
            .split(SplitSpec {
                train_fraction: 0.8,
                test_fraud_ratio: Some(0.15),
                seed: 2,
            })
            .unwrap();
        assert_eq!(test.positives(), 30);
        assert_eq!(test.len(), 200);
    }

    #[test]
    fn split_without_positives_errors() {
        let mut d = synthetic_fraud::<f64>(100, 3, 0.02, 10);
        // delete all positives
        let neg: Vec<usize> = (0..d.len()).filter(|&i| d.y[i] < 0.5).collect();
        d = d.subset(&neg);
        assert!(matches!(
            d.split(SplitSpec {
                train_fraction: 0.8,
                test_fraud_ratio: Some(0.15),
                seed: 0,
            }),
            Err(DataError::InsufficientPositives { .. })
        ));
    }

    #[test]
    fn split_partitions_indices() {
        let d = synthetic_fraud::<f64>(300, 3, 0.1, 11);
        let (train, test) = d
            .split(SplitSpec {
                train_fraction: 0.7,
                test_fraud_ratio: None,
                seed: 3,
            })
            .unwrap();
        assert_eq!(train.len() + test.len(), d.len());
        // every row of train/test appears in the original (features match)
        let rows: std::collections::HashSet<Vec<u64>> = (0..d.len())
            .map(|i| (0..d.dim()).map(|j| d.x[(i, j)].to_bits()).collect())
            .collect();
        for part in [&train, &test] {
            for i in 0..part.len() {
                let row: Vec<u64> = (0..part.dim()).map(|j| part.x[(i, j)].to_bits()).collect();
                assert!(rows.contains(&row));
            }
        }
    }

    #[test]
    fn inverse_dataset_swaps_composition() {
        let d = toy(); // 3 positive, 7 negative
        let inv = d.inverse_dataset(5).unwrap();
        assert_eq!(inv.len(), 10);
        assert_eq!(inv.positives(), 7);

        // 50/50 is a fixed point
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_fn(10, |i, _| if i < 5 { 1.0 } else { 0.0 });
        let d = Dataset::new(x, y, vec!["a".into()]);
        let inv = d.inverse_dataset(6).unwrap();
        assert_eq!(inv.positives(), 5);

        // rows of the inverse all come from the original
        let d = toy();
        let inv = d.inverse_dataset(7).unwrap();
        let rows: std::collections::HashSet<Vec<u64>> = (0..d.len())
            .map(|i| (0..d.dim()).map(|j| d.x[(i, j)].to_bits()).collect())
            .collect();
        for i in 0..inv.len() {
            let row: Vec<u64> = (0..inv.dim()).map(|j| inv.x[(i, j)].to_bits()).collect();
            assert!(rows.contains(&row));
        }
    }

    #[test]
    fn inverse_dataset_extreme_prevalence() {
        let d = synthetic_fraud::<f64>(10_000, 3, 0.00172, 12);
        let pos = d.positives();
        let inv = d.inverse_dataset(13).unwrap();
        assert_eq!(inv.len(), d.len());
        assert_eq!(inv.positives(), d.len() - pos);
        assert!((inv.prevalence() - (1.0 - d.prevalence())).abs() <= 1.0 / d.len() as f64);
    }

    #[test]
    fn inverse_dataset_single_class_errors() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64);
        let y = DVector::zeros(5);
        let d = Dataset::new(x, y, vec!["a".into()]);
        assert!(matches!(d.inverse_dataset(0), Err(DataError::SingleClass)));
    }

    #[test]
    fn kmeans_two_blobs_finds_centers() {
        let d = two_blobs::<f64>(400, 0.5, 14);
        let z = d.kmeans_init(2, 1, 100).unwrap();
        let zm = z.as_matrix();
        // true centers are (2,-2) and (-2,2) up to ordering
        let mut found = [false, false];
        for i in 0..2 {
            if (zm[(i, 0)] - 2.0).abs() < 0.2 && (zm[(i, 1)] + 2.0).abs() < 0.2 {
                found[0] = true;
            }
            if (zm[(i, 0)] + 2.0).abs() < 0.2 && (zm[(i, 1)] - 2.0).abs() < 0.2 {
                found[1] = true;
            }
        }
        assert!(found[0] && found[1], "centroids: {zm}");
    }

    #[test]
    fn kmeans_saturation_and_determinism() {
        let d = two_blobs::<f64>(20, 0.5, 15);
        let z = d.kmeans_init(20, 2, 100).unwrap();
        assert_eq!(z.m(), 20);

        let a = d.kmeans_init(5, 3, 100).unwrap();
        let b = d.kmeans_init(5, 3, 100).unwrap();
        assert_eq!(a.as_matrix(), b.as_matrix());
        // no duplicate rows (InducingInputs construction already enforces it)
        assert!(InducingInputs::new(a.as_matrix().clone()).is_ok());
    }

    #[test]
    fn kmeans_m_too_large() {
        let d = two_blobs::<f64>(10, 0.5, 16);
        assert!(matches!(
            d.kmeans_init(11, 0, 10),
            Err(DataError::MTooLarge { .. })
        ));
    }
}
