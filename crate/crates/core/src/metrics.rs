//! Test-set evaluation: accuracy, mean log predictive likelihood, confusion
//! counts and precision/recall, with text and TSV serialization.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::real::{cst, Real};

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error("probs has length {probs} but labels has length {labels}")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("cannot evaluate an empty test set")]
    Empty,
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
}

const PROB_CLAMP: f64 = 1e-15;

/// Scorecard for one evaluation run. `metadata` carries free-form context
/// such as kernel, M, seed and the test-set composition.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T: Real> {
    pub n_test: usize,
    pub accuracy: T,
    pub mean_log_likelihood: T,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: T,
    pub recall: T,
    pub metadata: BTreeMap<String, String>,
}

/// Thresholds `probs` at `threshold` (prediction = 1 iff p ≥ threshold) and
/// scores against the 0/1 `labels`. The log likelihood is the mean of
/// y·log p + (1−y)·log(1−p) with p clamped to [1e-15, 1−1e-15]; precision
/// and recall fall back to 0 (recorded in metadata) when undefined.
pub fn evaluate<T: Real>(
    probs: &DVector<T>,
    labels: &DVector<T>,
    threshold: T,
) -> Result<EvalReport<T>, MetricsError> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    let mut ll = T::zero();
    let lo = cst::<T>(PROB_CLAMP);
    let hi = T::one() - lo;
    for i in 0..probs.len() {
        let p = probs[i];
        let pf = p.to_f64().unwrap_or(f64::NAN);
        if !(0.0..=1.0).contains(&pf) {
            return Err(MetricsError::BadProbability(pf));
        }
        let y = labels[i] > cst(0.5);
        let pred = p >= threshold;
        match (pred, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
        // clamp the relevant probability itself: computing 1 - p after
        // clamping p loses the small complement to cancellation
        ll += if y {
            p.max(lo).min(hi).ln()
        } else {
            (T::one() - p).max(lo).min(hi).ln()
        };
    }
    let n = probs.len();
    let mut metadata = BTreeMap::new();
    let precision = if tp + fp == 0 {
        metadata.insert("precision_undefined".to_string(), "true".to_string());
        T::zero()
    } else {
        cst::<T>(tp as f64 / (tp + fp) as f64)
    };
    let recall = if tp + fn_ == 0 {
        metadata.insert("recall_undefined".to_string(), "true".to_string());
        T::zero()
    } else {
        cst::<T>(tp as f64 / (tp + fn_) as f64)
    };
    Ok(EvalReport {
        n_test: n,
        accuracy: cst::<T>((tp + tn) as f64 / n as f64),
        mean_log_likelihood: ll / cst(n as f64),
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        metadata,
    })
}

impl<T: Real> EvalReport<T> {
    /// Key/value record, one field per line, metadata entries last.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_test\t{}", self.n_test);
        let _ = writeln!(s, "accuracy\t{:.17e}", self.accuracy);
        let _ = writeln!(s, "mean_log_likelihood\t{:.17e}", self.mean_log_likelihood);
        let _ = writeln!(s, "tp\t{}", self.tp);
        let _ = writeln!(s, "fp\t{}", self.fp);
        let _ = writeln!(s, "tn\t{}", self.tn);
        let _ = writeln!(s, "fn\t{}", self.fn_);
        let _ = writeln!(s, "precision\t{:.17e}", self.precision);
        let _ = writeln!(s, "recall\t{:.17e}", self.recall);
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "meta.{k}\t{v}");
        }
        s
    }

    /// One row of a sweep table: kernel, M, test_likelihood, test_accuracy.
    pub fn to_sweep_row(&self, kernel: &str, m: usize) -> String {
        format!(
            "{kernel}\t{m}\t{:.6}\t{:.6}",
            self.mean_log_likelihood, self.accuracy
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vecs(p: &[f64], y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_row_slice(p), DVector::from_row_slice(y))
    }

    #[test]
    fn perfect_confident_predictions() {
        let (p, y) = vecs(&[1.0 - 1e-15, 1e-15, 1e-15], &[1.0, 0.0, 0.0]);
        let r = evaluate(&p, &y, 0.5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.mean_log_likelihood <= 0.0);
        assert!(r.mean_log_likelihood > -1e-12);
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (1, 0, 2, 0));
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn constant_half_predictor() {
        let (p, y) = vecs(&[0.5; 4], &[1.0, 0.0, 0.0, 0.0]);
        let r = evaluate(&p, &y, 0.5).unwrap();
        // p ≥ threshold predicts everything positive
        assert_relative_eq!(r.accuracy, 0.25, epsilon = 1e-15);
        assert_relative_eq!(r.mean_log_likelihood, 0.5f64.ln(), epsilon = 1e-12);
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (1, 3, 0, 0));
    }

    #[test]
    fn confusion_counts_sum_and_accuracy_identity() {
        let (p, y) = vecs(
            &[0.9, 0.2, 0.7, 0.4, 0.6, 0.1],
            &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        );
        let r = evaluate(&p, &y, 0.5).unwrap();
        assert_eq!(r.tp + r.fp + r.tn + r.fn_, r.n_test);
        assert_relative_eq!(
            r.accuracy,
            (r.tp + r.tn) as f64 / r.n_test as f64,
            epsilon = 1e-15
        );
        let error_rate = (r.fp + r.fn_) as f64 / r.n_test as f64;
        assert_relative_eq!(r.accuracy + error_rate, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn undefined_precision_and_recall_flagged() {
        // nothing predicted positive and no true positives present
        let (p, y) = vecs(&[0.1, 0.2], &[0.0, 0.0]);
        let r = evaluate(&p, &y, 0.5).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.metadata.get("precision_undefined").unwrap(), "true");
        assert_eq!(r.metadata.get("recall_undefined").unwrap(), "true");
    }

    #[test]
    fn clamping_keeps_log_likelihood_finite() {
        let (p, y) = vecs(&[0.0, 1.0], &[1.0, 0.0]);
        let r = evaluate(&p, &y, 0.5).unwrap();
        assert!(r.mean_log_likelihood.is_finite());
        assert_relative_eq!(r.mean_log_likelihood, 1e-15f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn permutation_invariance() {
        let (p, y) = vecs(&[0.9, 0.2, 0.7, 0.4], &[1.0, 0.0, 0.0, 1.0]);
        let r1 = evaluate(&p, &y, 0.5).unwrap();
        let (p2, y2) = vecs(&[0.4, 0.7, 0.2, 0.9], &[1.0, 0.0, 0.0, 1.0]);
        let r2 = evaluate(&p2, &y2, 0.5).unwrap();
        assert_eq!(r1.accuracy, r2.accuracy);
        assert_relative_eq!(r1.mean_log_likelihood, r2.mean_log_likelihood, epsilon = 1e-15);
        assert_eq!((r1.tp, r1.fp, r1.tn, r1.fn_), (r2.tp, r2.fp, r2.tn, r2.fn_));
    }

    #[test]
    fn degenerate_threshold_zero_predicts_all_positive() {
        let (p, y) = vecs(&[0.1, 0.9, 0.3], &[1.0, 1.0, 0.0]);
        let r = evaluate(&p, &y, 0.0).unwrap();
        assert_relative_eq!(r.accuracy, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn input_validation() {
        let p = DVector::from_row_slice(&[0.5, 0.5]);
        let y = DVector::from_row_slice(&[1.0]);
        assert!(matches!(
            evaluate(&p, &y, 0.5),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let empty = DVector::<f64>::zeros(0);
        assert!(matches!(
            evaluate(&empty, &empty, 0.5),
            Err(MetricsError::Empty)
        ));
        let (p, y) = vecs(&[1.5], &[1.0]);
        assert!(matches!(
            evaluate(&p, &y, 0.5),
            Err(MetricsError::BadProbability(_))
        ));
    }

    #[test]
    fn serialization_round_trip_shape() {
        let (p, y) = vecs(&[0.9, 0.2], &[1.0, 0.0]);
        let r = evaluate(&p, &y, 0.5).unwrap();
        let text = r.to_text();
        assert!(text.contains("accuracy\t"));
        assert!(text.lines().count() >= 9);
        let row = r.to_sweep_row("rbf", 50);
        assert_eq!(row.split('\t').count(), 4);
        assert!(row.starts_with("rbf\t50\t"));
    }
}
