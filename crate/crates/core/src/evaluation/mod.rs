//! Confusion matrix, per-class metrics, reports and learning curves.
//!
//! The positive class is COVID-19. Ratios whose denominator is zero are
//! absent (`None`) rather than 0 or 1.

mod curves;
mod report;

pub use curves::{plot_curves, CurveFiles};
pub use report::{format_percent, read_report, write_report, ReportFormat};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BinaryLabel;
use crate::model::{predict, Model, ModelError};
use crate::trainer::{Sample, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("report {path}: {reason}")]
    Report { path: PathBuf, reason: String },
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    History(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, truth: BinaryLabel, predicted: BinaryLabel) {
        match (truth, predicted) {
            (BinaryLabel::Positive, BinaryLabel::Positive) => self.tp += 1,
            (BinaryLabel::Negative, BinaryLabel::Positive) => self.fp += 1,
            (BinaryLabel::Positive, BinaryLabel::Negative) => self.fn_ += 1,
            (BinaryLabel::Negative, BinaryLabel::Negative) => self.tn += 1,
        }
    }

    /// The same predictions with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    /// `tp / (tp + fn)`
    pub sensitivity_pos: Option<f64>,
    /// `tn / (tn + fp)`, i.e. specificity.
    pub sensitivity_neg: Option<f64>,
    /// `tp / (tp + fp)`
    pub precision_pos: Option<f64>,
    /// `tn / (tn + fn)`
    pub precision_neg: Option<f64>,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "sensitivity_pos", "sensitivity_neg", "precision_pos", "precision_neg"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.sensitivity_pos, self.sensitivity_neg, self.precision_pos, self.precision_neg]
    }

    pub fn from_values(v: [Option<f64>; 5]) -> Self {
        Metrics {
            accuracy: v[0],
            sensitivity_pos: v[1],
            sensitivity_neg: v[2],
            precision_pos: v[3],
            precision_neg: v[4],
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics_from_matrix(m: &ConfusionMatrix) -> Metrics {
    Metrics {
        accuracy: ratio(m.tp + m.tn, m.total()),
        sensitivity_pos: ratio(m.tp, m.tp + m.fn_),
        sensitivity_neg: ratio(m.tn, m.tn + m.fp),
        precision_pos: ratio(m.tp, m.tp + m.fp),
        precision_neg: ratio(m.tn, m.tn + m.fn_),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub id: String,
    pub true_label: BinaryLabel,
    pub probability: f64,
    pub predicted_label: BinaryLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub matrix: ConfusionMatrix,
    pub metrics: Metrics,
    pub per_video: Vec<VideoPrediction>,
}

impl EvalReport {
    /// Build the matrix and metrics from per-video predictions as given.
    pub fn from_predictions(per_video: Vec<VideoPrediction>, threshold: f64) -> Self {
        let mut matrix = ConfusionMatrix::default();
        for v in &per_video {
            matrix.record(v.true_label, v.predicted_label);
        }
        EvalReport {
            threshold,
            matrix,
            metrics: metrics_from_matrix(&matrix),
            per_video,
        }
    }

    /// Re-derive labels from probabilities and check the stored matrix and
    /// metrics agree exactly.
    pub fn is_consistent(&self) -> bool {
        let relabelled: Vec<VideoPrediction> = self
            .per_video
            .iter()
            .map(|v| VideoPrediction { predicted_label: predict(v.probability, self.threshold), ..v.clone() })
            .collect();
        let again = EvalReport::from_predictions(relabelled, self.threshold);
        again.per_video == self.per_video && again.matrix == self.matrix && again.metrics == self.metrics
    }
}

pub fn evaluate(model: &Model, samples: &[Sample], threshold: f64) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let per_video = samples
        .par_iter()
        .map(|s| {
            let p = model.forward(&s.sequence).map_err(|source| EvalError::Sample { id: s.id.clone(), source })?;
            Ok(VideoPrediction {
                id: s.id.clone(),
                true_label: s.label,
                probability: p,
                predicted_label: predict(p, threshold),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport::from_predictions(per_video, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tp: usize, fp: usize, fn_: usize, tn: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn reported_matrix() {
        let m = metrics_from_matrix(&cm(10, 1, 0, 7));
        assert_eq!(m.accuracy, Some(17.0 / 18.0));
        assert_eq!(m.sensitivity_pos, Some(1.0));
        assert_eq!(m.sensitivity_neg, Some(0.875));
        assert_eq!(m.precision_pos, Some(10.0 / 11.0));
        assert_eq!(m.precision_neg, Some(1.0));
        let shown: Vec<String> = m.values().iter().map(|v| format_percent(v.unwrap())).collect();
        assert_eq!(shown, ["94.44", "100.0", "87.50", "90.91", "100.0"]);
    }

    #[test]
    fn perfect_predictions() {
        let m = metrics_from_matrix(&cm(4, 0, 0, 9));
        assert!(m.values().iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn all_positive_predictor() {
        let m = metrics_from_matrix(&cm(10, 8, 0, 0));
        assert_eq!(m.accuracy, Some(10.0 / 18.0));
        assert_eq!(m.sensitivity_pos, Some(1.0));
        assert_eq!(m.sensitivity_neg, Some(0.0));
        assert_eq!(m.precision_pos, Some(10.0 / 18.0));
        assert_eq!(m.precision_neg, None);
    }

    #[test]
    fn empty_matrix_is_all_absent() {
        assert!(metrics_from_matrix(&cm(0, 0, 0, 0)).values().iter().all(Option::is_none));
    }

    fn pred(id: usize, truth: bool, p: f64, thr: f64) -> VideoPrediction {
        let true_label = if truth { BinaryLabel::Positive } else { BinaryLabel::Negative };
        VideoPrediction { id: format!("v{id}"), true_label, probability: p, predicted_label: predict(p, thr) }
    }

    proptest! {
        #[test]
        fn label_swap_duality(tp in 0usize..30, fp in 0usize..30, fn_ in 0usize..30, tn in 0usize..30) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let a = metrics_from_matrix(&cm(tp, fp, fn_, tn));
            let b = metrics_from_matrix(&cm(tp, fp, fn_, tn).swapped());
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert_eq!(a.sensitivity_pos, b.sensitivity_neg);
            prop_assert_eq!(a.sensitivity_neg, b.sensitivity_pos);
            prop_assert_eq!(a.precision_pos, b.precision_neg);
            prop_assert_eq!(a.precision_neg, b.precision_pos);
        }

        #[test]
        fn threshold_monotone(cases in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..40), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let at = |thr: f64| {
                let preds = cases.iter().enumerate().map(|(i, &(y, p))| pred(i, y, p, thr)).collect();
                let r = EvalReport::from_predictions(preds, thr);
                r.matrix.tp + r.matrix.fp
            };
            prop_assert!(at(hi) <= at(lo));
        }

        #[test]
        fn matrix_matches_predictions(cases in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..40), thr in 0.0f64..=1.0) {
            let preds: Vec<_> = cases.iter().enumerate().map(|(i, &(y, p))| pred(i, y, p, thr)).collect();
            let r = EvalReport::from_predictions(preds, thr);
            prop_assert_eq!(r.matrix.total(), cases.len());
            prop_assert!(r.is_consistent());
        }
    }
}
