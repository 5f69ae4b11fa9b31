//! Report files. Raw values are stored at full precision next to a display
//! string with 4 significant digits; absent metrics are `null`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, EvalError, EvalReport, Metrics, VideoPrediction};
use crate::dataset::BinaryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

/// A fraction as a percentage with 4 significant digits (`17/18` -> `94.44`).
pub fn format_percent(fraction: f64) -> String {
    format_sig4(fraction * 100.0)
}

fn format_sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0.000".into() } else { v.to_string() };
    }
    let decimals = |x: f64| (3 - x.abs().log10().floor() as i32).max(0) as usize;
    let d = decimals(v);
    let s = format!("{v:.d$}");
    // rounding can carry into a new leading digit, e.g. 99.996 -> 100.00
    let d2 = decimals(s.parse::<f64>().unwrap_or(v));
    if d2 < d {
        format!("{v:.d2$}")
    } else {
        s
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricWire {
    value: Option<f64>,
    percent: Option<String>,
}

impl From<Option<f64>> for MetricWire {
    fn from(value: Option<f64>) -> Self {
        MetricWire { value, percent: value.map(format_percent) }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsWire {
    accuracy: MetricWire,
    sensitivity_pos: MetricWire,
    sensitivity_neg: MetricWire,
    precision_pos: MetricWire,
    precision_neg: MetricWire,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportWire {
    threshold: f64,
    total: usize,
    matrix: ConfusionMatrix,
    metrics: MetricsWire,
    per_video: Vec<VideoPrediction>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    kind: String,
    key: String,
    value: Option<String>,
    display: String,
    true_label: Option<BinaryLabel>,
    predicted_label: Option<BinaryLabel>,
}

pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let err = |reason: String| EvalError::Report { path: path.to_path_buf(), reason };
    match format {
        ReportFormat::Json => {
            let m = &report.metrics;
            let wire = ReportWire {
                threshold: report.threshold,
                total: report.matrix.total(),
                matrix: report.matrix,
                metrics: MetricsWire {
                    accuracy: m.accuracy.into(),
                    sensitivity_pos: m.sensitivity_pos.into(),
                    sensitivity_neg: m.sensitivity_neg.into(),
                    precision_pos: m.precision_pos.into(),
                    precision_neg: m.precision_neg.into(),
                },
                per_video: report.per_video.clone(),
            };
            let mut text = serde_json::to_string_pretty(&wire).map_err(|e| err(e.to_string()))?;
            text.push('\n');
            std::fs::write(path, text).map_err(|e| err(e.to_string()))
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
            let mut rows = vec![CsvRow {
                kind: "threshold".into(),
                key: "threshold".into(),
                value: Some(report.threshold.to_string()),
                display: report.threshold.to_string(),
                true_label: None,
                predicted_label: None,
            }];
            let mx = &report.matrix;
            for (k, v) in [("tp", mx.tp), ("fp", mx.fp), ("fn", mx.fn_), ("tn", mx.tn)] {
                rows.push(CsvRow {
                    kind: "matrix".into(),
                    key: k.into(),
                    value: Some(v.to_string()),
                    display: v.to_string(),
                    true_label: None,
                    predicted_label: None,
                });
            }
            for (k, v) in Metrics::NAMES.iter().zip(report.metrics.values()) {
                rows.push(CsvRow {
                    kind: "metric".into(),
                    key: k.to_string(),
                    value: v.map(|x| x.to_string()),
                    display: v.map(format_percent).unwrap_or_else(|| "null".into()),
                    true_label: None,
                    predicted_label: None,
                });
            }
            for p in &report.per_video {
                rows.push(CsvRow {
                    kind: "video".into(),
                    key: p.id.clone(),
                    value: Some(p.probability.to_string()),
                    display: format!("{:.4}", p.probability),
                    true_label: Some(p.true_label),
                    predicted_label: Some(p.predicted_label),
                });
            }
            for r in rows {
                w.serialize(r).map_err(|e| err(e.to_string()))?;
            }
            w.flush().map_err(|e| err(e.to_string()))
        }
    }
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<EvalReport, EvalError> {
    let err = |reason: String| EvalError::Report { path: path.to_path_buf(), reason };
    match format {
        ReportFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            let w: ReportWire = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
            let m = w.metrics;
            Ok(EvalReport {
                threshold: w.threshold,
                matrix: w.matrix,
                metrics: Metrics::from_values([
                    m.accuracy.value,
                    m.sensitivity_pos.value,
                    m.sensitivity_neg.value,
                    m.precision_pos.value,
                    m.precision_neg.value,
                ]),
                per_video: w.per_video,
            })
        }
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
            let mut threshold = None;
            let mut matrix = ConfusionMatrix::default();
            let mut metrics = [None; 5];
            let mut per_video = Vec::new();
            for row in r.deserialize::<CsvRow>() {
                let row = row.map_err(|e| err(e.to_string()))?;
                let num = |v: &Option<String>| -> Result<Option<f64>, EvalError> {
                    v.as_deref()
                        .map(|s| s.parse::<f64>().map_err(|e| err(format!("{}: {e}", row.key))))
                        .transpose()
                };
                let count = || -> Result<usize, EvalError> {
                    row.value
                        .as_deref()
                        .ok_or_else(|| err(format!("{} has no value", row.key)))?
                        .parse()
                        .map_err(|e| err(format!("{}: {e}", row.key)))
                };
                match row.kind.as_str() {
                    "threshold" => threshold = num(&row.value)?,
                    "matrix" => match row.key.as_str() {
                        "tp" => matrix.tp = count()?,
                        "fp" => matrix.fp = count()?,
                        "fn" => matrix.fn_ = count()?,
                        "tn" => matrix.tn = count()?,
                        k => return Err(err(format!("unknown matrix cell `{k}`"))),
                    },
                    "metric" => {
                        let i = Metrics::NAMES
                            .iter()
                            .position(|n| *n == row.key)
                            .ok_or_else(|| err(format!("unknown metric `{}`", row.key)))?;
                        metrics[i] = num(&row.value)?;
                    }
                    "video" => per_video.push(VideoPrediction {
                        id: row.key.clone(),
                        probability: num(&row.value)?.ok_or_else(|| err(format!("{} has no probability", row.key)))?,
                        true_label: row.true_label.ok_or_else(|| err(format!("{} has no true label", row.key)))?,
                        predicted_label: row.predicted_label.ok_or_else(|| err(format!("{} has no prediction", row.key)))?,
                    }),
                    k => return Err(err(format!("unknown row kind `{k}`"))),
                }
            }
            Ok(EvalReport {
                threshold: threshold.ok_or_else(|| err("missing threshold row".into()))?,
                matrix,
                metrics: Metrics::from_values(metrics),
                per_video,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::predict;

    #[test]
    fn four_significant_digits() {
        assert_eq!(format_percent(17.0 / 18.0), "94.44");
        assert_eq!(format_percent(0.875), "87.50");
        assert_eq!(format_percent(10.0 / 11.0), "90.91");
        assert_eq!(format_percent(1.0), "100.0");
        assert_eq!(format_percent(1.0 / 18.0), "5.556");
        assert_eq!(format_percent(0.99996), "100.0");
        assert_eq!(format_percent(0.0), "0.000");
    }

    fn sample_report() -> EvalReport {
        let probs = [0.93, 0.2, 0.61, 0.05, 0.5, 1.0 / 3.0];
        let per_video = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| VideoPrediction {
                id: format!("vid,{i}"),
                true_label: if i % 2 == 0 { BinaryLabel::Positive } else { BinaryLabel::Negative },
                probability: p,
                predicted_label: predict(p, 0.5),
            })
            .collect();
        EvalReport::from_predictions(per_video, 0.5)
    }

    #[test]
    fn round_trips_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        for (name, fmt) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
            let p = dir.path().join(name);
            assert_eq!(ReportFormat::from_path(&p), Some(fmt));
            write_report(&r, &p, fmt).unwrap();
            assert_eq!(read_report(&p, fmt).unwrap(), r);
        }
    }

    #[test]
    fn absent_metric_is_null() {
        let dir = tempfile::tempdir().unwrap();
        let per_video = (0..3)
            .map(|i| VideoPrediction {
                id: i.to_string(),
                true_label: BinaryLabel::Positive,
                probability: 0.9,
                predicted_label: BinaryLabel::Positive,
            })
            .collect();
        let r = EvalReport::from_predictions(per_video, 0.5);
        assert_eq!(r.metrics.sensitivity_neg, None);

        let pj = dir.path().join("r.json");
        write_report(&r, &pj, ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&pj).unwrap()).unwrap();
        assert!(v["metrics"]["sensitivity_neg"]["value"].is_null());
        assert_eq!(v["metrics"]["accuracy"]["percent"], "100.0");
        assert_eq!(read_report(&pj, ReportFormat::Json).unwrap(), r);

        let pc = dir.path().join("r.csv");
        write_report(&r, &pc, ReportFormat::Csv).unwrap();
        assert!(std::fs::read_to_string(&pc).unwrap().contains("metric,sensitivity_neg,,null,,"));
        assert_eq!(read_report(&pc, ReportFormat::Csv).unwrap(), r);
    }

    #[test]
    fn unwritable_path() {
        let r = sample_report();
        assert!(write_report(&r, Path::new("/nonexistent/dir/r.json"), ReportFormat::Json).is_err());
    }
}
