//! Learning curves: accuracy, loss and learning rate against epoch, each as a PNG
//! plus a CSV of exactly the plotted numbers.

use std::path::{Path, PathBuf};
use std::sync::Once;

use plotters::prelude::*;
use plotters::style::FontStyle;

use super::EvalError;
use crate::trainer::{read_history, EpochRow};

const FONT: &[u8] = include_bytes!("../../assets/DejaVuSans.ttf");

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFiles {
    pub accuracy_png: PathBuf,
    pub loss_png: PathBuf,
    pub lr_png: PathBuf,
    pub accuracy_csv: PathBuf,
    pub loss_csv: PathBuf,
    pub lr_csv: PathBuf,
}

fn register_font() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        plotters::style::register_font("sans-serif", FontStyle::Normal, FONT)
            .unwrap_or_else(|_| panic!("bundled font does not parse"));
    });
}

struct Series<'a> {
    name: &'a str,
    color: RGBColor,
    values: Vec<f64>,
    step: bool,
}

fn y_range(series: &[Series<'_>]) -> (f64, f64) {
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = if hi > lo { (hi - lo) * 0.08 } else { lo.abs().max(1e-3) * 0.1 };
    (lo - pad, hi + pad)
}

fn points(epochs: &[f64], values: &[f64], step: bool) -> Vec<(f64, f64)> {
    if !step {
        return epochs.iter().copied().zip(values.iter().copied()).collect();
    }
    // the rate is constant over an epoch, so draw it as a staircase
    let mut out = Vec::with_capacity(values.len() * 2);
    for (i, (&e, &v)) in epochs.iter().zip(values).enumerate() {
        if i > 0 {
            out.push((e - 0.5, values[i - 1]));
        }
        out.push((e - 0.5, v));
        out.push((e + 0.5, v));
    }
    out
}

fn draw(path: &Path, title: &str, y_label: &str, epochs: &[f64], series: &[Series<'_>]) -> Result<(), EvalError> {
    let plot_err = |e: String| EvalError::Plot(format!("{}: {e}", path.display()));
    let root = BitMapBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let last = epochs.last().copied().unwrap_or(1.0);
    let (y_lo, y_hi) = y_range(series);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 28))
        .margin(16)
        .x_label_area_size(48)
        .y_label_area_size(80)
        .build_cartesian_2d(0.5..last + 0.5, y_lo..y_hi)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_label)
        .x_labels((last as usize).min(20))
        .x_label_formatter(&|x| format!("{x:.0}"))
        .label_style(("sans-serif", 16))
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    for s in series {
        let color = s.color;
        chart
            .draw_series(LineSeries::new(points(epochs, &s.values, s.step), color.stroke_width(2)))
            .map_err(|e| plot_err(e.to_string()))?
            .label(s.name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(epochs.iter().zip(&s.values).map(|(&e, &v)| Circle::new((e, v), 4, color.filled())))
            .map_err(|e| plot_err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .label_font(("sans-serif", 16))
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))
}

fn write_audit(path: &Path, headers: &[&str], history: &[EpochRow], cols: &[fn(&EpochRow) -> f64]) -> Result<(), EvalError> {
    let err = |e: csv::Error| EvalError::Report { path: path.to_path_buf(), reason: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(headers).map_err(err)?;
    for row in history {
        let mut rec = vec![row.epoch.to_string()];
        rec.extend(cols.iter().map(|f| f(row).to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| EvalError::Report { path: path.to_path_buf(), reason: e.to_string() })
}

/// Read a history file and render the three curves into `out_dir`.
pub fn plot_curves(history_file: &Path, out_dir: &Path) -> Result<CurveFiles, EvalError> {
    let history = read_history(history_file)?;
    if history.is_empty() {
        return Err(EvalError::Plot(format!("{} has no epochs", history_file.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| EvalError::Plot(format!("{}: {e}", out_dir.display())))?;
    register_font();

    let files = CurveFiles {
        accuracy_png: out_dir.join("accuracy.png"),
        loss_png: out_dir.join("loss.png"),
        lr_png: out_dir.join("learning_rate.png"),
        accuracy_csv: out_dir.join("accuracy.csv"),
        loss_csv: out_dir.join("loss.csv"),
        lr_csv: out_dir.join("learning_rate.csv"),
    };
    let epochs: Vec<f64> = history.iter().map(|r| r.epoch as f64).collect();
    let col = |f: fn(&EpochRow) -> f64| history.iter().map(f).collect::<Vec<f64>>();
    let pair = |train: fn(&EpochRow) -> f64, val: fn(&EpochRow) -> f64| {
        vec![
            Series { name: "train", color: RGBColor(31, 119, 180), values: col(train), step: false },
            Series { name: "validation", color: RGBColor(255, 127, 14), values: col(val), step: false },
        ]
    };

    draw(&files.accuracy_png, "Accuracy", "accuracy", &epochs, &pair(|r| r.train_accuracy, |r| r.val_accuracy))?;
    draw(&files.loss_png, "Loss", "loss", &epochs, &pair(|r| r.train_loss, |r| r.val_loss))?;
    let lr = [Series { name: "learning rate", color: RGBColor(44, 160, 44), values: col(|r| r.lr), step: true }];
    draw(&files.lr_png, "Learning rate", "learning rate", &epochs, &lr)?;

    write_audit(&files.accuracy_csv, &["epoch", "train_acc", "val_acc"], &history, &[|r| r.train_accuracy, |r| r.val_accuracy])?;
    write_audit(&files.loss_csv, &["epoch", "train_loss", "val_loss"], &history, &[|r| r.train_loss, |r| r.val_loss])?;
    write_audit(&files.lr_csv, &["epoch", "lr"], &history, &[|r| r.lr])?;
    Ok(files)
}
