use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// One completed epoch. `lr` is the rate the epoch was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "train_acc")]
    pub train_accuracy: f64,
    pub val_loss: f64,
    #[serde(rename = "val_acc")]
    pub val_accuracy: f64,
    pub lr: f64,
}

pub const HISTORY_COLUMNS: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"];

/// Write the history as CSV. Floats use shortest round-trip formatting.
pub fn write_history(history: &[EpochRow], path: &Path) -> Result<(), TrainError> {
    let csv_err = |e: csv::Error| TrainError::History { path: path.to_path_buf(), reason: e.to_string() };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(HISTORY_COLUMNS).map_err(csv_err)?;
    for row in history {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| TrainError::History { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRow>, TrainError> {
    let bad = |reason: String| TrainError::History { path: path.to_path_buf(), reason };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(HISTORY_COLUMNS) {
        return Err(bad(format!("expected columns {}, found {}", HISTORY_COLUMNS.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    let rows = r
        .deserialize()
        .collect::<Result<Vec<EpochRow>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    for (i, row) in rows.iter().enumerate() {
        if row.epoch != i + 1 {
            return Err(bad(format!("row {} has epoch {}", i + 1, row.epoch)));
        }
    }
    Ok(rows)
}
