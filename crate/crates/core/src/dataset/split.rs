use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BinaryLabel, DatasetError, Result, Split, VideoRecord};

/// Per-split, per-label record counts plus the sampling seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_pos: usize,
    pub train_neg: usize,
    pub val_pos: usize,
    pub val_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_pos: 38,
            train_neg: 38,
            val_pos: 12,
            val_neg: 13,
            test_pos: 10,
            test_neg: 8,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn quota(&self, split: Split, label: BinaryLabel) -> usize {
        use BinaryLabel::*;
        match (split, label) {
            (Split::Train, Positive) => self.train_pos,
            (Split::Train, Negative) => self.train_neg,
            (Split::Val, Positive) => self.val_pos,
            (Split::Val, Negative) => self.val_neg,
            (Split::Test, Positive) => self.test_pos,
            (Split::Test, Negative) => self.test_neg,
        }
    }

    pub fn label_total(&self, label: BinaryLabel) -> usize {
        Split::ALL.iter().map(|&s| self.quota(s, label)).sum()
    }

    pub fn total(&self) -> usize {
        self.label_total(BinaryLabel::Positive) + self.label_total(BinaryLabel::Negative)
    }
}

/// Explicit id → split assignments that take precedence over sampling.
pub type SplitOverrides = HashMap<String, Split>;

/// Read an explicit split manifest with columns `id,split`.
pub fn load_split_overrides(path: &Path) -> Result<SplitOverrides> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| DatasetError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (id_col, split_col) = (col("id")?, col("split")?);
    let mut out = SplitOverrides::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let id = row.get(id_col).unwrap_or("").to_string();
        let split: Split = row.get(split_col).unwrap_or("").parse()?;
        if out.insert(id.clone(), split).is_some() {
            return Err(DatasetError::DuplicateAssignment(id));
        }
    }
    Ok(out)
}

fn sampling_key(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Assign every eligible record to exactly one split.
///
/// Records already carrying a split, or listed in `overrides`, are pinned and
/// count toward their quota. The rest are ordered by a seeded hash of their id
/// and dealt into the remaining train, val and test quotas, so the result does
/// not depend on input order. Records without a binary label are returned
/// unchanged and never receive a split.
pub fn make_splits(
    records: &[VideoRecord],
    spec: &SplitSpec,
    overrides: Option<&SplitOverrides>,
) -> Result<Vec<VideoRecord>> {
    let mut out: Vec<VideoRecord> = records.to_vec();
    for r in out.iter_mut() {
        if r.binary_label.is_none() {
            r.split = None;
        } else if let Some(s) = overrides.and_then(|o| o.get(&r.id)) {
            r.split = Some(*s);
        }
    }

    for label in [BinaryLabel::Positive, BinaryLabel::Negative] {
        let members: Vec<usize> = (0..out.len())
            .filter(|&i| out[i].binary_label == Some(label))
            .collect();
        let needed = spec.label_total(label);
        if members.len() < needed {
            return Err(DatasetError::InsufficientRecords {
                label,
                needed,
                available: members.len(),
            });
        }
        if members.len() > needed {
            return Err(DatasetError::SurplusRecords {
                label,
                surplus: members.len() - needed,
            });
        }

        let mut remaining: HashMap<Split, usize> =
            Split::ALL.iter().map(|&s| (s, spec.quota(s, label))).collect();
        let mut free = Vec::new();
        for &i in &members {
            match out[i].split {
                Some(s) => {
                    let left = remaining.get_mut(&s).expect("all splits present");
                    if *left == 0 {
                        return Err(DatasetError::QuotaExceeded {
                            id: out[i].id.clone(),
                            split: s,
                            label,
                        });
                    }
                    *left -= 1;
                }
                None => free.push(i),
            }
        }

        free.sort_by_cached_key(|&i| (sampling_key(spec.seed, &out[i].id), out[i].id.clone()));
        let mut cursor = free.into_iter();
        for split in Split::ALL {
            for _ in 0..remaining[&split] {
                let i = cursor.next().expect("free count equals remaining quota");
                out[i].split = Some(split);
            }
        }
    }
    Ok(out)
}
