//! Dataset manifest ingestion, binary relabeling and stratified splits.
//!
//! A manifest is a comma-separated file with a header row and the mandatory
//! columns `id,filename,class,probe`. An optional `split` column pins records
//! to a split. Class and probe strings are mapped to enums through a
//! [`Vocabulary`] table loaded from TOML, so new dialects need no code change.

mod split;
mod vocabulary;

pub use split::{load_split_overrides, make_splits, SplitOverrides, SplitSpec};
pub use vocabulary::Vocabulary;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("manifest {path} is missing mandatory column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("duplicate split assignment for `{0}`")]
    DuplicateAssignment(String),
    #[error("unknown split name `{0}` (expected train, val or test)")]
    UnknownSplit(String),
    #[error("unknown manifest schema `{0}`")]
    UnknownSchema(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("insufficient {label} records: need {needed}, have {available}")]
    InsufficientRecords {
        label: BinaryLabel,
        needed: usize,
        available: usize,
    },
    #[error("{surplus} {label} records left without a split; adjust the split counts")]
    SurplusRecords { label: BinaryLabel, surplus: usize },
    #[error("`{id}` is pinned to {split} but the {label} quota for {split} is already full")]
    QuotaExceeded {
        id: String,
        split: Split,
        label: BinaryLabel,
    },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginalClass {
    Covid,
    NonCovidInfection,
    Other,
    Normal,
}

impl OriginalClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OriginalClass::Covid => "covid",
            OriginalClass::NonCovidInfection => "non_covid_infection",
            OriginalClass::Other => "other",
            OriginalClass::Normal => "normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    Convex,
    Linear,
    Unknown,
}

impl Probe {
    pub fn as_str(self) -> &'static str {
        match self {
            Probe::Convex => "convex",
            Probe::Linear => "linear",
            Probe::Unknown => "unknown",
        }
    }
}

/// Binary screening label. Positive means COVID-19.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Positive,
    Negative,
}

impl BinaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Positive => "positive",
            BinaryLabel::Negative => "negative",
        }
    }

    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }

    /// 1.0 for positive, 0.0 for negative.
    pub fn target(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BinaryLabel::Positive => BinaryLabel::Negative,
            BinaryLabel::Negative => BinaryLabel::Positive,
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinaryLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "positive" => Ok(BinaryLabel::Positive),
            "negative" => Ok(BinaryLabel::Negative),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" | "testing" => Ok(Split::Test),
            _ => Err(DatasetError::UnknownSplit(s.to_string())),
        }
    }
}

/// Metadata for one ultrasound video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub file_path: PathBuf,
    pub original_class: OriginalClass,
    pub probe: Probe,
    pub binary_label: Option<BinaryLabel>,
    pub split: Option<Split>,
}

impl VideoRecord {
    pub fn new(id: impl Into<String>, file_path: impl Into<PathBuf>, class: OriginalClass, probe: Probe) -> Self {
        VideoRecord {
            id: id.into(),
            file_path: file_path.into(),
            original_class: class,
            probe,
            binary_label: derive_label(class, probe),
            split: None,
        }
    }
}

/// Binary label for a (class, probe) pair, or `None` when the record is excluded.
///
/// Only convex-probe videos outside the `other` class are eligible.
pub fn derive_label(class: OriginalClass, probe: Probe) -> Option<BinaryLabel> {
    if probe != Probe::Convex {
        return None;
    }
    match class {
        OriginalClass::Covid => Some(BinaryLabel::Positive),
        OriginalClass::NonCovidInfection | OriginalClass::Normal => Some(BinaryLabel::Negative),
        OriginalClass::Other => None,
    }
}

/// Column layout of a manifest dialect plus its vocabulary table.
#[derive(Debug, Clone)]
pub struct ManifestSchema {
    pub name: String,
    pub vocabulary: Vocabulary,
}

impl ManifestSchema {
    pub const DEFAULT_NAME: &'static str = "lus-v1";

    /// Look up a built-in schema by name.
    pub fn by_name(name: &str) -> Result<Self> {
        if name == Self::DEFAULT_NAME {
            Ok(Self::default())
        } else {
            Err(DatasetError::UnknownSchema(name.to_string()))
        }
    }

    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = vocabulary;
        self
    }
}

impl Default for ManifestSchema {
    fn default() -> Self {
        ManifestSchema {
            name: Self::DEFAULT_NAME.to_string(),
            vocabulary: Vocabulary::builtin(),
        }
    }
}

const MANDATORY_COLUMNS: [&str; 4] = ["id", "filename", "class", "probe"];

/// Read a manifest. One record per row; labels are derived immediately.
///
/// A non-empty `split` cell pins the record, except on records that are
/// excluded by the filters (those never carry a split).
pub fn load_manifest(path: &Path, schema: &ManifestSchema) -> Result<Vec<VideoRecord>> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));

    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(MANDATORY_COLUMNS) {
        *slot = column(name).ok_or_else(|| DatasetError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
    }
    let split_idx = column("split");

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let id = field(idx[0]).to_string();
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let class = schema.vocabulary.class(field(idx[2]));
        let probe = schema.vocabulary.probe(field(idx[3]));
        let mut record = VideoRecord::new(id, field(idx[1]), class, probe);
        if let Some(si) = split_idx {
            let cell = field(si);
            if !cell.is_empty() && record.binary_label.is_some() {
                record.split = Some(cell.parse()?);
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Keep only eligible records, with labels recomputed from class and probe.
pub fn filter_and_label(records: &[VideoRecord]) -> Vec<VideoRecord> {
    records
        .iter()
        .filter_map(|r| {
            let label = derive_label(r.original_class, r.probe)?;
            Some(VideoRecord {
                binary_label: Some(label),
                ..r.clone()
            })
        })
        .collect()
}

/// Write records in manifest format plus `binary_label,split` columns.
pub fn write_resolved_manifest(records: &[VideoRecord], path: &Path) -> Result<()> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer
        .write_record(["id", "filename", "class", "probe", "binary_label", "split"])
        .map_err(csv_err)?;
    for r in records {
        writer
            .write_record([
                r.id.as_str(),
                &r.file_path.to_string_lossy(),
                r.original_class.as_str(),
                r.probe.as_str(),
                r.binary_label.map(BinaryLabel::as_str).unwrap_or(""),
                r.split.map(Split::as_str).unwrap_or(""),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn manifest(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn vocabulary_mapping_on_load() {
        let f = manifest(
            "id,filename,class,probe\n\
             v1,a.mp4,COVID-19,convex\n\
             v2,b.mp4,other,convex\n\
             v3,c.mp4,normal,linear\n\
             v4,d.mp4,Pneumonia,Convex\n\
             v5,e.mp4,mystery,\n",
        );
        let recs = load_manifest(f.path(), &ManifestSchema::default()).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[0].original_class, OriginalClass::Covid);
        assert_eq!(recs[0].probe, Probe::Convex);
        assert_eq!(recs[0].binary_label, Some(BinaryLabel::Positive));
        assert_eq!(recs[1].original_class, OriginalClass::Other);
        assert_eq!(recs[1].binary_label, None);
        assert_eq!(recs[2].probe, Probe::Linear);
        assert_eq!(recs[2].binary_label, None);
        assert_eq!(recs[3].binary_label, Some(BinaryLabel::Negative));
        // unknown vocabulary degrades instead of failing
        assert_eq!(recs[4].original_class, OriginalClass::Other);
        assert_eq!(recs[4].probe, Probe::Unknown);
    }

    #[test]
    fn missing_column_and_duplicate_id() {
        let f = manifest("id,filename,class\nv1,a.mp4,covid\n");
        let err = load_manifest(f.path(), &ManifestSchema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn { ref column, .. } if column == "probe"));

        let f = manifest("id,filename,class,probe\nv1,a,covid,convex\nv1,b,normal,convex\n");
        let err = load_manifest(f.path(), &ManifestSchema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateId(ref id) if id == "v1"));

        let err = load_manifest(Path::new("/nonexistent/manifest.csv"), &ManifestSchema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
    }

    #[test]
    fn filter_keeps_convex_non_other() {
        let recs = vec![
            VideoRecord::new("a", "a", OriginalClass::Covid, Probe::Convex),
            VideoRecord::new("b", "b", OriginalClass::Other, Probe::Convex),
            VideoRecord::new("c", "c", OriginalClass::Normal, Probe::Convex),
        ];
        let out = filter_and_label(&recs);
        let labels: Vec<_> = out.iter().map(|r| r.binary_label.unwrap()).collect();
        assert_eq!(labels, vec![BinaryLabel::Positive, BinaryLabel::Negative]);
        assert!(filter_and_label(&[]).is_empty());
        assert_eq!(filter_and_label(&out), out);
    }

    #[test]
    fn split_column_ignored_on_excluded_rows() {
        let f = manifest("id,filename,class,probe,split\nv1,a,covid,convex,test\nv2,b,other,convex,train\n");
        let recs = load_manifest(f.path(), &ManifestSchema::default()).unwrap();
        assert_eq!(recs[0].split, Some(Split::Test));
        assert_eq!(recs[1].split, None);
    }

    #[test]
    fn resolved_manifest_reloads() {
        let mut recs = vec![
            VideoRecord::new("a", "x/a.gif", OriginalClass::Covid, Probe::Convex),
            VideoRecord::new("b", "x/b.gif", OriginalClass::NonCovidInfection, Probe::Convex),
            VideoRecord::new("c", "x/c.gif", OriginalClass::Normal, Probe::Linear),
        ];
        recs[0].split = Some(Split::Train);
        recs[1].split = Some(Split::Val);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resolved.csv");
        write_resolved_manifest(&recs, &path).unwrap();
        let back = load_manifest(&path, &ManifestSchema::default()).unwrap();
        assert_eq!(back, recs);
    }
}
