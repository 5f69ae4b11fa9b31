//! Layered run configuration.
//!
//! Lowest to highest precedence: built-in defaults, the synthetic preset,
//! `<work_dir>/run.toml` written by `prepare`, the `--config` file, then
//! command-line flags. Tables are merged key by key, so a file only needs the
//! keys it changes. Unknown keys anywhere are an error.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lus_core::backbone::TINY_CONV_SIDE;
use lus_core::dataset::SplitSpec;
use lus_core::model::ModelConfig;
use lus_core::preprocess::PreprocessConfig;
use lus_core::synthetic::SyntheticSpec;
use lus_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const RUN_FILE: &str = "run.toml";
pub const DEFAULT_WORK_DIR: &str = "work";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Directory that manifest filenames are relative to. Defaults to the
    /// manifest's own directory.
    pub video_root: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            manifest: None,
            video_root: None,
            work_dir: PathBuf::from(DEFAULT_WORK_DIR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub schema: String,
    /// TOML vocabulary replacing the built-in class/probe table.
    pub vocabulary: Option<PathBuf>,
    /// CSV with `id,split` columns pinning records to splits.
    pub split_overrides: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            schema: lus_core::dataset::ManifestSchema::DEFAULT_NAME.to_string(),
            vocabulary: None,
            split_overrides: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub dataset: DatasetSection,
    pub split: SplitSpec,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Present when the run uses generated videos.
    pub synthetic: Option<SyntheticSpec>,
}

/// Values given on the command line; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub video_root: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub lr: Option<f64>,
    pub threshold: Option<f64>,
    pub synthetic: bool,
}

impl RunConfig {
    pub fn work_dir(&self) -> &Path {
        &self.paths.work_dir
    }

    pub fn synthetic_dir(&self) -> PathBuf {
        self.paths.work_dir.join("synthetic")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.preprocess.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let side = self.model.resolved_input_side()?;
        if side != self.preprocess.frame_side {
            bail!(
                "preprocess.frame_side = {} but the {} backbone takes {side}x{side} frames",
                self.preprocess.frame_side,
                self.model.backbone_id
            );
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_table(path: &Path) -> anyhow::Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<Table>().with_context(|| format!("parsing config {}", path.display()))
}

fn preset(spec: &SyntheticSpec, work_dir: &Path) -> Table {
    let dir = work_dir.join("synthetic");
    let cfg = RunConfig {
        paths: Paths {
            manifest: Some(dir.join("manifest.csv")),
            video_root: Some(dir),
            work_dir: work_dir.to_path_buf(),
        },
        split: spec.split_spec(),
        preprocess: PreprocessConfig { frame_side: TINY_CONV_SIDE, ..Default::default() },
        model: ModelConfig { backbone_id: "tiny_conv".into(), ..Default::default() },
        synthetic: Some(spec.clone()),
        ..Default::default()
    };
    Table::try_from(&cfg).expect("config serializes")
}

/// Resolve the effective configuration for one invocation.
pub fn resolve(o: &Overrides) -> anyhow::Result<RunConfig> {
    let file = o.config.as_deref().map(read_table).transpose()?;

    // the work dir decides where run.toml lives, so settle it first
    let work_dir = match (&o.work_dir, &file) {
        (Some(w), _) => w.clone(),
        (None, Some(f)) => f
            .get("paths")
            .and_then(|p| p.get("work_dir"))
            .and_then(Value::as_str)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_WORK_DIR)),
        (None, None) => PathBuf::from(DEFAULT_WORK_DIR),
    };

    let mut user = Table::new();
    let run_file = work_dir.join(RUN_FILE);
    if run_file.exists() {
        merge(&mut user, read_table(&run_file)?);
    }
    if let Some(f) = file {
        merge(&mut user, f);
    }

    let mut layered = Table::try_from(RunConfig::default()).expect("config serializes");
    if o.synthetic || user.contains_key("synthetic") {
        let spec: SyntheticSpec = match user.get("synthetic") {
            Some(v) => v.clone().try_into().context("invalid [synthetic] table")?,
            None => SyntheticSpec::default(),
        };
        merge(&mut layered, preset(&spec, &work_dir));
    }
    merge(&mut layered, user);
    let mut cfg: RunConfig = layered.try_into().context("invalid configuration")?;

    cfg.paths.work_dir = work_dir;
    if let Some(m) = &o.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    if let Some(v) = &o.video_root {
        cfg.paths.video_root = Some(v.clone());
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
        cfg.split.seed = s;
    }
    if let Some(e) = o.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.train.initial_lr = lr;
    }
    if let Some(t) = o.threshold {
        cfg.model.classification_threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_tables_merge() {
        let mut base: Table = "[a]\nx = 1\ny = 2\n".parse().unwrap();
        merge(&mut base, "[a]\ny = 3\n".parse().unwrap());
        assert_eq!(base["a"]["x"].as_integer(), Some(1));
        assert_eq!(base["a"]["y"].as_integer(), Some(3));
    }
}
