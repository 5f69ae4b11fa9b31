//! Backbone + recurrent-head video classifier.

mod checkpoint;
pub mod gru;
pub mod head;

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
pub use head::{bce_with_logit, RecurrentHead};

use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{Backbone, BackboneError, BackboneKind};
use crate::dataset::BinaryLabel;
use crate::preprocess::{Clip, PreprocessConfig, StoredArray};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature sequence has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature sequence has {rows} rows but a mask of length {mask}")]
    MaskMismatch { rows: usize, mask: usize },
    #[error("non-finite value in feature sequence")]
    NonFinite,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("checkpoint config does not match requested config: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `inception_v3` or `tiny_conv`.
    pub backbone_id: String,
    /// Pretrained weights (safetensors). Without it the backbone is seeded.
    pub backbone_weights: Option<PathBuf>,
    pub backbone_seed: u64,
    /// Square input side; `None` uses the backbone's canonical side.
    pub input_side: Option<usize>,
    /// Per-frame feature width. `None` until read off the instantiated backbone.
    pub feature_dim: Option<usize>,
    pub recurrent_layers: Vec<usize>,
    pub backbone_trainable: bool,
    pub dropout_rate: f64,
    pub classification_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_id: BackboneKind::InceptionV3.id().to_string(),
            backbone_weights: None,
            backbone_seed: 0,
            input_side: None,
            feature_dim: None,
            recurrent_layers: vec![16, 8],
            backbone_trainable: false,
            dropout_rate: 0.0,
            classification_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn backbone_kind(&self) -> Result<BackboneKind> {
        Ok(BackboneKind::from_id(&self.backbone_id)?)
    }

    pub fn resolved_input_side(&self) -> Result<usize> {
        Ok(self.input_side.unwrap_or(self.backbone_kind()?.canonical_side()))
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone_kind()?;
        if self.recurrent_layers.is_empty() || self.recurrent_layers.contains(&0) {
            return Err(ModelError::InvalidConfig("recurrent_layers must be nonempty and positive".into()));
        }
        if self.feature_dim == Some(0) {
            return Err(ModelError::InvalidConfig("feature_dim must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.classification_threshold > 0.0 && self.classification_threshold < 1.0) {
            return Err(ModelError::InvalidConfig("classification_threshold must lie in (0, 1)".into()));
        }
        if self.backbone_trainable {
            return Err(ModelError::InvalidConfig(
                "backbone fine-tuning is not supported; the backbone is always frozen".into(),
            ));
        }
        Ok(())
    }

    /// Instantiate the frozen backbone described by this config.
    pub fn build_backbone(&self) -> Result<Backbone> {
        let kind = self.backbone_kind()?;
        let side = self.resolved_input_side()?;
        let backbone = match &self.backbone_weights {
            Some(path) => Backbone::from_safetensors(kind, path, side)?,
            None => Backbone::seeded(kind, self.backbone_seed, side)?,
        };
        if let Some(d) = self.feature_dim {
            if d != backbone.feature_dim() {
                return Err(ModelError::InvalidConfig(format!(
                    "feature_dim {d} does not match {} output width {}",
                    kind.id(),
                    backbone.feature_dim()
                )));
            }
        }
        Ok(backbone)
    }

    /// Preprocessing matching the backbone's input contract.
    pub fn preprocess_defaults(&self) -> Result<PreprocessConfig> {
        let kind = self.backbone_kind()?;
        Ok(PreprocessConfig {
            frame_side: self.resolved_input_side()?,
            normalization: kind.normalization(),
            ..PreprocessConfig::default()
        })
    }
}

/// Per-frame features `[T, feature_dim]` with the clip's validity mask.
///
/// Padding rows are zero vectors; the head never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Array2<f64>,
    pub mask: Vec<bool>,
}

impl FeatureSequence {
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn to_stored(&self, id: &str) -> StoredArray {
        StoredArray {
            id: id.to_string(),
            dims: vec![self.features.nrows(), self.features.ncols()],
            true_length: self.mask.iter().filter(|&&m| m).count(),
            mask: self.mask.clone(),
            data: self.features.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_stored(a: &StoredArray) -> Option<Self> {
        if a.dims.len() != 2 || a.mask.len() != a.dims[0] {
            return None;
        }
        let features = Array2::from_shape_vec((a.dims[0], a.dims[1]), a.data.iter().map(|&v| v as f64).collect()).ok()?;
        Some(FeatureSequence {
            features,
            mask: a.mask.clone(),
        })
    }
}

/// Run the backbone over every real frame of a clip. Frames are independent
/// and processed in parallel; the result does not depend on scheduling.
pub fn extract_features(clip: &Clip, backbone: &Backbone) -> Result<FeatureSequence> {
    let t = clip.len();
    let rows: Vec<Option<Vec<f32>>> = (0..t)
        .into_par_iter()
        .map(|i| {
            if clip.mask[i] {
                backbone.embed(clip.frame(i)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut features = Array2::zeros((t, backbone.feature_dim()));
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(row) = row {
            for (dst, v) in features.row_mut(i).iter_mut().zip(row) {
                *dst = v as f64;
            }
        }
    }
    Ok(FeatureSequence {
        features,
        mask: clip.mask.clone(),
    })
}

/// Positive iff `p >= threshold`.
pub fn predict(p: f64, threshold: f64) -> BinaryLabel {
    if p >= threshold {
        BinaryLabel::Positive
    } else {
        BinaryLabel::Negative
    }
}

/// A trained classifier: config, its input contract, frozen backbone and head.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub backbone: Backbone,
    pub head: RecurrentHead,
}

impl Model {
    /// Build the backbone and a freshly initialised head.
    pub fn new(config: &ModelConfig, preprocess: &PreprocessConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = config.build_backbone()?;
        Self::with_backbone(config, preprocess, backbone, seed)
    }

    pub fn with_backbone(config: &ModelConfig, preprocess: &PreprocessConfig, backbone: Backbone, seed: u64) -> Result<Self> {
        config.validate()?;
        if preprocess.frame_side != backbone.input_side() {
            return Err(ModelError::InvalidConfig(format!(
                "frame_side {} does not match backbone input side {}",
                preprocess.frame_side,
                backbone.input_side()
            )));
        }
        let mut config = config.clone();
        config.feature_dim = Some(backbone.feature_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = RecurrentHead::new(backbone.feature_dim(), &config.recurrent_layers, &mut rng);
        Ok(Model {
            config,
            preprocess: preprocess.clone(),
            backbone,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn check_sequence(&self, seq: &FeatureSequence) -> Result<()> {
        if seq.feature_dim() != self.feature_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim(),
                got: seq.feature_dim(),
            });
        }
        if seq.mask.len() != seq.features.nrows() {
            return Err(ModelError::MaskMismatch {
                rows: seq.features.nrows(),
                mask: seq.mask.len(),
            });
        }
        if seq.features.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    /// Positive-class probability for a feature sequence.
    pub fn forward(&self, seq: &FeatureSequence) -> Result<f64> {
        self.check_sequence(seq)?;
        Ok(self.head.probability(seq))
    }

    pub fn extract_features(&self, clip: &Clip) -> Result<FeatureSequence> {
        extract_features(clip, &self.backbone)
    }

    pub fn predict_clip(&self, clip: &Clip) -> Result<(f64, BinaryLabel)> {
        let p = self.forward(&self.extract_features(clip)?)?;
        Ok((p, predict(p, self.config.classification_threshold)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::TINY_CONV_SIDE;
    use ndarray::Array4;

    fn tiny_config() -> (ModelConfig, PreprocessConfig) {
        let cfg = ModelConfig {
            backbone_id: "tiny_conv".into(),
            ..ModelConfig::default()
        };
        let pre = PreprocessConfig {
            max_frames: 6,
            ..cfg.preprocess_defaults().unwrap()
        };
        (cfg, pre)
    }

    fn clip_with(frames: &[f32], t: usize) -> Clip {
        let side = TINY_CONV_SIDE;
        let mut data = Array4::zeros((t, side, side, 3));
        for (i, &v) in frames.iter().enumerate() {
            data.slice_mut(ndarray::s![i, .., .., ..]).fill(v);
        }
        Clip {
            source_id: "c".into(),
            frames: data,
            mask: (0..t).map(|i| i < frames.len()).collect(),
            true_length: frames.len(),
        }
    }

    #[test]
    fn predict_threshold_boundary() {
        assert_eq!(predict(0.9, 0.5), BinaryLabel::Positive);
        assert_eq!(predict(0.5, 0.5), BinaryLabel::Positive);
        assert_eq!(predict(0.4999, 0.5), BinaryLabel::Negative);
    }

    #[test]
    fn features_shape_and_identical_frames() {
        let (cfg, pre) = tiny_config();
        let model = Model::new(&cfg, &pre, 0).unwrap();
        assert_eq!(model.config.feature_dim, Some(48));
        let clip = clip_with(&[0.3, 0.3, -0.2], 6);
        let seq = model.extract_features(&clip).unwrap();
        assert_eq!(seq.features.dim(), (6, 48));
        assert_eq!(seq.mask, clip.mask);
        assert_eq!(seq.features.row(0), seq.features.row(1));
        assert_ne!(seq.features.row(0), seq.features.row(2));
        assert!(seq.features.row(4).iter().all(|&v| v == 0.0));
        let p = model.forward(&seq).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn forward_rejects_bad_sequences() {
        let (cfg, pre) = tiny_config();
        let model = Model::new(&cfg, &pre, 0).unwrap();
        let bad_dim = FeatureSequence { features: Array2::zeros((3, 5)), mask: vec![true; 3] };
        assert!(matches!(model.forward(&bad_dim), Err(ModelError::DimensionMismatch { .. })));
        let mut nan = FeatureSequence { features: Array2::zeros((3, 48)), mask: vec![true; 3] };
        nan.features[[1, 2]] = f64::NAN;
        assert!(matches!(model.forward(&nan), Err(ModelError::NonFinite)));
        let short_mask = FeatureSequence { features: Array2::zeros((3, 48)), mask: vec![true; 2] };
        assert!(matches!(model.forward(&short_mask), Err(ModelError::MaskMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        let (cfg, pre) = tiny_config();
        let bad = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = cfg.clone();
            f(&mut c);
            Model::new(&c, &pre, 0).is_err()
        };
        assert!(bad(&|c| c.recurrent_layers.clear()));
        assert!(bad(&|c| c.dropout_rate = 1.0));
        assert!(bad(&|c| c.classification_threshold = 1.0));
        assert!(bad(&|c| c.backbone_trainable = true));
        assert!(bad(&|c| c.feature_dim = Some(2048)));
        assert!(bad(&|c| c.backbone_id = "resnet".into()));
        let mut wrong_side = pre.clone();
        wrong_side.frame_side = 32;
        assert!(Model::new(&cfg, &wrong_side, 0).is_err());
    }

    #[test]
    fn inception_width_comes_from_the_graph() {
        let cfg = ModelConfig { input_side: Some(75), ..ModelConfig::default() };
        let backbone = cfg.build_backbone().unwrap();
        assert_eq!(backbone.feature_dim(), 2048);
        assert_eq!(backbone.layer_count(), 94);
    }
}
