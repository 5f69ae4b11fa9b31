//! Video → fixed-length clip conversion.
//!
//! Frames are taken from the start of the video every `frame_stride` frames
//! until `max_frames` have been collected. Each frame is optionally cropped,
//! resized to `frame_side × frame_side`, coerced to three channels and
//! normalized for the backbone. Short videos are zero-padded at the end and
//! the clip carries a validity mask with the real frames as a prefix.

mod store;

pub use store::{ArrayStore, StoredArray};

use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use ndarray::{s, Array4, ArrayView3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::video::{self, VideoError};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("empty frame sequence")]
    EmptyFrames,
    #[error("{got} frames exceed max_frames = {max}")]
    TooManyFrames { got: usize, max: usize },
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
    #[error("crop region {0:?} does not fit a {1}x{2} frame")]
    CropOutOfBounds(CropRegion, u32, u32),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt array file: {reason}")]
    Corrupt { path: std::path::PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Pixel normalization expected by a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `x / 127.5 - 1`, range [-1, 1] (Inception-family preprocessing).
    Symmetric,
    /// `x / 255`, range [0, 1].
    Unit,
}

impl Normalization {
    pub fn apply(self, v: u8) -> f32 {
        match self {
            Normalization::Symmetric => v as f32 / 127.5 - 1.0,
            Normalization::Unit => v as f32 / 255.0,
        }
    }

    pub fn range(self) -> (f32, f32) {
        match self {
            Normalization::Symmetric => (-1.0, 1.0),
            Normalization::Unit => (0.0, 1.0),
        }
    }
}

/// Rectangle in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub max_frames: usize,
    pub frame_side: usize,
    pub crop_region: Option<CropRegion>,
    pub frame_stride: usize,
    pub normalization: Normalization,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_frames: 60,
            frame_side: crate::backbone::INCEPTION_V3_SIDE,
            crop_region: None,
            frame_stride: 1,
            normalization: Normalization::Symmetric,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_frames == 0 {
            return Err(PreprocessError::InvalidConfig("max_frames must be >= 1".into()));
        }
        if self.frame_stride == 0 {
            return Err(PreprocessError::InvalidConfig("frame_stride must be >= 1".into()));
        }
        if self.frame_side == 0 {
            return Err(PreprocessError::InvalidConfig("frame_side must be >= 1".into()));
        }
        if let Some(c) = self.crop_region {
            if c.width == 0 || c.height == 0 {
                return Err(PreprocessError::InvalidConfig("empty crop region".into()));
            }
        }
        Ok(())
    }

    /// Stable short digest identifying clips produced under this config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hex::encode(&hash[..8])
    }
}

/// Fixed-length normalized frame stack `[T, side, side, 3]` plus validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub source_id: String,
    pub frames: Array4<f32>,
    pub mask: Vec<bool>,
    pub true_length: usize,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn side(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f32> {
        self.frames.slice(s![t, .., .., ..])
    }

    /// Padding time steps must be exactly zero and real frames a prefix.
    pub fn check_invariants(&self) -> bool {
        let t = self.frames.shape()[0];
        t == self.mask.len()
            && self.true_length <= t
            && self.mask.iter().enumerate().all(|(i, &m)| m == (i < self.true_length))
            && (self.true_length..t).all(|i| self.frame(i).iter().all(|&v| v == 0.0))
    }

    pub(crate) fn into_stored(self) -> StoredArray {
        let dims = self.frames.shape().to_vec();
        StoredArray {
            id: self.source_id,
            dims,
            true_length: self.true_length,
            mask: self.mask,
            data: self.frames.into_raw_vec_and_offset().0,
        }
    }

    pub(crate) fn from_stored(a: StoredArray, path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| PreprocessError::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if a.dims.len() != 4 {
            return Err(corrupt("clip must have 4 dimensions"));
        }
        let frames = Array4::from_shape_vec((a.dims[0], a.dims[1], a.dims[2], a.dims[3]), a.data)
            .map_err(|_| corrupt("shape does not match data length"))?;
        let clip = Clip {
            source_id: a.id,
            frames,
            mask: a.mask,
            true_length: a.true_length,
        };
        if !clip.check_invariants() {
            return Err(corrupt("mask/padding invariants violated"));
        }
        Ok(clip)
    }
}

/// Decode up to `max_frames` frames, taking every `frame_stride`-th frame.
pub fn extract_frames(path: &Path, cfg: &PreprocessConfig) -> Result<Vec<DynamicImage>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (i, frame) in video::open(path)?.enumerate() {
        if out.len() == cfg.max_frames {
            break;
        }
        let frame = frame?;
        if i % cfg.frame_stride == 0 {
            out.push(frame);
        }
    }
    if out.is_empty() {
        return Err(VideoError::NoFrames { path: path.to_path_buf() }.into());
    }
    Ok(out)
}

/// Resize, normalize and zero-pad raw frames into a clip.
pub fn to_clip(source_id: &str, raw_frames: &[DynamicImage], cfg: &PreprocessConfig) -> Result<Clip> {
    cfg.validate()?;
    if raw_frames.is_empty() {
        return Err(PreprocessError::EmptyFrames);
    }
    if raw_frames.len() > cfg.max_frames {
        return Err(PreprocessError::TooManyFrames {
            got: raw_frames.len(),
            max: cfg.max_frames,
        });
    }
    let side = cfg.frame_side;
    let mut frames = Array4::<f32>::zeros((cfg.max_frames, side, side, 3));
    for (t, raw) in raw_frames.iter().enumerate() {
        let cropped = match cfg.crop_region {
            Some(c) => {
                if c.x.saturating_add(c.width) > raw.width() || c.y.saturating_add(c.height) > raw.height() {
                    return Err(PreprocessError::CropOutOfBounds(c, raw.width(), raw.height()));
                }
                raw.crop_imm(c.x, c.y, c.width, c.height)
            }
            None => raw.clone(),
        };
        let rgb = cropped.to_rgb8();
        let resized = if rgb.width() as usize == side && rgb.height() as usize == side {
            rgb
        } else {
            image::imageops::resize(&rgb, side as u32, side as u32, FilterType::Triangle)
        };
        let mut slot = frames.slice_mut(s![t, .., .., ..]);
        for (x, y, px) in resized.enumerate_pixels() {
            for c in 0..3 {
                slot[[y as usize, x as usize, c]] = cfg.normalization.apply(px[c]);
            }
        }
    }
    let true_length = raw_frames.len();
    Ok(Clip {
        source_id: source_id.to_string(),
        frames,
        mask: (0..cfg.max_frames).map(|i| i < true_length).collect(),
        true_length,
    })
}

/// `extract_frames` followed by `to_clip`.
pub fn preprocess_video(source_id: &str, path: &Path, cfg: &PreprocessConfig) -> Result<Clip> {
    let raw = extract_frames(path, cfg)?;
    to_clip(source_id, &raw, cfg)
}
