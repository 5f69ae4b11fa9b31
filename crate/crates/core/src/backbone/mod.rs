//! Frozen convolutional per-frame feature extractors.
//!
//! Two topologies are available:
//!
//! * `inception_v3`: the Inception-v3 trunk with global average pooling.
//!   Pretrained weights are read from a safetensors file whose tensors are
//!   named by Keras creation index (`conv{i}.kernel` as `[kh, kw, cin, cout]`,
//!   `bn{i}.beta`, `bn{i}.moving_mean`, `bn{i}.moving_variance`, optional
//!   `bn{i}.gamma`). `scripts/export_inception_v3.py` produces such a file.
//! * `tiny_conv`: a three-stage extractor with seeded frozen weights, used for
//!   synthetic fixtures and tests.
//!
//! Both can be instantiated with seeded random weights. The feature width is
//! always read off the instantiated layer graph.

mod architectures;
pub mod graph;
pub mod safetensors;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::Normalization;
use graph::{ConvLayer, ConvSpec, Graph, RunGraph, Shape, ShapeGraph};

pub const INCEPTION_V3_SIDE: usize = 299;
pub const TINY_CONV_SIDE: usize = 64;
const BN_EPSILON: f32 = 1e-3;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("unknown backbone `{0}` (expected inception_v3 or tiny_conv)")]
    UnknownBackbone(String),
    #[error("input side {side} is too small for {backbone}")]
    InputTooSmall { backbone: &'static str, side: usize },
    #[error("frame shape {got:?} does not match backbone input [{side}, {side}, 3]")]
    ShapeMismatch { got: (usize, usize, usize), side: usize },
    #[error("backbone weights: {0}")]
    Weights(String),
}

pub type Result<T> = std::result::Result<T, BackboneError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    InceptionV3,
    TinyConv,
}

impl BackboneKind {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "inception_v3" => Ok(BackboneKind::InceptionV3),
            "tiny_conv" => Ok(BackboneKind::TinyConv),
            other => Err(BackboneError::UnknownBackbone(other.to_string())),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            BackboneKind::InceptionV3 => "inception_v3",
            BackboneKind::TinyConv => "tiny_conv",
        }
    }

    pub fn canonical_side(self) -> usize {
        match self {
            BackboneKind::InceptionV3 => INCEPTION_V3_SIDE,
            BackboneKind::TinyConv => TINY_CONV_SIDE,
        }
    }

    pub fn normalization(self) -> Normalization {
        Normalization::Symmetric
    }

    fn run<G: Graph>(self, g: &mut G, input: G::T) -> G::T {
        match self {
            BackboneKind::InceptionV3 => architectures::inception_v3(g, input),
            BackboneKind::TinyConv => architectures::tiny_conv(g, input),
        }
    }

    /// Convolution list and final feature-map shape for a square input.
    pub fn layout(self, side: usize) -> Result<(Vec<ConvSpec>, Shape)> {
        let mut g = ShapeGraph::default();
        let out = self.run(&mut g, Shape { h: side, w: side, c: 3 });
        if out.h == 0 || out.w == 0 {
            return Err(BackboneError::InputTooSmall { backbone: self.id(), side });
        }
        Ok((g.convs, out))
    }
}

/// An instantiated, frozen backbone.
#[derive(Debug, Clone)]
pub struct Backbone {
    kind: BackboneKind,
    input_side: usize,
    layers: Vec<ConvLayer>,
    feature_dim: usize,
    digest: String,
}

impl Backbone {
    /// Random He-normal kernels with identity batch-norm, fixed by `seed`.
    pub fn seeded(kind: BackboneKind, seed: u64, input_side: usize) -> Result<Self> {
        let (specs, out) = kind.layout(input_side)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let fan_in = spec.kh * spec.kw * spec.cin;
                let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
                let kernel = Array2::from_shape_simple_fn((fan_in, spec.cout), || normal.sample(&mut rng));
                ConvLayer {
                    spec,
                    kernel,
                    bias: Array1::zeros(spec.cout),
                }
            })
            .collect();
        Ok(Self::assemble(kind, input_side, layers, out.c))
    }

    /// Load folded conv + batch-norm weights from a safetensors file.
    pub fn from_safetensors(kind: BackboneKind, path: &Path, input_side: usize) -> Result<Self> {
        let tensors = safetensors::read(path).map_err(BackboneError::Weights)?;
        Self::from_tensors(kind, &tensors, input_side)
    }

    pub fn from_tensors(
        kind: BackboneKind,
        tensors: &BTreeMap<String, safetensors::Tensor>,
        input_side: usize,
    ) -> Result<Self> {
        let (specs, out) = kind.layout(input_side)?;
        let get = |name: String, shape: &[usize]| -> Result<&[f32]> {
            let t = tensors
                .get(&name)
                .ok_or_else(|| BackboneError::Weights(format!("missing tensor `{name}`")))?;
            if t.shape != shape {
                return Err(BackboneError::Weights(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Ok(&t.data)
        };
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let rows = spec.kh * spec.kw * spec.cin;
            let kernel = get(format!("conv{i}.kernel"), &[spec.kh, spec.kw, spec.cin, spec.cout])?;
            let mut kernel = Array2::from_shape_vec((rows, spec.cout), kernel.to_vec()).expect("checked shape");
            let c = [spec.cout];
            let beta = get(format!("bn{i}.beta"), &c)?;
            let mean = get(format!("bn{i}.moving_mean"), &c)?;
            let var = get(format!("bn{i}.moving_variance"), &c)?;
            let gamma = match tensors.contains_key(&format!("bn{i}.gamma")) {
                true => get(format!("bn{i}.gamma"), &c)?.to_vec(),
                false => vec![1.0; spec.cout],
            };
            let conv_bias = match tensors.contains_key(&format!("conv{i}.bias")) {
                true => get(format!("conv{i}.bias"), &c)?.to_vec(),
                false => vec![0.0; spec.cout],
            };
            let mut bias = Array1::zeros(spec.cout);
            for co in 0..spec.cout {
                let scale = gamma[co] / (var[co] + BN_EPSILON).sqrt();
                kernel.column_mut(co).mapv_inplace(|v| v * scale);
                bias[co] = beta[co] + (conv_bias[co] - mean[co]) * scale;
            }
            layers.push(ConvLayer { spec, kernel, bias });
        }
        let expected = layers.len();
        let extra = tensors
            .keys()
            .filter(|k| {
                k.strip_prefix("conv")
                    .or_else(|| k.strip_prefix("bn"))
                    .and_then(|r| r.split('.').next())
                    .and_then(|n| n.parse::<usize>().ok())
                    .is_some_and(|n| n >= expected)
            })
            .count();
        if extra > 0 {
            return Err(BackboneError::Weights(format!(
                "{extra} tensors beyond the {expected} layers of {}",
                kind.id()
            )));
        }
        Ok(Self::assemble(kind, input_side, layers, out.c))
    }

    fn assemble(kind: BackboneKind, input_side: usize, layers: Vec<ConvLayer>, feature_dim: usize) -> Self {
        let mut h = Sha256::new();
        h.update(kind.id().as_bytes());
        h.update((input_side as u64).to_le_bytes());
        for l in &layers {
            for v in l.kernel.iter().chain(l.bias.iter()) {
                h.update(v.to_le_bytes());
            }
        }
        Backbone {
            kind,
            input_side,
            layers,
            feature_dim,
            digest: hex::encode(h.finalize()),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// SHA-256 over the topology id, input side and every parameter.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Feature vector for one normalized `[side, side, 3]` frame.
    pub fn embed(&self, frame: ArrayView3<'_, f32>) -> Result<Vec<f32>> {
        let got = frame.dim();
        if got != (self.input_side, self.input_side, 3) {
            return Err(BackboneError::ShapeMismatch {
                got,
                side: self.input_side,
            });
        }
        let mut g = RunGraph::new(&self.layers);
        let out: Array3<f32> = self.kind.run(&mut g, frame.to_owned());
        debug_assert!(g.consumed_all());
        Ok(graph::global_avg_pool(&out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inception_layout() {
        let (convs, out) = BackboneKind::InceptionV3.layout(299).unwrap();
        assert_eq!(convs.len(), 94);
        assert_eq!(out, Shape { h: 8, w: 8, c: 2048 });
        // smallest accepted input
        assert!(BackboneKind::InceptionV3.layout(75).is_ok());
        assert!(matches!(
            BackboneKind::InceptionV3.layout(60),
            Err(BackboneError::InputTooSmall { .. })
        ));
    }

    #[test]
    fn tiny_is_deterministic() {
        let a = Backbone::seeded(BackboneKind::TinyConv, 3, 64).unwrap();
        let b = Backbone::seeded(BackboneKind::TinyConv, 3, 64).unwrap();
        let c = Backbone::seeded(BackboneKind::TinyConv, 4, 64).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.feature_dim(), 48);
        let frame = Array3::from_shape_fn((64, 64, 3), |(y, x, ch)| ((y * 64 + x + ch) as f32 * 0.01).sin());
        let fa = a.embed(frame.view()).unwrap();
        assert_eq!(fa.len(), 48);
        assert_eq!(fa, b.embed(frame.view()).unwrap());
        assert!(matches!(
            a.embed(Array3::zeros((32, 32, 3)).view()),
            Err(BackboneError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn safetensors_weights_fold_batch_norm() {
        let (specs, _) = BackboneKind::TinyConv.layout(64).unwrap();
        let mut tensors = BTreeMap::new();
        let t = |shape: Vec<usize>, f: &dyn Fn(usize) -> f32| {
            let n = shape.iter().product();
            safetensors::Tensor { shape, data: (0..n).map(f).collect() }
        };
        for (i, s) in specs.iter().enumerate() {
            tensors.insert(format!("conv{i}.kernel"), t(vec![s.kh, s.kw, s.cin, s.cout], &|j| ((j % 7) as f32 - 3.0) * 0.05));
            tensors.insert(format!("bn{i}.beta"), t(vec![s.cout], &|j| j as f32 * 0.01));
            tensors.insert(format!("bn{i}.moving_mean"), t(vec![s.cout], &|_| 0.1));
            tensors.insert(format!("bn{i}.moving_variance"), t(vec![s.cout], &|_| 4.0 - BN_EPSILON));
        }
        let b = Backbone::from_tensors(BackboneKind::TinyConv, &tensors, 64).unwrap();
        // scale = 1/sqrt(4) = 0.5; bias = beta - mean * scale
        assert_eq!(b.layers[0].kernel[[0, 0]], -0.15 * 0.5);
        assert_eq!(b.layers[0].bias[1], 0.01 - 0.05);

        let mut missing = tensors.clone();
        missing.remove("bn2.beta");
        assert!(matches!(Backbone::from_tensors(BackboneKind::TinyConv, &missing, 64), Err(BackboneError::Weights(_))));
        let mut extra = tensors.clone();
        extra.insert("conv9.kernel".into(), t(vec![1], &|_| 0.0));
        assert!(Backbone::from_tensors(BackboneKind::TinyConv, &extra, 64).is_err());
        assert!(Backbone::from_tensors(BackboneKind::InceptionV3, &tensors, 299).is_err());
    }
}
