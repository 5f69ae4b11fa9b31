//! Compares the Inception-v3 trunk against features computed by Keras.
//!
//! Generate the fixture with
//! `python scripts/export_inception_v3.py --weights none --randomize-bn --side 107 --out DIR/w.safetensors --reference DIR`
//! and run with `LUS_INCEPTION_REFERENCE=DIR cargo test -p lus-core --test inception_reference -- --ignored`.

use std::path::PathBuf;

use lus_core::backbone::{Backbone, BackboneKind};
use ndarray::Array3;

fn read_f32(path: &std::path::Path) -> Vec<f32> {
    std::fs::read(path)
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[test]
#[ignore = "needs a Keras-exported fixture"]
fn matches_keras_features() {
    let dir = PathBuf::from(std::env::var("LUS_INCEPTION_REFERENCE").expect("LUS_INCEPTION_REFERENCE unset"));
    let input = read_f32(&dir.join("probe_input.f32"));
    let want = read_f32(&dir.join("probe_features.f32"));
    let side = ((input.len() / 3) as f64).sqrt() as usize;
    assert_eq!(side * side * 3, input.len());

    let backbone = Backbone::from_safetensors(BackboneKind::InceptionV3, &dir.join("w.safetensors"), side).unwrap();
    assert_eq!(backbone.feature_dim(), want.len());
    let frame = Array3::from_shape_vec((side, side, 3), input).unwrap();
    let got = backbone.embed(frame.view()).unwrap();

    let scale = want.iter().fold(0f32, |m, v| m.max(v.abs())).max(1e-6);
    let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
    assert!(worst / scale < 1e-3, "max abs diff {worst} (scale {scale})");
}
