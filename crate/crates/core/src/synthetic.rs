//! Procedural stand-in dataset: bright blobs drifting across a noisy field for
//! positives, a static noise field for negatives. Lets the whole pipeline run
//! without the licensed corpus.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{OriginalClass, Probe, SplitSpec};
use crate::video::{write_y4m_gray, VideoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub positives: usize,
    pub negatives: usize,
    /// Extra videos the eligibility filter must drop (linear probe or `other`).
    pub excluded: usize,
    pub side: u32,
    pub min_frames: usize,
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            positives: 8,
            negatives: 8,
            excluded: 2,
            side: 64,
            min_frames: 20,
            max_frames: 90,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// A split spec that uses every eligible video: half train, a quarter each
    /// for validation and test.
    pub fn split_spec(&self) -> SplitSpec {
        let parts = |n: usize| {
            let val = n / 4;
            let test = n / 4;
            (n - val - test, val, test)
        };
        let (tp, vp, sp) = parts(self.positives);
        let (tn, vn, sn) = parts(self.negatives);
        SplitSpec {
            train_pos: tp,
            train_neg: tn,
            val_pos: vp,
            val_neg: vn,
            test_pos: sp,
            test_neg: sn,
            seed: self.seed,
        }
    }
}

fn noise_field(side: u32, rng: &mut impl Rng) -> Vec<f32> {
    (0..side * side).map(|_| rng.random_range(20.0..70.0)).collect()
}

fn positive_frames(side: u32, n: usize, rng: &mut impl Rng) -> Vec<GrayImage> {
    let base = noise_field(side, rng);
    let s = side as f32;
    let blobs: Vec<[f32; 5]> = (0..rng.random_range(2..=3))
        .map(|_| {
            let angle = rng.random_range(0.0..std::f32::consts::TAU);
            let speed = rng.random_range(0.6..1.4);
            [rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s), speed * angle.cos(), speed * angle.sin(), rng.random_range(8.0..13.0)]
        })
        .collect();
    (0..n)
        .map(|t| {
            let centres: Vec<(f32, f32, f32)> = blobs
                .iter()
                .map(|&[x, y, dx, dy, r]| {
                    // bounce inside the frame
                    let wrap = |p: f32| {
                        let period = 2.0 * s;
                        let q = p.rem_euclid(period);
                        if q < s { q } else { period - q }
                    };
                    (wrap(x + dx * t as f32), wrap(y + dy * t as f32), r)
                })
                .collect();
            GrayImage::from_fn(side, side, |px, py| {
                let mut v = base[(py * side + px) as usize] + rng.random_range(-6.0..6.0);
                for &(cx, cy, r) in &centres {
                    let d2 = (px as f32 - cx).powi(2) + (py as f32 - cy).powi(2);
                    v += 190.0 * (-d2 / (2.0 * r * r)).exp();
                }
                Luma([v.clamp(0.0, 255.0) as u8])
            })
        })
        .collect()
}

fn negative_frames(side: u32, n: usize, rng: &mut impl Rng) -> Vec<GrayImage> {
    let base = noise_field(side, rng);
    let frame = GrayImage::from_fn(side, side, |px, py| Luma([base[(py * side + px) as usize] as u8]));
    vec![frame; n]
}

/// Write the videos and a manifest (`id,filename,class,probe`) under `dir`.
/// Returns the manifest path; video filenames are relative to `dir`.
pub fn generate(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf, VideoError> {
    std::fs::create_dir_all(dir).map_err(|source| VideoError::Io { path: dir.to_path_buf(), source })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = vec!["id,filename,class,probe".to_string()];
    let total = spec.positives + spec.negatives + spec.excluded;
    for i in 0..total {
        let n = rng.random_range(spec.min_frames..=spec.max_frames.max(spec.min_frames));
        let (id, class, probe, frames) = if i < spec.positives {
            (format!("syn_pos_{i:03}"), OriginalClass::Covid, Probe::Convex, positive_frames(spec.side, n, &mut rng))
        } else if i < spec.positives + spec.negatives {
            let class = if i % 2 == 0 { OriginalClass::Normal } else { OriginalClass::NonCovidInfection };
            (format!("syn_neg_{i:03}"), class, Probe::Convex, negative_frames(spec.side, n, &mut rng))
        } else if i % 2 == 0 {
            (format!("syn_lin_{i:03}"), OriginalClass::Covid, Probe::Linear, positive_frames(spec.side, n, &mut rng))
        } else {
            (format!("syn_oth_{i:03}"), OriginalClass::Other, Probe::Convex, negative_frames(spec.side, n, &mut rng))
        };
        let filename = format!("{id}.y4m");
        write_y4m_gray(&dir.join(&filename), &frames, 30)?;
        rows.push(format!("{id},{filename},{},{}", class.as_str(), probe.as_str()));
    }
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, rows.join("\n") + "\n").map_err(|source| VideoError::Io { path: manifest.clone(), source })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{filter_and_label, load_manifest, make_splits, BinaryLabel, ManifestSchema};
    use crate::video;

    fn mean_intensity(path: &Path) -> f64 {
        let frames: Vec<_> = video::open(path).unwrap().map(|f| f.unwrap().to_luma8()).collect();
        let sum: u64 = frames.iter().flat_map(|f| f.as_raw().iter().map(|&v| v as u64)).sum();
        sum as f64 / (frames.len() * frames[0].as_raw().len()) as f64
    }

    #[test]
    fn manifest_filters_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::default();
        let m = generate(dir.path(), &spec).unwrap();
        let records = load_manifest(&m, &ManifestSchema::default()).unwrap();
        assert_eq!(records.len(), 18);
        let eligible = filter_and_label(&records);
        assert_eq!(eligible.len(), 16);
        let split = make_splits(&eligible, &spec.split_spec(), None).unwrap();
        assert_eq!(split.len(), 16);
        for r in &eligible {
            let mean = mean_intensity(&dir.path().join(&r.file_path));
            match r.binary_label.unwrap() {
                BinaryLabel::Positive => assert!(mean > 48.0, "{} mean {mean}", r.id),
                BinaryLabel::Negative => assert!(mean < 47.0, "{} mean {mean}", r.id),
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { positives: 2, negatives: 2, excluded: 0, max_frames: 25, ..Default::default() };
        generate(a.path(), &spec).unwrap();
        generate(b.path(), &spec).unwrap();
        for name in ["manifest.csv", "syn_pos_000.y4m", "syn_neg_003.y4m"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn split_spec_uses_everything() {
        let s = SyntheticSpec::default().split_spec();
        assert_eq!((s.train_pos, s.val_pos, s.test_pos), (4, 2, 2));
        assert_eq!(s.total(), 16);
    }
}
