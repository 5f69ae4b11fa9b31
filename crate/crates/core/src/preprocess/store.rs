//! Binary array container for clips and cached feature sequences.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "LUSARR01"
//! id_len      u32
//! id          id_len bytes, UTF-8
//! ndim        u32
//! dims        ndim × u32     (dims[0] is the time axis)
//! true_length u32
//! mask        dims[0] bytes  (1 = real frame, 0 = padding)
//! data        prod(dims) × f32
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Clip, PreprocessError, Result};

const MAGIC: &[u8; 8] = b"LUSARR01";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredArray {
    pub id: String,
    pub dims: Vec<usize>,
    pub true_length: usize,
    pub mask: Vec<bool>,
    pub data: Vec<f32>,
}

impl StoredArray {
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.id.len() as u32).to_le_bytes())?;
        w.write_all(self.id.as_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.true_length as u32).to_le_bytes())?;
        let mask: Vec<u8> = self.mask.iter().map(|&m| m as u8).collect();
        w.write_all(&mask)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> std::result::Result<Self, String> {
        fn u32_of(r: &mut impl Read) -> std::result::Result<usize, String> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            Ok(u32::from_le_bytes(b) as usize)
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let id_len = u32_of(&mut r)?;
        if id_len > 1 << 16 {
            return Err("implausible id length".into());
        }
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(|e| e.to_string())?;
        let id = String::from_utf8(id).map_err(|e| e.to_string())?;
        let ndim = u32_of(&mut r)?;
        if ndim == 0 || ndim > 8 {
            return Err(format!("implausible rank {ndim}"));
        }
        let dims = (0..ndim).map(|_| u32_of(&mut r)).collect::<std::result::Result<Vec<_>, _>>()?;
        let true_length = u32_of(&mut r)?;
        let mut mask = vec![0u8; dims[0]];
        r.read_exact(&mut mask).map_err(|e| e.to_string())?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("dimension overflow")?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(|e| e.to_string())?;
        if raw.len() != count * 4 {
            return Err(format!("expected {} data bytes, found {}", count * 4, raw.len()));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(StoredArray {
            id,
            dims,
            true_length,
            mask: mask.into_iter().map(|m| m != 0).collect(),
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |source| PreprocessError::Io {
            path: path.to_path_buf(),
            source,
        };
        // write-then-rename so an interrupted run never leaves a partial file
        let tmp = path.with_extension("partial");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io_err)?);
        self.write_to(&mut f).map_err(io_err)?;
        f.flush().map_err(io_err)?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|source| PreprocessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|reason| PreprocessError::Corrupt {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Directory of arrays keyed by record id.
#[derive(Debug, Clone)]
pub struct ArrayStore {
    root: PathBuf,
}

fn file_stem_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == id && !id.starts_with('.') {
        safe
    } else {
        use sha2::{Digest, Sha256};
        format!("{safe}-{}", hex::encode(&Sha256::digest(id.as_bytes())[..4]))
    }
}

impl ArrayStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| PreprocessError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(ArrayStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.root.join(format!("{}.bin", file_stem_for(id)))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path_for(id).is_file()
    }

    pub fn put(&self, array: &StoredArray) -> Result<()> {
        array.save(&self.path_for(&array.id))
    }

    pub fn get(&self, id: &str) -> Result<StoredArray> {
        let path = self.path_for(id);
        let a = StoredArray::load(&path)?;
        if a.id != id {
            return Err(PreprocessError::Corrupt {
                path,
                reason: format!("stored id `{}` does not match `{id}`", a.id),
            });
        }
        Ok(a)
    }

    pub fn put_clip(&self, clip: &Clip) -> Result<()> {
        self.put(&clip.clone().into_stored())
    }

    pub fn get_clip(&self, id: &str) -> Result<Clip> {
        Clip::from_stored(self.get(id)?, &self.path_for(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use proptest::prelude::*;

    fn clip(id: &str, t: usize, len: usize) -> Clip {
        let mut frames = Array4::<f32>::zeros((t, 2, 2, 3));
        for i in 0..len {
            frames.slice_mut(ndarray::s![i, .., .., ..]).fill(i as f32 * 0.1 - 0.5);
        }
        Clip {
            source_id: id.into(),
            frames,
            mask: (0..t).map(|i| i < len).collect(),
            true_length: len,
        }
    }

    #[test]
    fn clip_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArrayStore::open(dir.path()).unwrap();
        let c = clip("case/01 a", 6, 4);
        store.put_clip(&c).unwrap();
        assert!(store.contains("case/01 a"));
        assert_eq!(store.get_clip("case/01 a").unwrap(), c);

        let path = store.path_for("case/01 a");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(store.get_clip("case/01 a"), Err(PreprocessError::Corrupt { .. })));
    }

    #[test]
    fn distinct_ids_distinct_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArrayStore::open(dir.path()).unwrap();
        assert_ne!(store.path_for("a/b"), store.path_for("a_b"));
        assert_ne!(store.path_for("a b"), store.path_for("a_b"));
    }

    proptest! {
        #[test]
        fn arbitrary_arrays_round_trip(id in "[a-z0-9]{1,8}", t in 1usize..5, d in 1usize..6,
                                       seed in any::<u32>()) {
            let data: Vec<f32> = (0..t * d).map(|i| ((i as u32).wrapping_mul(seed) as f32).sin()).collect();
            let a = StoredArray { id, dims: vec![t, d], true_length: t / 2, mask: (0..t).map(|i| i < t / 2).collect(), data };
            let mut buf = Vec::new();
            a.write_to(&mut buf).unwrap();
            prop_assert_eq!(StoredArray::read_from(&buf[..]).unwrap(), a);
        }
    }
}
