//! Reader/writer for the `safetensors` layout (F32 tensors only).
//!
//! `u64` little-endian header length, a JSON header mapping tensor names to
//! `{dtype, shape, data_offsets}`, then the raw little-endian tensor bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

pub fn parse(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, String> {
    if bytes.len() < 8 {
        return Err("file shorter than header length".into());
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let header = bytes.get(8..8 + n).ok_or("truncated header")?;
    let body = &bytes[8 + n..];
    let raw: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(header).map_err(|e| format!("header: {e}"))?;
    let mut out = BTreeMap::new();
    for (name, value) in raw {
        if name == "__metadata__" {
            continue;
        }
        let entry: Entry = serde_json::from_value(value).map_err(|e| format!("{name}: {e}"))?;
        if entry.dtype != "F32" {
            return Err(format!("{name}: unsupported dtype {}", entry.dtype));
        }
        let [start, end] = entry.data_offsets;
        let chunk = body.get(start..end).ok_or_else(|| format!("{name}: data out of range"))?;
        let count: usize = entry.shape.iter().product();
        if chunk.len() != count * 4 {
            return Err(format!("{name}: {} bytes for shape {:?}", chunk.len(), entry.shape));
        }
        let data = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(name, Tensor { shape: entry.shape, data });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<BTreeMap<String, Tensor>, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&bytes)
}

pub fn write(path: &Path, tensors: &BTreeMap<String, Tensor>) -> std::io::Result<()> {
    let mut header = BTreeMap::new();
    let mut offset = 0;
    for (name, t) in tensors {
        let len = t.data.len() * 4;
        header.insert(
            name.clone(),
            Entry {
                dtype: "F32".into(),
                shape: t.shape.clone(),
                data_offsets: [offset, offset + len],
            },
        );
        offset += len;
    }
    let mut json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    while json.len() % 8 != 0 {
        json.push(b' ');
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    for t in tensors.values() {
        for v in &t.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.safetensors");
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Tensor { shape: vec![2, 3], data: (0..6).map(|i| i as f32).collect() });
        m.insert("b".to_string(), Tensor { shape: vec![1], data: vec![-1.5] });
        write(&p, &m).unwrap();
        assert_eq!(read(&p).unwrap(), m);
        let bytes = std::fs::read(&p).unwrap();
        assert!(parse(&bytes[..bytes.len() - 2]).is_err());
        assert!(parse(&bytes[..4]).is_err());
    }
}
