//! Self-describing container for named float arrays.
//!
//! Both the harmonization model and the transformer weights are persisted in
//! this format: a magic tag, a JSON manifest listing named arrays with their
//! shapes and a small string-valued metadata map, followed by the
//! concatenated little-endian `f64` payloads in manifest order. Round trips
//! are bit-exact.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"NARRAY01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an array container (bad magic)")]
    BadMagic,
    #[error("unsupported container format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("container kind mismatch: expected `{expected}`, found `{found}`")]
    KindMismatch { expected: String, found: String },
    #[error("missing array `{0}` in container")]
    MissingArray(String),
    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing metadata key `{0}`")]
    MissingMeta(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    /// What the container holds, e.g. `"harmonizer"` or `"brainage-model"`.
    kind: String,
    /// Version of the payload schema for that kind.
    kind_version: u32,
    meta: BTreeMap<String, String>,
    arrays: Vec<ArrayEntry>,
}

/// An ordered collection of named `f64` arrays plus string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    kind: String,
    kind_version: u32,
    meta: BTreeMap<String, String>,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl ArrayContainer {
    pub fn new(kind: &str, kind_version: u32) -> Self {
        Self {
            kind: kind.to_string(),
            kind_version,
            meta: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn kind_version(&self) -> u32 {
        self.kind_version
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str, ContainerError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ContainerError::MissingMeta(key.to_string()))
    }

    pub fn meta_opt(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.arrays.push((name.to_string(), shape, values));
    }

    /// Fetch an array by name, checking its shape.
    pub fn get(&self, name: &str, expected_shape: &[usize]) -> Result<&[f64], ContainerError> {
        let (_, shape, values) = self
            .arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| ContainerError::MissingArray(name.to_string()))?;
        if shape != expected_shape {
            return Err(ContainerError::ShapeMismatch {
                name: name.to_string(),
                expected: expected_shape.to_vec(),
                found: shape.clone(),
            });
        }
        Ok(values)
    }

    /// Fetch an array by name without constraining the shape.
    pub fn get_any(&self, name: &str) -> Result<(&[usize], &[f64]), ContainerError> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
            .ok_or_else(|| ContainerError::MissingArray(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.kind != kind {
            return Err(ContainerError::KindMismatch {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ContainerError> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            kind_version: self.kind_version,
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, s, _)| ArrayEntry {
                    name: n.clone(),
                    shape: s.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&manifest)
            .map_err(|e| ContainerError::Corrupt(format!("manifest encode: {e}")))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, _, values) in &self.arrays {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ContainerError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| ContainerError::Corrupt("truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)
            .map_err(|_| ContainerError::Corrupt("truncated header length".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        if header_len > 64 * 1024 * 1024 {
            return Err(ContainerError::Corrupt("implausible header length".into()));
        }
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)
            .map_err(|_| ContainerError::Corrupt("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&header)
            .map_err(|e| ContainerError::Corrupt(format!("manifest decode: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion(manifest.format_version));
        }
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        let mut buf = [0u8; 8];
        for entry in &manifest.arrays {
            let count: usize = entry.shape.iter().product();
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut buf).map_err(|_| {
                    ContainerError::Corrupt(format!("truncated payload in `{}`", entry.name))
                })?;
                values.push(f64::from_le_bytes(buf));
            }
            arrays.push((entry.name.clone(), entry.shape.clone(), values));
        }
        let mut trailer = [0u8; 1];
        if r.read(&mut trailer)? != 0 {
            return Err(ContainerError::Corrupt("trailing bytes after payload".into()));
        }
        Ok(Self {
            kind: manifest.kind,
            kind_version: manifest.kind_version,
            meta: manifest.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ArrayContainer {
        let mut c = ArrayContainer::new("test-kind", 3);
        c.set_meta("note", "hello");
        c.push("a", vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300]);
        c.push("b", vec![3], vec![0.1, 0.2, 0.30000000000000004]);
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let d = ArrayContainer::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(c, d);
        let (_, v) = d.get_any("b").unwrap();
        assert_eq!(v[2].to_bits(), 0.30000000000000004f64.to_bits());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 11);
        let err = ArrayContainer::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, ContainerError::Corrupt(_)), "{err}");
    }

    #[test]
    fn bad_magic_is_an_error() {
        let buf = b"NOTMAGIC........".to_vec();
        assert!(matches!(
            ArrayContainer::read_from(&mut buf.as_slice()),
            Err(ContainerError::BadMagic)
        ));
    }

    #[test]
    fn shape_mismatch_names_the_array() {
        let c = sample();
        let err = c.get("a", &[2, 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`a`"), "{msg}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(ArrayContainer::read_from(&mut buf.as_slice()).is_err());
    }
}
