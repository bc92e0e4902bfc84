//! Container file format shared by datasets, checkpoints and ensembles.
//!
//! Layout: 4-byte magic `LDAC`, u32 little-endian header length, a JSON
//! header, then one raw little-endian f64 buffer per tensor in header order.
//! The header carries `format_version`, a free-form `meta` object and the
//! tensor index (`name` + `shape`).

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"LDAC";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not a container file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated file: header says {expected} bytes, {got} available")]
    Truncated { expected: usize, got: usize },
    #[error("malformed header json: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor `{name}`: header shape {shape:?} disagrees with payload")]
    ShapeDisagreement { name: String, shape: Vec<usize> },
    #[error("tensor `{name}` not present in container")]
    MissingTensor { name: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// In-memory container: a JSON `meta` document plus named f64 tensors.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub meta: serde_json::Value,
    tensors: Vec<(String, Tensor<f64>)>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f64>, ContainerError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ContainerError::MissingTensor {
                name: name.to_string(),
            })
    }

    pub fn tensors(&self) -> &[(String, Tensor<f64>)] {
        &self.tensors
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let header = Header {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&(hjson.len() as u32).to_le_bytes())?;
        f.write_all(&hjson)?;
        for (_, t) in &self.tensors {
            let mut buf = Vec::with_capacity(t.numel() * 8);
            for &x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact_or(&mut f, &mut magic, 4)?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut lenb = [0u8; 4];
        read_exact_or(&mut f, &mut lenb, 4)?;
        let hlen = u32::from_le_bytes(lenb) as usize;
        let mut hjson = vec![0u8; hlen];
        read_exact_or(&mut f, &mut hjson, hlen)?;
        let header: Header = serde_json::from_slice(&hjson)?;
        if header.format_version != FORMAT_VERSION {
            return Err(ContainerError::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let mut buf = vec![0u8; numel * 8];
            f.read_exact(&mut buf).map_err(|_| ContainerError::ShapeDisagreement {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
            })?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(entry.shape.clone(), data).map_err(|_| {
                ContainerError::ShapeDisagreement {
                    name: entry.name.clone(),
                    shape: entry.shape,
                }
            })?;
            tensors.push((entry.name, t));
        }
        // Any trailing bytes mean the header and payload disagree.
        let mut rest = [0u8; 1];
        if f.read(&mut rest)? != 0 {
            return Err(ContainerError::ShapeDisagreement {
                name: "<trailing bytes>".into(),
                shape: vec![],
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], want: usize) -> Result<(), ContainerError> {
    r.read_exact(buf).map_err(|_| ContainerError::Truncated {
        expected: want,
        got: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ldac");
        let mut c = Container::new(serde_json::json!({"kind": "test", "seed": 42}));
        c.push("a", Tensor::from_fn(&[2, 3], |i| (i as f64).sin()));
        c.push("b", Tensor::scalar(-0.0));
        c.save(&path).unwrap();
        let back = Container::load(&path).unwrap();
        assert_eq!(back.meta["seed"], 42);
        assert_eq!(back.get("a").unwrap(), c.get("a").unwrap());
        assert_eq!(
            back.get("b").unwrap().data()[0].to_bits(),
            (-0.0f64).to_bits()
        );
    }

    #[test]
    fn corrupted_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ldac");
        let mut c = Container::new(serde_json::json!({}));
        c.push("a", Tensor::<f64>::ones(&[4]));
        c.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10] = b'}'; // mangle json
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Container::load(&path),
            Err(ContainerError::Header(_))
        ));
    }

    #[test]
    fn truncated_payload_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ldac");
        let mut c = Container::new(serde_json::json!({}));
        c.push("a", Tensor::<f64>::ones(&[8]));
        c.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(
            Container::load(&path),
            Err(ContainerError::ShapeDisagreement { .. })
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not.ldac");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            Container::load(&path),
            Err(ContainerError::BadMagic)
        ));
    }
}
