//! Self-describing tensor container.
//!
//! One binary format backs model checkpoints, ingested backbone weights and
//! the stylizer's fixed networks. Layout:
//!
//! ```text
//! magic   b"EMKT"
//! version u32 LE (currently 1)
//! hlen    u64 LE, byte length of the JSON header
//! header  JSON: { format_tag, kind, meta, tensors: [{name, shape}] }
//! data    tensor payloads, f32 LE, in header order
//! ```
//!
//! The header carries arbitrary JSON metadata (`meta`), so a checkpoint can
//! embed its model config, category names, normalization constants and
//! training history next to the raw parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMKT";
pub const VERSION: u32 = 1;
pub const FORMAT_TAG: &str = "emoctx.container.v1";

/// One named tensor: shape plus a flat row-major f32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_tag: String,
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<HeaderTensor>,
}

/// An in-memory container; see the module docs for the on-disk layout.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_string(),
            meta: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    /// Append a tensor. Panics if `data.len()` disagrees with `shape`.
    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        let expect: usize = shape.iter().product();
        assert_eq!(
            expect,
            data.len(),
            "tensor '{name}' shape/payload mismatch"
        );
        self.tensors.push(TensorEntry {
            name: name.to_string(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensors(&self) -> &[TensorEntry] {
        &self.tensors
    }

    /// Drop a tensor by name; returns whether it was present.
    pub fn remove(&mut self, name: &str) -> bool {
        let before = self.tensors.len();
        self.tensors.retain(|t| t.name != name);
        self.tensors.len() != before
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = Header {
            format_tag: FORMAT_TAG.to_string(),
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| HeaderTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serialization");
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
        w.write_all(&header_bytes)?;
        for t in &self.tensors {
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for &v in &t.data {
                buf.write_f32::<LittleEndian>(v)?;
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(mut r: impl Read, origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::BadCheckpoint {
            path: origin.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(origin, e))?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(origin, e))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported container version {version}")));
        }
        let hlen = r
            .read_u64::<LittleEndian>()
            .map_err(|e| Error::io(origin, e))? as usize;
        let mut header_bytes = vec![0u8; hlen];
        r.read_exact(&mut header_bytes)
            .map_err(|e| Error::io(origin, e))?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| bad(&format!("bad header JSON: {e}")))?;
        if header.format_tag != FORMAT_TAG {
            return Err(bad(&format!("unknown format tag '{}'", header.format_tag)));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for ht in header.tensors {
            let n: usize = ht.shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|e| Error::io(origin, e))?;
            let mut data = Vec::with_capacity(n);
            let mut cursor = &buf[..];
            for _ in 0..n {
                data.push(
                    cursor
                        .read_f32::<LittleEndian>()
                        .map_err(|e| Error::io(origin, e))?,
                );
            }
            tensors.push(TensorEntry {
                name: ht.name,
                shape: ht.shape,
                data,
            });
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn load_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        Self::read_from(bytes, &PathBuf::from(origin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Container::new("weights");
        c.meta = serde_json::json!({"backbone": "resnet18"});
        c.push("a.weight", vec![2, 3], vec![1.0, 2.0, 3.0, -4.5, 0.25, 6.0]);
        c.push("a.bias", vec![2], vec![0.5, -0.5]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Container::load_bytes(&buf, "mem").unwrap();
        assert_eq!(back.kind, "weights");
        assert_eq!(back.meta["backbone"], "resnet18");
        assert_eq!(back.tensors(), c.tensors());
    }

    #[test]
    fn rejects_bad_magic() {
        let err = Container::load_bytes(b"NOPE....", "mem").unwrap_err();
        assert!(matches!(err, Error::BadCheckpoint { .. }));
    }

    #[test]
    fn shape_payload_consistency_enforced() {
        let mut c = Container::new("weights");
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            c.push("x", vec![2, 2], vec![1.0]);
        }));
        assert!(r.is_err());
    }
}
