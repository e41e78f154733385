//! Embedding files.
//!
//! An embedding file is a JSON manifest:
//!
//! ```json
//! {"dim": 2, "names": ["cat", "dog"], "encoding": "inline", "vectors": [[1, 0], [0, 1]]}
//! {"dim": 512, "names": ["cat", "dog"], "encoding": "f32le", "data_path": "refs.f32"}
//! ```
//!
//! With `f32le` the vectors live in a sidecar file of little-endian 32-bit
//! floats, row-major, no header or padding. `data_path` is resolved relative
//! to the manifest's directory.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::fsutil::{read_to_string, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Vectors as JSON arrays inside the manifest.
    Inline,
    /// Vectors in a raw little-endian f32 sidecar. Values are narrowed to f32
    /// on save.
    F32le,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    dim: usize,
    names: Vec<String>,
    encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vectors: Option<Vec<Vec<f64>>>,
}

fn malformed(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: msg.to_string(),
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let rows = manifest.names.len();
    let dim = manifest.dim;
    if dim == 0 {
        return Err(malformed(path, "dim must be at least 1"));
    }
    let flat = match manifest.encoding {
        Encoding::Inline => {
            if manifest.data_path.is_some() {
                return Err(malformed(path, "inline encoding does not take data_path"));
            }
            let vectors = manifest
                .vectors
                .ok_or_else(|| malformed(path, "inline encoding requires \"vectors\""))?;
            if vectors.len() != rows {
                return Err(malformed(
                    path,
                    format!("{} names but {} vectors", rows, vectors.len()),
                ));
            }
            let mut flat = Vec::with_capacity(rows * dim);
            for (i, v) in vectors.into_iter().enumerate() {
                if v.len() != dim {
                    return Err(malformed(
                        path,
                        format!(
                            "row {i} ({:?}) has width {} but dim is {dim}",
                            manifest.names[i],
                            v.len()
                        ),
                    ));
                }
                flat.extend(v);
            }
            flat
        }
        Encoding::F32le => {
            if manifest.vectors.is_some() {
                return Err(malformed(path, "f32le encoding does not take inline vectors"));
            }
            let rel = manifest
                .data_path
                .ok_or_else(|| malformed(path, "f32le encoding requires \"data_path\""))?;
            let data = resolve(path, &rel);
            let bytes = std::fs::read(&data).map_err(|e| Error::io(&data, e))?;
            let expected = rows * dim * 4;
            if bytes.len() != expected {
                return Err(malformed(
                    &data,
                    format!(
                        "expected {expected} bytes for {rows}x{dim} f32 matrix, found {}",
                        bytes.len()
                    ),
                ));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
    };
    let vectors = Array2::from_shape_vec((rows, dim), flat).map_err(|e| malformed(path, e))?;
    EmbeddingSet::new(manifest.names, vectors).map_err(|e| malformed(path, e))
}

fn resolve(manifest: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    match manifest.parent() {
        Some(dir) => dir.join(rel),
        None => rel.to_path_buf(),
    }
}

/// Writes `set` to `path`. For [`Encoding::F32le`] the sidecar is written
/// next to the manifest with the extension `.f32`.
pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    let mut manifest = Manifest {
        dim: set.dim(),
        names: set.names().to_vec(),
        encoding,
        data_path: None,
        vectors: None,
    };
    match encoding {
        Encoding::Inline => {
            manifest.vectors = Some(set.vectors().rows().into_iter().map(|r| r.to_vec()).collect());
        }
        Encoding::F32le => {
            let sidecar = path.with_extension("f32");
            let mut bytes = Vec::with_capacity(set.len() * set.dim() * 4);
            for v in set.vectors().iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            write_atomic(&sidecar, &bytes)?;
            let name = sidecar
                .file_name()
                .map(PathBuf::from)
                .ok_or_else(|| Error::invalid(format!("bad embedding path {}", path.display())))?;
            manifest.data_path = Some(name);
        }
    }
    let mut text = serde_json::to_string(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
