//! JSONL formats read and written by the command-line tool.
//!
//! - dataset: `{"image_id", "width", "height", "labels": [{"box": [x1,y1,x2,y2], "class", "embedding_key"?}]}`
//! - anchors: `{"image_id", "anchors": [{"box", "objectness", "semantic": [...]} | {"box", "objectness", "semantic_ref": "row"}]}`
//! - detections: `{"image_id", "box", "class", "confidence"}`
//! - self-label candidates and outputs: `{"image_id", "box", "objectness", "embedding_key"?}`
//!
//! `semantic_ref` names a row of a sidecar embedding file. Every error
//! carries the file and 1-based line number.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alignment::{AnchorOutput, GroundTruthLabel};
use crate::datasplit::{DatasetIndex, ImageRecord};
use crate::embedding::EmbeddingSet;
use crate::fsutil::{read_to_string, write_atomic};
use crate::geometry::BBox;
use crate::postprocess::Detection;
use crate::selflabel::SelfLabel;
use crate::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

/// Parses every non-blank line of a JSONL file.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| parse_err(path, i + 1, e))
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabel {
    #[serde(rename = "box")]
    bbox: BBox,
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_key: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImage {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
    #[serde(default)]
    labels: Vec<RawLabel>,
}

/// Loads a dataset. Class names are the sorted set of names that appear.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let rows: Vec<(usize, RawImage)> = read_jsonl(path)?;
    let names: BTreeSet<&str> = rows
        .iter()
        .flat_map(|(_, r)| r.labels.iter().map(|l| l.class.as_str()))
        .collect();
    let class_names: Vec<String> = names.into_iter().map(String::from).collect();
    let index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut seen = HashMap::new();
    let mut images = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        if let Some(first) = seen.insert(r.image_id.clone(), *line) {
            return Err(parse_err(
                path,
                *line,
                format!("image {:?} already defined on line {first}", r.image_id),
            ));
        }
        let labels = r
            .labels
            .iter()
            .map(|l| GroundTruthLabel {
                image_id: r.image_id.clone(),
                bbox: l.bbox,
                class_index: index[l.class.as_str()],
                embedding_key: l.embedding_key.clone(),
            })
            .collect();
        images.push(ImageRecord {
            image_id: r.image_id.clone(),
            width: r.width,
            height: r.height,
            labels,
        });
    }
    DatasetIndex::new(images, class_names)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &DatasetIndex) -> Result<()> {
    let rows = ds.images.iter().map(|img| RawImage {
        image_id: img.image_id.clone(),
        width: img.width,
        height: img.height,
        labels: img
            .labels
            .iter()
            .map(|l| RawLabel {
                bbox: l.bbox,
                class: ds.class_names[l.class_index].clone(),
                embedding_key: l.embedding_key.clone(),
            })
            .collect(),
    });
    write_jsonl(path.as_ref(), rows)
}

/// A detection as stored on disk, with its class still a name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: String,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct DetectionFile {
    pub path: PathBuf,
    /// `(line, record)`
    pub records: Vec<(usize, DetectionRecord)>,
}

impl DetectionFile {
    /// Maps class names to indices into `class_names`.
    pub fn resolve(&self, class_names: &[String]) -> Result<Vec<Detection>> {
        let index: HashMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        self.records
            .iter()
            .map(|(line, r)| {
                let class_index = *index.get(r.class.as_str()).ok_or_else(|| {
                    parse_err(&self.path, *line, format!("unknown class {:?}", r.class))
                })?;
                Ok(Detection {
                    image_id: r.image_id.clone(),
                    bbox: r.bbox,
                    class_index,
                    confidence: r.confidence,
                })
            })
            .collect()
    }
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionFile> {
    let path = path.as_ref();
    let records: Vec<(usize, DetectionRecord)> = read_jsonl(path)?;
    for (line, r) in &records {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(parse_err(
                path,
                *line,
                format!("confidence {} outside [0, 1]", r.confidence),
            ));
        }
    }
    Ok(DetectionFile {
        path: path.to_path_buf(),
        records,
    })
}

pub fn save_detections(path: impl AsRef<Path>, dets: &[Detection], class_names: &[String]) -> Result<()> {
    let rows = dets
        .iter()
        .map(|d| {
            let class = class_names.get(d.class_index).ok_or_else(|| {
                Error::invalid(format!("detection class index {} has no name", d.class_index))
            })?;
            Ok(DetectionRecord {
                image_id: d.image_id.clone(),
                bbox: d.bbox,
                class: class.clone(),
                confidence: d.confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(path.as_ref(), rows)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnchor {
    #[serde(rename = "box")]
    bbox: BBox,
    objectness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semantic: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semantic_ref: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnchorImage {
    image_id: String,
    anchors: Vec<RawAnchor>,
}

/// Anchor outputs of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnchors {
    pub image_id: String,
    pub anchors: Vec<AnchorOutput>,
}

/// Loads an anchors file. `sidecar` supplies rows for `semantic_ref`
/// entries; when `expected_dim` is given every semantic must have that width.
pub fn load_anchors(
    path: impl AsRef<Path>,
    sidecar: Option<&EmbeddingSet>,
    expected_dim: Option<usize>,
) -> Result<Vec<ImageAnchors>> {
    let path = path.as_ref();
    let rows: Vec<(usize, RawAnchorImage)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, img)| {
            let anchors = img
                .anchors
                .into_iter()
                .enumerate()
                .map(|(k, a)| {
                    let at = |msg: String| parse_err(path, line, format!("anchor {k}: {msg}"));
                    let semantic = match (a.semantic, a.semantic_ref) {
                        (Some(v), None) => v,
                        (None, Some(key)) => {
                            let set = sidecar.ok_or_else(|| {
                                at(format!("semantic_ref {key:?} used but no sidecar embedding file given"))
                            })?;
                            set.row(&key)
                                .ok_or_else(|| at(format!("sidecar has no row {key:?}")))?
                                .to_vec()
                        }
                        _ => return Err(at("needs exactly one of semantic or semantic_ref".into())),
                    };
                    if let Some(dim) = expected_dim {
                        if semantic.len() != dim {
                            return Err(at(format!(
                                "semantic width {} does not match embedding dim {dim}",
                                semantic.len()
                            )));
                        }
                    }
                    AnchorOutput::new(a.bbox, a.objectness, semantic).map_err(|e| at(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ImageAnchors {
                image_id: img.image_id,
                anchors,
            })
        })
        .collect()
}

/// Writes anchors with inline semantics.
pub fn save_anchors(path: impl AsRef<Path>, images: &[ImageAnchors]) -> Result<()> {
    let rows = images.iter().map(|img| RawAnchorImage {
        image_id: img.image_id.clone(),
        anchors: img
            .anchors
            .iter()
            .map(|a| RawAnchor {
                bbox: a.bbox,
                objectness: a.objectness,
                semantic: Some(a.semantic.clone()),
                semantic_ref: None,
            })
            .collect(),
    });
    write_jsonl(path.as_ref(), rows)
}

pub fn load_self_labels(path: impl AsRef<Path>) -> Result<Vec<SelfLabel>> {
    let path = path.as_ref();
    let rows: Vec<(usize, SelfLabel)> = read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, s)| {
            if (0.0..=1.0).contains(&s.objectness) {
                Ok(s)
            } else {
                Err(parse_err(path, line, format!("objectness {} outside [0, 1]", s.objectness)))
            }
        })
        .collect()
}

pub fn save_self_labels(path: impl AsRef<Path>, labels: &[SelfLabel]) -> Result<()> {
    write_jsonl(path.as_ref(), labels)
}

/// One class name per line; blank lines and `#` comments are ignored.
pub fn load_class_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut out: Vec<String> = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let name = l.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        if out.iter().any(|n| n == name) {
            return Err(parse_err(path, i + 1, format!("class {name:?} listed twice")));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

/// A JSON object mapping class name to definition text.
pub fn load_definitions(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e))
}
