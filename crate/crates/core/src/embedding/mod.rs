//! Class reference embeddings and the similarity machinery shared by training
//! and inference.
//!
//! Detector semantic outputs are compared to reference embeddings with cosine
//! similarity, scaled by `e^tau`, and normalized with a row-wise softmax.

mod io;
mod remote;

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{load_embeddings, save_embeddings, Encoding};
pub use remote::{fetch_embeddings, EncoderClient};

/// Embedding width of the ViT-B/32 CLIP encoder.
pub const DEFAULT_DIM: usize = 512;

/// Named rows of equal-width, non-zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    names: Vec<String>,
    vectors: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(names: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if names.len() != vectors.nrows() {
            return Err(Error::shape(format!(
                "{} names but {} vectors",
                names.len(),
                vectors.nrows()
            )));
        }
        if vectors.ncols() == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        let mut seen = HashSet::with_capacity(names.len());
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate embedding name {name:?}")));
            }
        }
        for (i, row) in vectors.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "embedding row {i} ({:?}) has a non-finite entry",
                    names[i]
                )));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!(
                    "embedding row {i} ({:?}) has zero norm",
                    names[i]
                )));
            }
        }
        Ok(EmbeddingSet { names, vectors })
    }

    /// Builds a set from `(name, vector)` pairs, checking that widths agree.
    pub fn from_rows<S, I>(rows: I) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, Vec<f64>)>,
    {
        let mut names = Vec::new();
        let mut flat = Vec::new();
        let mut dim = None;
        for (i, (name, v)) in rows.into_iter().enumerate() {
            let name = name.into();
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::shape(format!(
                        "row {i} ({name:?}) has width {} but earlier rows have width {d}",
                        v.len()
                    )))
                }
                _ => {}
            }
            names.push(name);
            flat.extend(v);
        }
        let dim = dim.ok_or_else(|| Error::invalid("embedding set has no rows"))?;
        let vectors = Array2::from_shape_vec((names.len(), dim), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        EmbeddingSet::new(names, vectors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, name: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.index_of(name).map(|i| self.vectors.row(i))
    }

    /// Replaces the row names, keeping the vectors.
    pub fn renamed(self, names: Vec<String>) -> Result<Self> {
        EmbeddingSet::new(names, self.vectors)
    }

    /// Keeps only the named rows, in the order given.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| Error::invalid(format!("no embedding named {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::new(names.to_vec(), self.vectors.select(Axis(0), &idx))
    }
}

/// A class prompt, optionally disambiguated by a dictionary definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub class_name: String,
    pub definition: Option<String>,
}

impl PromptSpec {
    pub fn new(class_name: impl Into<String>) -> Self {
        PromptSpec {
            class_name: class_name.into(),
            definition: None,
        }
    }

    pub fn with_definition(class_name: impl Into<String>, definition: impl Into<String>) -> Self {
        PromptSpec {
            class_name: class_name.into(),
            definition: Some(definition.into()),
        }
    }
}

pub fn build_prompt(spec: &PromptSpec) -> Result<String> {
    if spec.class_name.trim().is_empty() {
        return Err(Error::invalid("prompt class name is empty"));
    }
    match &spec.definition {
        None => Ok(format!("A photo of {} in the scene", spec.class_name)),
        Some(d) if d.trim().is_empty() => Err(Error::invalid(format!(
            "definition for {:?} is empty",
            spec.class_name
        ))),
        Some(d) => Ok(format!("a photo of {}, {}, in the scene", spec.class_name, d)),
    }
}

/// Softmax temperature stored as its exponent: logits are scaled by `e^tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    /// Value fixed for final training and all inference.
    pub const DEFAULT_TAU: f64 = 3.91;

    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::invalid(format!("temperature {tau} is not finite")));
        }
        let m = tau.exp();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature {tau} gives a multiplier outside (0, inf)"
            )));
        }
        Ok(Temperature(tau))
    }

    pub fn tau(self) -> f64 {
        self.0
    }

    pub fn multiplier(self) -> f64 {
        self.0.exp()
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(Self::DEFAULT_TAU)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Temperature::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

pub(crate) fn row_norms(m: ArrayView2<'_, f64>, side: &str) -> Result<Vec<f64>> {
    m.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let n = row.dot(&row).sqrt();
            if n == 0.0 {
                Err(Error::invalid(format!("{side} row {i} has zero norm")))
            } else if !n.is_finite() {
                Err(Error::invalid(format!("{side} row {i} is not finite")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Cosine similarity between every row of `m` and every row of `t`.
pub fn cosine_similarity(m: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if m.ncols() != t.ncols() {
        return Err(Error::shape(format!(
            "semantic width {} does not match reference width {}",
            m.ncols(),
            t.ncols()
        )));
    }
    let mn = row_norms(m, "semantic")?;
    let tn = row_norms(t, "reference")?;
    // entry by entry, so a row's values do not depend on the batch it is in
    let s = Array2::from_shape_fn((m.nrows(), t.nrows()), |(i, j)| {
        (m.row(i).dot(&t.row(j)) / (mn[i] * tn[j])).clamp(-1.0, 1.0)
    });
    Ok(s)
}

/// Row-wise softmax of `s * e^tau`, computed with max subtraction.
pub fn temperatured_softmax(s: ArrayView2<'_, f64>, temp: Temperature) -> Result<Array2<f64>> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input has a non-finite entry"));
    }
    let scale = temp.multiplier();
    let mut out = s.mapv(|v| v * scale);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Row-wise `log softmax(s * e^tau)`.
pub(crate) fn log_softmax_row(row: &[f64], scale: f64) -> Vec<f64> {
    let max = row.iter().map(|v| v * scale).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v * scale - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v * scale - lse).collect()
}
