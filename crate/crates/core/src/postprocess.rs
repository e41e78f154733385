//! Turns raw anchor outputs into final detections.
//!
//! Every variant shares the same front half: a very low objectness cutoff,
//! class confidences from the temperatured softmax of cosine similarity
//! against the reference embeddings, and a cutoff on
//! `objectness * max_confidence`. The variants differ in which score orders
//! the (class-agnostic) NMS and which score is reported:
//!
//! | variant          | NMS score          | final confidence   |
//! |------------------|--------------------|--------------------|
//! | `YoloPost`       | objectness * sim   | objectness * sim   |
//! | `ZsdPost`        | sim                | sim                |
//! | `ZsdPostPlus`    | objectness * sim   | sim                |

use std::cmp::Ordering;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::alignment::{check_open_unit, check_unit, AnchorOutput};
use crate::embedding::{cosine_similarity, temperatured_softmax, EmbeddingSet, Temperature};
use crate::geometry::{iou, BBox};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[serde(rename = "yolo")]
    YoloPost,
    #[serde(rename = "zsd")]
    ZsdPost,
    #[serde(rename = "zsd-plus")]
    ZsdPostPlus,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::YoloPost => "yolo",
            Variant::ZsdPost => "zsd",
            Variant::ZsdPostPlus => "zsd-plus",
        }
    }

    fn nms_score(self, objectness: f64, sim: f64) -> f64 {
        match self {
            Variant::ZsdPost => sim,
            Variant::YoloPost | Variant::ZsdPostPlus => objectness * sim,
        }
    }

    fn final_score(self, objectness: f64, sim: f64) -> f64 {
        match self {
            Variant::YoloPost => objectness * sim,
            Variant::ZsdPost | Variant::ZsdPostPlus => sim,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yolo" => Ok(Variant::YoloPost),
            "zsd" => Ok(Variant::ZsdPost),
            "zsd-plus" => Ok(Variant::ZsdPostPlus),
            other => Err(Error::invalid(format!(
                "unknown variant {other:?} (expected yolo, zsd or zsd-plus)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub variant: Variant,
    pub objectness_cutoff: f64,
    pub confidence_cutoff: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub tau: Temperature,
}

impl PostprocessConfig {
    /// Detection cap for ZSD mAP runs.
    pub const MAX_DET_ZSD: usize = 15;
    /// Detection cap for GZSD runs.
    pub const MAX_DET_GZSD: usize = 45;
    /// Detection cap for Recall@100 runs.
    pub const MAX_DET_RECALL: usize = 100;

    pub fn zsd() -> Self {
        PostprocessConfig {
            variant: Variant::ZsdPost,
            objectness_cutoff: 0.001,
            confidence_cutoff: 0.1,
            nms_iou: 0.4,
            max_detections: Self::MAX_DET_ZSD,
            tau: Temperature::default(),
        }
    }

    pub fn gzsd() -> Self {
        PostprocessConfig {
            max_detections: Self::MAX_DET_GZSD,
            ..Self::zsd()
        }
    }

    pub fn recall() -> Self {
        PostprocessConfig {
            max_detections: Self::MAX_DET_RECALL,
            ..Self::zsd()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("objectness_cutoff", self.objectness_cutoff)?;
        check_unit("confidence_cutoff", self.confidence_cutoff)?;
        check_open_unit("nms_iou", self.nms_iou)?;
        if self.max_detections == 0 {
            return Err(Error::invalid("max_detections must be at least 1"));
        }
        Ok(())
    }
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self::zsd()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_index: usize,
    pub confidence: f64,
}

/// Descending by score; equal scores keep input order.
fn by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Greedy non-maximum suppression. Returns kept indices in descending score
/// order; a box is suppressed when its IoU with a kept box exceeds
/// `iou_thresh`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::shape(format!(
            "{} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("score {i} is not finite")));
    }
    let order = by_score_desc(scores);
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

/// Per-anchor class assignment after the objectness cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    anchor: usize,
    class_index: usize,
    sim: f64,
}

/// Post-processes the anchors of one image.
pub fn postprocess(
    image_id: &str,
    anchors: &[AnchorOutput],
    refs: &EmbeddingSet,
    cfg: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(Error::invalid("reference embedding set is empty"));
    }
    for (i, a) in anchors.iter().enumerate() {
        a.validate()
            .map_err(|e| Error::invalid(format!("anchor {i}: {e}")))?;
        if a.semantic.len() != refs.dim() {
            return Err(Error::shape(format!(
                "anchor {i} semantic width {} does not match reference width {}",
                a.semantic.len(),
                refs.dim()
            )));
        }
    }

    let live: Vec<usize> = (0..anchors.len())
        .filter(|&i| anchors[i].objectness >= cfg.objectness_cutoff)
        .collect();
    if live.is_empty() {
        return Ok(Vec::new());
    }
    let dim = refs.dim();
    let flat: Vec<f64> = live
        .iter()
        .flat_map(|&i| anchors[i].semantic.iter().copied())
        .collect();
    let sem = Array2::from_shape_vec((live.len(), dim), flat)
        .map_err(|e| Error::shape(e.to_string()))?;
    let cos = cosine_similarity(sem.view(), refs.vectors())
        .map_err(|e| Error::invalid(format!("anchors of {image_id:?}: {e}")))?;
    let z = temperatured_softmax(cos.view(), cfg.tau)?;

    let scored: Vec<Scored> = live
        .iter()
        .enumerate()
        .filter_map(|(row, &anchor)| {
            let (class_index, sim) = z
                .row(row)
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                });
            let gate = anchors[anchor].objectness * sim;
            (gate >= cfg.confidence_cutoff).then_some(Scored {
                anchor,
                class_index,
                sim,
            })
        })
        .collect();

    let boxes: Vec<BBox> = scored.iter().map(|s| anchors[s.anchor].bbox).collect();
    let nms_scores: Vec<f64> = scored
        .iter()
        .map(|s| cfg.variant.nms_score(anchors[s.anchor].objectness, s.sim))
        .collect();
    let kept = nms(&boxes, &nms_scores, cfg.nms_iou)?;

    let mut dets: Vec<Detection> = kept
        .into_iter()
        .map(|k| {
            let s = scored[k];
            Detection {
                image_id: image_id.to_string(),
                bbox: anchors[s.anchor].bbox,
                class_index: s.class_index,
                confidence: cfg
                    .variant
                    .final_score(anchors[s.anchor].objectness, s.sim),
            }
        })
        .collect();
    // stable: equal confidences keep NMS order
    dets.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(Ordering::Equal)
    });
    dets.truncate(cfg.max_detections);
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn nms_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[a], &[0.3], 0.4).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.8, 0.9], 0.4).unwrap(), vec![1]);
        let b = bx(50.0, 50.0, 60.0, 60.0);
        assert_eq!(nms(&[a, b], &[0.2, 0.7], 0.4).unwrap(), vec![1, 0]);
        assert_eq!(nms(&[a, a], &[0.5, 0.5], 0.4).unwrap(), vec![0]);
        assert!(nms(&[a], &[0.1, 0.2], 0.4).is_err());
        assert!(nms(&[a], &[f64::NAN], 0.4).is_err());
    }

    #[test]
    fn nms_threshold_is_strict() {
        // IoU exactly 0.5: not suppressed at 0.5
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(0.0, 0.0, 10.0, 5.0);
        assert_eq!(nms(&[a, b], &[0.9, 0.8], 0.5).unwrap(), vec![0, 1]);
        assert_eq!(nms(&[a, b], &[0.9, 0.8], 0.49).unwrap(), vec![0]);
    }

    /// Two unit references in 2-D; a semantic at angle theta from ref 0.
    fn refs() -> EmbeddingSet {
        EmbeddingSet::from_rows([("u0", vec![1.0, 0.0]), ("u1", vec![0.0, 1.0])]).unwrap()
    }

    fn max_sim(semantic: &[f64], tau: Temperature) -> f64 {
        let m = Array2::from_shape_vec((1, 2), semantic.to_vec()).unwrap();
        let z = temperatured_softmax(
            cosine_similarity(m.view(), refs().vectors()).unwrap().view(),
            tau,
        )
        .unwrap();
        z.iter().copied().fold(0.0, f64::max)
    }

    #[test]
    fn objectness_cutoff_applies_first() {
        let a = AnchorOutput::new(bx(0.0, 0.0, 10.0, 10.0), 0.0005, vec![1.0, 0.0]).unwrap();
        let out = postprocess("i", &[a], &refs(), &PostprocessConfig::zsd()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn final_confidence_per_variant() {
        // choose tau so softmax max is exactly representable enough to reason about
        let cfg = PostprocessConfig::zsd();
        let sem = vec![1.0, 0.2];
        let s = max_sim(&sem, cfg.tau);
        let a = AnchorOutput::new(bx(0.0, 0.0, 10.0, 10.0), 0.9, sem).unwrap();
        let zsd = postprocess("i", &[a.clone()], &refs(), &cfg).unwrap();
        assert_eq!(zsd.len(), 1);
        assert_eq!(zsd[0].confidence, s);
        assert_eq!(zsd[0].class_index, 0);
        let yolo = postprocess("i", &[a], &refs(), &cfg.with_variant(Variant::YoloPost)).unwrap();
        assert_eq!(yolo[0].confidence, 0.9 * s);
    }

    #[test]
    fn gate_uses_product() {
        // sim ~ 0.5 with orthogonal-to-both semantic; objectness 0.15 -> gate 0.075 < 0.1
        let a = AnchorOutput::new(bx(0.0, 0.0, 10.0, 10.0), 0.15, vec![1.0, 1.0]).unwrap();
        assert!(postprocess("i", &[a.clone()], &refs(), &PostprocessConfig::zsd())
            .unwrap()
            .is_empty());
        let b = AnchorOutput { objectness: 0.25, ..a };
        assert_eq!(
            postprocess("i", &[b], &refs(), &PostprocessConfig::zsd()).unwrap()[0].confidence,
            0.5
        );
    }

    #[test]
    fn max_detections_caps_output() {
        let anchors: Vec<AnchorOutput> = (0..20)
            .map(|k| {
                let x = k as f64 * 20.0;
                let t = k as f64 / 40.0;
                AnchorOutput::new(bx(x, 0.0, x + 10.0, 10.0), 0.9, vec![1.0, t]).unwrap()
            })
            .collect();
        let out = postprocess("i", &anchors, &refs(), &PostprocessConfig::zsd()).unwrap();
        assert_eq!(out.len(), 15);
        // smaller t means more similar to u0, so the first 15 anchors win
        for (k, d) in out.iter().enumerate() {
            assert_eq!(d.bbox.x1(), k as f64 * 20.0);
        }
        for w in out.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }
    }

    #[test]
    fn zsd_nms_ignores_objectness() {
        // overlapping pair: A has high objectness but lower similarity
        let a = AnchorOutput::new(bx(0.0, 0.0, 10.0, 10.0), 0.95, vec![1.0, 0.5]).unwrap();
        let b = AnchorOutput::new(bx(1.0, 0.0, 11.0, 10.0), 0.4, vec![1.0, 0.1]).unwrap();
        let cfg = PostprocessConfig::zsd();
        let zsd = postprocess("i", &[a.clone(), b.clone()], &refs(), &cfg).unwrap();
        assert_eq!(zsd.len(), 1);
        assert_eq!(zsd[0].bbox, b.bbox);
        let plus = postprocess("i", &[a.clone(), b], &refs(), &cfg.with_variant(Variant::ZsdPostPlus))
            .unwrap();
        assert_eq!(plus.len(), 1);
        assert_eq!(plus[0].bbox, a.bbox);
        assert_eq!(plus[0].confidence, max_sim(&[1.0, 0.5], cfg.tau));
    }

    #[test]
    fn errors() {
        let a = AnchorOutput::new(bx(0.0, 0.0, 10.0, 10.0), 0.9, vec![1.0, 0.0, 0.0]).unwrap();
        let err = postprocess("i", &[a], &refs(), &PostprocessConfig::zsd()).unwrap_err();
        assert!(err.to_string().contains("width 3") && err.to_string().contains("width 2"));
        let bad = PostprocessConfig {
            max_detections: 0,
            ..PostprocessConfig::zsd()
        };
        assert!(postprocess("i", &[], &refs(), &bad).is_err());
    }

    #[test]
    fn variant_parsing() {
        for v in [Variant::YoloPost, Variant::ZsdPost, Variant::ZsdPostPlus] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
        assert!("fast".parse::<Variant>().is_err());
    }
}
