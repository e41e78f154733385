//! Self-labeling: class-agnostic detections from a seen-class model become
//! extra image-alignment targets wherever they do not overlap ground truth.
//!
//! Candidates go through, in order: a minimum size filter, an objectness
//! cutoff, suppression by any ground-truth box, and greedy NMS among the
//! survivors. Ground truth always wins; it is never removed or modified.

use serde::{Deserialize, Serialize};

use crate::alignment::{check_open_unit, check_unit, GroundTruthLabel};
use crate::geometry::{iou, BBox};
use crate::postprocess::nms;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfLabelConfig {
    pub min_width_px: f64,
    pub min_height_px: f64,
    pub objectness_cutoff: f64,
    /// Shared by the ground-truth suppression and the mutual NMS.
    pub merge_iou_threshold: f64,
}

impl Default for SelfLabelConfig {
    fn default() -> Self {
        SelfLabelConfig {
            min_width_px: 25.0,
            min_height_px: 25.0,
            objectness_cutoff: 0.3,
            merge_iou_threshold: 0.2,
        }
    }
}

impl SelfLabelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_width_px", self.min_width_px),
            ("min_height_px", self.min_height_px),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be > 0")));
            }
        }
        check_unit("objectness_cutoff", self.objectness_cutoff)?;
        check_open_unit("merge_iou_threshold", self.merge_iou_threshold)
    }

    /// Boxes must be strictly larger than the minimum in both directions.
    pub fn passes_size(&self, b: &BBox) -> bool {
        b.width() > self.min_width_px && b.height() > self.min_height_px
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfLabel {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_key: Option<String>,
}

impl SelfLabel {
    pub fn new(image_id: impl Into<String>, bbox: BBox, objectness: f64) -> Result<Self> {
        check_unit("objectness", objectness)?;
        Ok(SelfLabel {
            image_id: image_id.into(),
            bbox,
            objectness,
            embedding_key: None,
        })
    }
}

/// Selects the candidates of one image that become self-labels.
pub fn merge_self_labels(
    gts: &[GroundTruthLabel],
    candidates: &[SelfLabel],
    cfg: &SelfLabelConfig,
) -> Result<Vec<SelfLabel>> {
    cfg.validate()?;
    let image = gts
        .first()
        .map(|g| g.image_id.as_str())
        .or_else(|| candidates.first().map(|c| c.image_id.as_str()));
    if let Some(image) = image {
        let ids = gts
            .iter()
            .map(|g| &g.image_id)
            .chain(candidates.iter().map(|c| &c.image_id));
        if let Some(other) = ids.into_iter().find(|id| id.as_str() != image) {
            return Err(Error::invalid(format!(
                "self-label merge got labels from images {image:?} and {other:?}"
            )));
        }
    }
    for c in candidates {
        check_unit("candidate objectness", c.objectness)?;
    }

    let thr = cfg.merge_iou_threshold;
    let survivors: Vec<&SelfLabel> = candidates
        .iter()
        .filter(|c| cfg.passes_size(&c.bbox))
        .filter(|c| c.objectness >= cfg.objectness_cutoff)
        .filter(|c| gts.iter().all(|g| iou(&c.bbox, &g.bbox) <= thr))
        .collect();
    let boxes: Vec<BBox> = survivors.iter().map(|c| c.bbox).collect();
    let scores: Vec<f64> = survivors.iter().map(|c| c.objectness).collect();
    let keep = nms(&boxes, &scores, thr)?;
    Ok(keep.into_iter().map(|i| survivors[i].clone()).collect())
}
