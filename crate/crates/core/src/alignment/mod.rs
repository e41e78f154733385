//! Training-side class alignment.
//!
//! Positive anchors are selected by IoU against the ground-truth boxes; their
//! semantic outputs are then aligned with class text embeddings (softmax NLL)
//! and with per-box image embeddings (L1), and the two losses are combined
//! with fixed weights. Analytic gradients with respect to the semantic outputs
//! are provided so the kernels can be dropped into an external training loop.

mod gradcheck;
mod loss;

use serde::{Deserialize, Serialize};

use crate::embedding::Temperature;
use crate::geometry::{iou, BBox};
use crate::{Error, Result};

pub use gradcheck::{finite_diff_check, run_gradient_suite, GradcheckReport};
pub use loss::{
    dual_loss, dual_loss_with_grad, image_loss, image_loss_grad, text_loss, text_loss_grad,
    DualLossBatch, DualLossOutput,
};

/// One detector anchor after box decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorOutput {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
    pub semantic: Vec<f64>,
}

impl AnchorOutput {
    pub fn new(bbox: BBox, objectness: f64, semantic: Vec<f64>) -> Result<Self> {
        let a = AnchorOutput {
            bbox,
            objectness,
            semantic,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.objectness) {
            return Err(Error::invalid(format!(
                "objectness {} outside [0, 1]",
                self.objectness
            )));
        }
        if self.semantic.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("semantic vector has a non-finite entry"));
        }
        Ok(())
    }
}

/// A class-labelled ground-truth instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_index: usize,
    /// Key of this box's image-crop embedding, if one was computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_key: Option<String>,
}

impl GroundTruthLabel {
    pub fn new(image_id: impl Into<String>, bbox: BBox, class_index: usize) -> Self {
        GroundTruthLabel {
            image_id: image_id.into(),
            bbox,
            class_index,
            embedding_key: None,
        }
    }

    pub fn with_embedding_key(mut self, key: impl Into<String>) -> Self {
        self.embedding_key = Some(key.into());
        self
    }
}

/// Positive anchors and the label each one is aligned to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    /// `(anchor_index, label_index)`, in increasing anchor order.
    pub pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn anchors(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn label_of(&self, anchor: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&anchor, |p| p.0)
            .ok()
            .map(|i| self.pairs[i].1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_text: f64,
    pub w_image: f64,
    pub tau: Temperature,
    pub positive_iou_threshold: f64,
}

impl LossConfig {
    pub const DEFAULT_W_TEXT: f64 = 1.05;
    pub const DEFAULT_W_IMAGE: f64 = 1.21;
    pub const DEFAULT_POSITIVE_IOU: f64 = 0.14671;

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_text", self.w_text), ("w_image", self.w_image)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        check_open_unit("positive_iou_threshold", self.positive_iou_threshold)
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_text: Self::DEFAULT_W_TEXT,
            w_image: Self::DEFAULT_W_IMAGE,
            tau: Temperature::default(),
            positive_iou_threshold: Self::DEFAULT_POSITIVE_IOU,
        }
    }
}

pub(crate) fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")))
    }
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must lie in [0, 1]")))
    }
}

/// Marks anchor `i` positive when its best IoU with any label strictly
/// exceeds `threshold`, pairing it with that label (lowest index on ties).
pub fn match_anchors(
    anchors: &[AnchorOutput],
    labels: &[GroundTruthLabel],
    threshold: f64,
) -> Result<MatchResult> {
    check_open_unit("positive IoU threshold", threshold)?;
    let mut pairs = Vec::new();
    for (i, a) in anchors.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in labels.iter().enumerate() {
            let v = iou(&a.bbox, &g.bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            if v > threshold {
                pairs.push((i, j));
            }
        }
    }
    Ok(MatchResult { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(x1: f64, y1: f64, x2: f64, y2: f64) -> AnchorOutput {
        AnchorOutput::new(BBox::new(x1, y1, x2, y2).unwrap(), 0.5, vec![1.0]).unwrap()
    }

    fn label(x1: f64, y1: f64, x2: f64, y2: f64) -> GroundTruthLabel {
        GroundTruthLabel::new("img", BBox::new(x1, y1, x2, y2).unwrap(), 0)
    }

    #[test]
    fn exact_box_matches() {
        let m = match_anchors(&[anchor(0.0, 0.0, 10.0, 10.0)], &[label(0.0, 0.0, 10.0, 10.0)], 0.14671)
            .unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn just_below_default_threshold() {
        // IoU 25/175 = 0.142857 < 0.14671
        let m = match_anchors(
            &[anchor(0.0, 0.0, 10.0, 10.0)],
            &[label(5.0, 5.0, 15.0, 15.0)],
            LossConfig::DEFAULT_POSITIVE_IOU,
        )
        .unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn pairs_with_best_label() {
        // anchor (0,0,10,10): label 0 IoU 0.3, label 1 IoU 0.6
        let a = anchor(0.0, 0.0, 10.0, 10.0);
        let l0 = label(0.0, 0.0, 10.0, 3.0);
        let l1 = label(0.0, 0.0, 10.0, 6.0);
        assert!((iou(&a.bbox, &l0.bbox) - 0.3).abs() < 1e-12);
        assert!((iou(&a.bbox, &l1.bbox) - 0.6).abs() < 1e-12);
        let m = match_anchors(&[a], &[l0, l1], 0.14671).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!(m.label_of(0), Some(1));
    }

    #[test]
    fn ties_go_to_lowest_label() {
        let m = match_anchors(
            &[anchor(0.0, 0.0, 10.0, 10.0)],
            &[label(0.0, 0.0, 10.0, 5.0), label(0.0, 5.0, 10.0, 10.0)],
            0.1,
        )
        .unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn no_labels_no_positives() {
        let m = match_anchors(&[anchor(0.0, 0.0, 1.0, 1.0)], &[], 0.5).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.label_of(0), None);
    }

    #[test]
    fn threshold_validated() {
        assert!(match_anchors(&[], &[], 0.0).is_err());
        assert!(match_anchors(&[], &[], 1.0).is_err());
    }

    #[test]
    fn loss_config_defaults_and_validation() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.tau.tau(), 3.91);
        cfg.validate().unwrap();
        assert!(LossConfig { w_text: -1.0, ..cfg }.validate().is_err());
        assert!(LossConfig { positive_iou_threshold: 1.5, ..cfg }.validate().is_err());
    }

    #[test]
    fn anchor_validation() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(AnchorOutput::new(b, 1.2, vec![1.0]).is_err());
        assert!(AnchorOutput::new(b, 0.2, vec![f64::NAN]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64)
                .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
        }

        proptest! {
            #[test]
            fn permutation_invariant(
                anchors in prop::collection::vec(arb_box(), 0..20),
                labels in prop::collection::vec(arb_box(), 0..6),
                rot in 0usize..20,
            ) {
                let anchors: Vec<_> = anchors.into_iter()
                    .map(|b| AnchorOutput::new(b, 0.5, vec![1.0]).unwrap()).collect();
                let labels: Vec<_> = labels.into_iter().map(|b| GroundTruthLabel::new("i", b, 0)).collect();
                let m = match_anchors(&anchors, &labels, 0.3).unwrap();
                let n = anchors.len();
                let mut rotated = anchors.clone();
                if n > 0 { rotated.rotate_left(rot % n); }
                let mr = match_anchors(&rotated, &labels, 0.3).unwrap();
                prop_assert_eq!(m.len(), mr.len());
                for &(i, j) in &mr.pairs {
                    let orig = (i + rot % n.max(1)) % n.max(1);
                    prop_assert_eq!(m.label_of(orig), Some(j));
                }
                for &(i, j) in &m.pairs {
                    let best = labels.iter().map(|l| iou(&anchors[i].bbox, &l.bbox)).fold(0.0, f64::max);
                    prop_assert_eq!(iou(&anchors[i].bbox, &labels[j].bbox), best);
                    prop_assert!(best > 0.3);
                }
            }
        }
    }
}
