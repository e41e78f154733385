//! ZSD and GZSD evaluation: per-class AP, mAP@0.5, Recall@100 at several IoU
//! thresholds, and the seen/unseen harmonic mean.
//!
//! AP is the area under the precision-recall curve using every PR point and
//! the monotone (non-increasing) precision envelope. Classes with neither
//! ground truth nor detections have no AP and are left out of the mean; a
//! class with detections but no ground truth scores 0.
//!
//! Recall@100 keeps each image's `recall_cap` most confident detections
//! (over all classes) and then matches class-aware, greedily by confidence.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::alignment::{check_open_unit, GroundTruthLabel};
use crate::geometry::iou;
use crate::postprocess::Detection;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds_recall: Vec<f64>,
    pub iou_threshold_map: f64,
    pub recall_cap: usize,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_mask: Option<Vec<bool>>,
}

impl EvalConfig {
    pub fn new(class_names: Vec<String>) -> Self {
        EvalConfig {
            iou_thresholds_recall: vec![0.4, 0.5, 0.6],
            iou_threshold_map: 0.5,
            recall_cap: 100,
            class_names,
            seen_mask: None,
        }
    }

    pub fn with_seen_mask(mut self, mask: Vec<bool>) -> Self {
        self.seen_mask = Some(mask);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for &t in &self.iou_thresholds_recall {
            check_open_unit("recall IoU threshold", t)?;
        }
        check_open_unit("iou_threshold_map", self.iou_threshold_map)?;
        if self.recall_cap == 0 {
            return Err(Error::invalid("recall_cap must be at least 1"));
        }
        if let Some(mask) = &self.seen_mask {
            if mask.len() != self.class_names.len() {
                return Err(Error::shape(format!(
                    "seen mask has {} entries for {} classes",
                    mask.len(),
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }
}

/// Key used for a recall threshold in reports: `0.5 -> "50"`.
pub fn threshold_key(t: f64) -> String {
    format!("{:.0}", t * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GzsdSummary {
    pub seen_map: f64,
    pub unseen_map: f64,
    pub hm_map: f64,
    pub seen_recall: BTreeMap<String, f64>,
    pub unseen_recall: BTreeMap<String, f64>,
    pub hm_recall: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP per class name; classes with undefined AP are absent.
    pub per_class_ap: BTreeMap<String, f64>,
    pub map_50: f64,
    /// Recall keyed by [`threshold_key`].
    pub recall_at_100: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gzsd: Option<GzsdSummary>,
}

fn confidence_order<T>(items: &[T], conf: impl Fn(&T) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        conf(&items[b])
            .partial_cmp(&conf(&items[a]))
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Greedy matching for one image and class. Returns a TP flag per detection
/// in the order given; detections are visited by descending confidence and
/// each claims the best unclaimed ground truth with IoU >= `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthLabel], iou_thresh: f64) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in confidence_order(dets, |d| d.confidence) {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let v = iou(&dets[i].bbox, &g.bbox);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            claimed[j] = true;
            flags[i] = true;
        }
    }
    flags
}

/// All-points interpolated AP of TP/FP flags listed in descending confidence.
/// Returns `None` when there is neither ground truth nor a detection.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Result<Option<f64>> {
    let tp_total = flags.iter().filter(|&&f| f).count();
    if tp_total > n_gt {
        return Err(Error::invalid(format!(
            "{tp_total} true positives for {n_gt} ground-truth boxes"
        )));
    }
    if n_gt == 0 {
        return Ok(if flags.is_empty() { None } else { Some(0.0) });
    }
    let precision: Vec<f64> = flags
        .iter()
        .scan(0usize, |tp, &f| {
            *tp += f as usize;
            Some(*tp)
        })
        .enumerate()
        .map(|(k, tp)| tp as f64 / (k + 1) as f64)
        .collect();
    // each TP raises recall by 1/n_gt; weight it by the envelope there
    let mut envelope = 0.0f64;
    let mut area = 0.0;
    for k in (0..flags.len()).rev() {
        envelope = envelope.max(precision[k]);
        if flags[k] {
            area += envelope;
        }
    }
    Ok(Some(area / n_gt as f64))
}

pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
        return Err(Error::invalid(format!(
            "harmonic mean needs finite non-negative inputs, got {a} and {b}"
        )));
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

/// Detections and labels grouped by image, in first-seen image order.
struct Grouped<'a> {
    images: Vec<&'a str>,
    dets: HashMap<&'a str, Vec<&'a Detection>>,
    gts: HashMap<&'a str, Vec<&'a GroundTruthLabel>>,
}

fn group<'a>(dets: &'a [Detection], gts: &'a [GroundTruthLabel]) -> Grouped<'a> {
    let mut images = Vec::new();
    let mut by_det: HashMap<&str, Vec<&Detection>> = HashMap::new();
    let mut by_gt: HashMap<&str, Vec<&GroundTruthLabel>> = HashMap::new();
    for g in gts {
        let e = by_gt.entry(g.image_id.as_str()).or_default();
        if e.is_empty() && !by_det.contains_key(g.image_id.as_str()) {
            images.push(g.image_id.as_str());
        }
        e.push(g);
    }
    for d in dets {
        let e = by_det.entry(d.image_id.as_str()).or_default();
        if e.is_empty() && !by_gt.contains_key(d.image_id.as_str()) {
            images.push(d.image_id.as_str());
        }
        e.push(d);
    }
    Grouped {
        images,
        dets: by_det,
        gts: by_gt,
    }
}

/// Intermediate per-class results shared by the ZSD and GZSD reports.
struct ClassStats {
    ap: Vec<Option<f64>>,
    /// `matched[t][c]`: GT of class `c` matched at recall threshold `t`.
    matched: Vec<Vec<usize>>,
    gt_count: Vec<usize>,
}

fn class_stats(dets: &[Detection], gts: &[GroundTruthLabel], cfg: &EvalConfig) -> Result<ClassStats> {
    cfg.validate()?;
    let n_classes = cfg.class_names.len();
    for d in dets {
        if d.class_index >= n_classes {
            return Err(Error::invalid(format!(
                "detection in {:?} has class index {} but only {n_classes} classes are known",
                d.image_id, d.class_index
            )));
        }
    }
    for g in gts {
        if g.class_index >= n_classes {
            return Err(Error::invalid(format!(
                "label in {:?} has class index {} but only {n_classes} classes are known",
                g.image_id, g.class_index
            )));
        }
    }
    let grouped = group(dets, gts);
    let mut gt_count = vec![0usize; n_classes];
    for g in gts {
        gt_count[g.class_index] += 1;
    }

    // AP: for each class, pool every image's matched detections, then
    // rank them by confidence
    let mut pooled: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n_classes];
    let empty_d = Vec::new();
    let empty_g = Vec::new();
    for img in &grouped.images {
        let idets = grouped.dets.get(img).unwrap_or(&empty_d);
        let igts = grouped.gts.get(img).unwrap_or(&empty_g);
        for (c, pool) in pooled.iter_mut().enumerate() {
            let cd: Vec<Detection> = idets
                .iter()
                .filter(|d| d.class_index == c)
                .map(|d| (*d).clone())
                .collect();
            if cd.is_empty() {
                continue;
            }
            let cg: Vec<GroundTruthLabel> = igts
                .iter()
                .filter(|g| g.class_index == c)
                .map(|g| (*g).clone())
                .collect();
            let flags = match_detections(&cd, &cg, cfg.iou_threshold_map);
            pool.extend(cd.iter().map(|d| d.confidence).zip(flags));
        }
    }
    let ap = pooled
        .iter()
        .zip(&gt_count)
        .map(|(pool, &n)| {
            let order = confidence_order(pool, |p| p.0);
            let flags: Vec<bool> = order.iter().map(|&i| pool[i].1).collect();
            average_precision(&flags, n)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut matched = vec![vec![0usize; n_classes]; cfg.iou_thresholds_recall.len()];
    for img in &grouped.images {
        let idets = grouped.dets.get(img).unwrap_or(&empty_d);
        let Some(igts) = grouped.gts.get(img) else {
            continue;
        };
        let order = confidence_order(idets, |d| d.confidence);
        let top: Vec<&Detection> = order
            .into_iter()
            .take(cfg.recall_cap)
            .map(|i| idets[i])
            .collect();
        for c in 0..n_classes {
            let cd: Vec<Detection> = top
                .iter()
                .filter(|d| d.class_index == c)
                .map(|d| (*d).clone())
                .collect();
            let cg: Vec<GroundTruthLabel> = igts
                .iter()
                .filter(|g| g.class_index == c)
                .map(|g| (*g).clone())
                .collect();
            if cd.is_empty() || cg.is_empty() {
                continue;
            }
            for (t, &thr) in cfg.iou_thresholds_recall.iter().enumerate() {
                matched[t][c] += match_detections(&cd, &cg, thr).iter().filter(|&&f| f).count();
            }
        }
    }
    Ok(ClassStats {
        ap,
        matched,
        gt_count,
    })
}

fn mean_ap(stats: &ClassStats, include: impl Fn(usize) -> bool) -> f64 {
    let defined: Vec<f64> = stats
        .ap
        .iter()
        .enumerate()
        .filter(|(c, _)| include(*c))
        .filter_map(|(_, ap)| *ap)
        .collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

fn recalls(
    stats: &ClassStats,
    cfg: &EvalConfig,
    include: impl Fn(usize) -> bool,
) -> BTreeMap<String, f64> {
    let total: usize = (0..stats.gt_count.len())
        .filter(|&c| include(c))
        .map(|c| stats.gt_count[c])
        .sum();
    cfg.iou_thresholds_recall
        .iter()
        .enumerate()
        .map(|(t, &thr)| {
            let hits: usize = (0..stats.gt_count.len())
                .filter(|&c| include(c))
                .map(|c| stats.matched[t][c])
                .sum();
            let r = if total == 0 {
                0.0
            } else {
                hits as f64 / total as f64
            };
            (threshold_key(thr), r)
        })
        .collect()
}

fn base_report(stats: &ClassStats, cfg: &EvalConfig) -> EvalReport {
    let per_class_ap = cfg
        .class_names
        .iter()
        .zip(&stats.ap)
        .filter_map(|(name, ap)| ap.map(|v| (name.clone(), v)))
        .collect();
    EvalReport {
        per_class_ap,
        map_50: mean_ap(stats, |_| true),
        recall_at_100: recalls(stats, cfg, |_| true),
        gzsd: None,
    }
}

pub fn evaluate_zsd(dets: &[Detection], gts: &[GroundTruthLabel], cfg: &EvalConfig) -> Result<EvalReport> {
    let stats = class_stats(dets, gts, cfg)?;
    Ok(base_report(&stats, cfg))
}

/// As [`evaluate_zsd`], plus seen / unseen / harmonic-mean figures split by
/// `cfg.seen_mask`.
pub fn evaluate_gzsd(dets: &[Detection], gts: &[GroundTruthLabel], cfg: &EvalConfig) -> Result<EvalReport> {
    let mask = cfg
        .seen_mask
        .clone()
        .ok_or_else(|| Error::invalid("GZSD evaluation needs a seen mask"))?;
    let stats = class_stats(dets, gts, cfg)?;
    let mut report = base_report(&stats, cfg);
    let seen_map = mean_ap(&stats, |c| mask[c]);
    let unseen_map = mean_ap(&stats, |c| !mask[c]);
    let seen_recall = recalls(&stats, cfg, |c| mask[c]);
    let unseen_recall = recalls(&stats, cfg, |c| !mask[c]);
    let hm_recall = seen_recall
        .iter()
        .map(|(k, &s)| Ok((k.clone(), harmonic_mean(s, unseen_recall[k])?)))
        .collect::<Result<_>>()?;
    report.gzsd = Some(GzsdSummary {
        seen_map,
        unseen_map,
        hm_map: harmonic_mean(seen_map, unseen_map)?,
        seen_recall,
        unseen_recall,
        hm_recall,
    });
    Ok(report)
}
