//! Run configuration: built-in defaults, overridden by a JSON config file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::alignment::LossConfig;
use crate::embedding::{Encoding, Temperature};
use crate::evaluation::EvalConfig;
use crate::fsutil::read_to_string;
use crate::postprocess::{PostprocessConfig, Variant};
use crate::selflabel::SelfLabelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub w_text: Option<f64>,
    pub w_image: Option<f64>,
    pub tau: Option<f64>,
    pub positive_iou_threshold: Option<f64>,

    pub variant: Option<Variant>,
    pub objectness_cutoff: Option<f64>,
    pub confidence_cutoff: Option<f64>,
    pub nms_iou: Option<f64>,
    pub max_detections: Option<usize>,

    pub min_width_px: Option<f64>,
    pub min_height_px: Option<f64>,
    pub self_label_objectness_cutoff: Option<f64>,
    pub merge_iou_threshold: Option<f64>,

    pub iou_thresholds_recall: Option<Vec<f64>>,
    pub iou_threshold_map: Option<f64>,
    pub recall_cap: Option<usize>,

    pub dataset: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub anchor_semantics: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub unseen: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
    pub encoding: Option<Encoding>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// The merged view every subcommand reads from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub post: PostprocessConfig,
    pub self_label: SelfLabelConfig,
    pub iou_thresholds_recall: Vec<f64>,
    pub iou_threshold_map: f64,
    pub recall_cap: usize,

    pub dataset: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub anchor_semantics: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub unseen: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub encoding: Encoding,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::new(Vec::new());
        RunConfig {
            loss: LossConfig::default(),
            post: PostprocessConfig::zsd(),
            self_label: SelfLabelConfig::default(),
            iou_thresholds_recall: eval.iou_thresholds_recall,
            iou_threshold_map: eval.iou_threshold_map,
            recall_cap: eval.recall_cap,
            dataset: None,
            detections: None,
            anchors: None,
            anchor_semantics: None,
            refs: None,
            candidates: None,
            classes: None,
            unseen: None,
            definitions: None,
            endpoint: None,
            out: None,
            format: ReportFormat::Json,
            encoding: Encoding::Inline,
        }
    }
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

macro_rules! set_opt {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = Some(v);
        }
    };
}

impl RunConfig {
    /// Applies every key present in `f`. Flags are applied through the same
    /// path, so a later layer always wins.
    pub fn apply(&mut self, f: ConfigFile) -> Result<()> {
        set!(self.loss.w_text, f.w_text);
        set!(self.loss.w_image, f.w_image);
        if let Some(tau) = f.tau {
            let t = Temperature::new(tau)?;
            self.loss.tau = t;
            self.post.tau = t;
        }
        set!(self.loss.positive_iou_threshold, f.positive_iou_threshold);

        set!(self.post.variant, f.variant);
        set!(self.post.objectness_cutoff, f.objectness_cutoff);
        set!(self.post.confidence_cutoff, f.confidence_cutoff);
        set!(self.post.nms_iou, f.nms_iou);
        set!(self.post.max_detections, f.max_detections);

        set!(self.self_label.min_width_px, f.min_width_px);
        set!(self.self_label.min_height_px, f.min_height_px);
        set!(self.self_label.objectness_cutoff, f.self_label_objectness_cutoff);
        set!(self.self_label.merge_iou_threshold, f.merge_iou_threshold);

        set!(self.iou_thresholds_recall, f.iou_thresholds_recall);
        set!(self.iou_threshold_map, f.iou_threshold_map);
        set!(self.recall_cap, f.recall_cap);

        set_opt!(self.dataset, f.dataset);
        set_opt!(self.detections, f.detections);
        set_opt!(self.anchors, f.anchors);
        set_opt!(self.anchor_semantics, f.anchor_semantics);
        set_opt!(self.refs, f.refs);
        set_opt!(self.candidates, f.candidates);
        set_opt!(self.classes, f.classes);
        set_opt!(self.unseen, f.unseen);
        set_opt!(self.definitions, f.definitions);
        set_opt!(self.endpoint, f.endpoint);
        set_opt!(self.out, f.out);
        set!(self.format, f.format);
        set!(self.encoding, f.encoding);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.post.validate()?;
        self.self_label.validate()?;
        self.eval_config(Vec::new()).validate()
    }

    pub fn eval_config(&self, class_names: Vec<String>) -> EvalConfig {
        EvalConfig {
            iou_thresholds_recall: self.iou_thresholds_recall.clone(),
            iou_threshold_map: self.iou_threshold_map,
            recall_cap: self.recall_cap,
            class_names,
            seen_mask: None,
        }
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("missing required --{flag}")))
    }
}
