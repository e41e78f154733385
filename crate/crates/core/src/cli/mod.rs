//! The `zsd` command-line driver.
//!
//! Every subcommand reads a [`RunConfig`] assembled from built-in defaults,
//! an optional `--config` JSON file, and flags, in that order of precedence.
//! Exit status is 0 on success, 1 for invalid input, 2 for I/O failures.

mod config;
pub mod formats;
mod report;

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::alignment::{run_gradient_suite, GroundTruthLabel};
use crate::datasplit::{make_zsd_split, strip_unseen_labels, ClassSplit, HoldOut, UnseenLabels};
use crate::embedding::{build_prompt, load_embeddings, save_embeddings, EncoderClient, Encoding, PromptSpec};
use crate::evaluation::{evaluate_gzsd, evaluate_zsd, EvalReport};
use crate::fsutil::write_atomic;
use crate::postprocess::{postprocess, Detection, Variant};
use crate::selflabel::merge_self_labels;
use crate::{Error, Result};

pub use config::{ConfigFile, ReportFormat, RunConfig};
pub use report::{gzsd_csv, to_canonical_json, zsd_csv};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "zsd", version, about = "Zero-shot detection post-processing, evaluation and loss tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ZSD evaluation: per-class AP, mAP@0.5 and Recall@100.
    Eval,
    /// GZSD evaluation with seen / unseen / harmonic-mean rows.
    GzsdEval,
    /// Turn anchor outputs into detections.
    Postprocess,
    /// Merge class-agnostic candidates into self-labels.
    Selflabel,
    /// Build the seen-only train split and the held-out split.
    Split,
    /// Check the analytic loss gradients against finite differences.
    Gradcheck,
    /// Encode class prompts through an external text encoder.
    Embed,
}

#[derive(Debug, Args)]
struct Opts {
    /// JSON config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    detections: Option<PathBuf>,
    #[arg(long, global = true)]
    anchors: Option<PathBuf>,
    /// Embedding file holding rows referenced by `semantic_ref`.
    #[arg(long, global = true)]
    anchor_semantics: Option<PathBuf>,
    /// Reference (class text) embedding file.
    #[arg(long, global = true)]
    refs: Option<PathBuf>,
    #[arg(long, global = true)]
    candidates: Option<PathBuf>,
    /// File of class names, one per line, fixing the class order.
    #[arg(long, global = true)]
    classes: Option<PathBuf>,
    /// File of unseen class names, one per line.
    #[arg(long, global = true)]
    unseen: Option<PathBuf>,
    /// JSON object mapping class name to definition.
    #[arg(long, global = true)]
    definitions: Option<PathBuf>,
    /// Text-encoder URL for `embed`.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<ReportFormat>,
    /// Embedding output encoding: inline or f32le.
    #[arg(long, global = true)]
    encoding: Option<String>,

    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    nms_iou: Option<f64>,
    #[arg(long, global = true)]
    obj_cutoff: Option<f64>,
    #[arg(long, global = true)]
    conf_cutoff: Option<f64>,
    #[arg(long, global = true)]
    max_det: Option<usize>,

    #[arg(long, global = true)]
    min_width: Option<f64>,
    #[arg(long, global = true)]
    min_height: Option<f64>,
    #[arg(long, global = true)]
    self_obj_cutoff: Option<f64>,
    #[arg(long, global = true)]
    merge_iou: Option<f64>,

    #[arg(long, global = true)]
    recall_cap: Option<usize>,
    /// Recall@100 IoU thresholds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    iou: Option<Vec<f64>>,
    #[arg(long, global = true)]
    map_iou: Option<f64>,

    /// Hold out images as a validation set instead of a test set.
    #[arg(long, global = true)]
    validation: bool,
    #[arg(long, global = true, default_value_t = 100)]
    trials: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

impl Opts {
    fn overrides(&self) -> Result<ConfigFile> {
        let variant = self.variant.as_deref().map(str::parse::<Variant>).transpose()?;
        let encoding = match self.encoding.as_deref() {
            None => None,
            Some("inline") => Some(Encoding::Inline),
            Some("f32le") => Some(Encoding::F32le),
            Some(other) => {
                return Err(Error::invalid(format!(
                    "unknown encoding {other:?} (expected inline or f32le)"
                )))
            }
        };
        Ok(ConfigFile {
            tau: self.tau,
            variant,
            objectness_cutoff: self.obj_cutoff,
            confidence_cutoff: self.conf_cutoff,
            nms_iou: self.nms_iou,
            max_detections: self.max_det,
            min_width_px: self.min_width,
            min_height_px: self.min_height,
            self_label_objectness_cutoff: self.self_obj_cutoff,
            merge_iou_threshold: self.merge_iou,
            iou_thresholds_recall: self.iou.clone(),
            iou_threshold_map: self.map_iou,
            recall_cap: self.recall_cap,
            dataset: self.dataset.clone(),
            detections: self.detections.clone(),
            anchors: self.anchors.clone(),
            anchor_semantics: self.anchor_semantics.clone(),
            refs: self.refs.clone(),
            candidates: self.candidates.clone(),
            classes: self.classes.clone(),
            unseen: self.unseen.clone(),
            definitions: self.definitions.clone(),
            endpoint: self.endpoint.clone(),
            out: self.out.clone(),
            format: self.format,
            encoding,
            ..Default::default()
        })
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply(ConfigFile::load(path)?)?;
        }
        cfg.apply(self.overrides()?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = cli.opts.run_config()?;
    match cli.command {
        Command::Eval => cmd_eval(&cfg),
        Command::GzsdEval => cmd_gzsd_eval(&cfg),
        Command::Postprocess => cmd_postprocess(&cfg),
        Command::Selflabel => cmd_selflabel(&cfg),
        Command::Split => cmd_split(&cfg, cli.opts.validation),
        Command::Gradcheck => cmd_gradcheck(cli.opts.trials, cli.opts.seed),
        Command::Embed => cmd_embed(&cfg),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Ground truth restricted to `class_names`, re-indexed into that list.
fn labels_for(ds: &crate::datasplit::DatasetIndex, class_names: &[String]) -> Vec<GroundTruthLabel> {
    let index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    ds.labels()
        .filter_map(|l| {
            index
                .get(ds.class_names[l.class_index].as_str())
                .map(|&c| GroundTruthLabel {
                    class_index: c,
                    ..l.clone()
                })
        })
        .collect()
}

fn cmd_eval(cfg: &RunConfig) -> Result<i32> {
    let ds = formats::load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let class_names = match (&cfg.classes, &cfg.unseen) {
        (Some(p), _) | (None, Some(p)) => formats::load_class_list(p)?,
        (None, None) => ds.class_names.clone(),
    };
    let gts = labels_for(&ds, &class_names);
    let dets = formats::load_detections(cfg.require(&cfg.detections, "detections")?)?
        .resolve(&class_names)?;
    let report = evaluate_zsd(&dets, &gts, &cfg.eval_config(class_names))?;
    write_report(cfg, &report, false)?;
    Ok(0)
}

fn cmd_gzsd_eval(cfg: &RunConfig) -> Result<i32> {
    let ds = formats::load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let unseen = formats::load_class_list(cfg.require(&cfg.unseen, "unseen")?)?;
    let class_names = match &cfg.classes {
        Some(p) => formats::load_class_list(p)?,
        None => ds
            .class_names
            .iter()
            .chain(&unseen)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if let Some(u) = unseen.iter().find(|u| !class_names.contains(u)) {
        return Err(Error::invalid(format!("unseen class {u:?} is not in the class list")));
    }
    let mask = class_names.iter().map(|n| !unseen.contains(n)).collect();
    let gts = labels_for(&ds, &class_names);
    let dets = formats::load_detections(cfg.require(&cfg.detections, "detections")?)?
        .resolve(&class_names)?;
    let report = evaluate_gzsd(&dets, &gts, &cfg.eval_config(class_names).with_seen_mask(mask))?;
    write_report(cfg, &report, true)?;
    Ok(0)
}

fn write_report(cfg: &RunConfig, report: &EvalReport, gzsd: bool) -> Result<()> {
    let text = match (cfg.format, gzsd) {
        (ReportFormat::Json, _) => to_canonical_json(report)?,
        (ReportFormat::Csv, false) => zsd_csv(report),
        (ReportFormat::Csv, true) => gzsd_csv(report)?,
    };
    emit(cfg.out.as_deref(), &text)
}

fn cmd_postprocess(cfg: &RunConfig) -> Result<i32> {
    let refs = load_embeddings(cfg.require(&cfg.refs, "refs")?)?;
    let sidecar = cfg.anchor_semantics.as_ref().map(load_embeddings).transpose()?;
    let images = formats::load_anchors(
        cfg.require(&cfg.anchors, "anchors")?,
        sidecar.as_ref(),
        Some(refs.dim()),
    )?;
    let per_image: Vec<Vec<Detection>> = images
        .par_iter()
        .map(|img| postprocess(&img.image_id, &img.anchors, &refs, &cfg.post))
        .collect::<Result<_>>()?;
    let dets: Vec<Detection> = per_image.into_iter().flatten().collect();
    match &cfg.out {
        Some(p) => formats::save_detections(p, &dets, refs.names())?,
        None => {
            let dir = tempfile::tempdir().map_err(|e| Error::io(".", e))?;
            let p = dir.path().join("detections.jsonl");
            formats::save_detections(&p, &dets, refs.names())?;
            emit(None, &crate::fsutil::read_to_string(&p)?)?;
        }
    }
    eprintln!(
        "postprocess ({}): {} images, {} detections",
        cfg.post.variant.as_str(),
        images.len(),
        dets.len()
    );
    Ok(0)
}

fn cmd_selflabel(cfg: &RunConfig) -> Result<i32> {
    let ds = formats::load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let candidates = formats::load_self_labels(cfg.require(&cfg.candidates, "candidates")?)?;
    let out = cfg.require(&cfg.out, "out")?;

    let mut order: Vec<&str> = Vec::new();
    let mut by_image: HashMap<&str, Vec<_>> = HashMap::new();
    for c in &candidates {
        by_image
            .entry(c.image_id.as_str())
            .or_insert_with(|| {
                order.push(c.image_id.as_str());
                Vec::new()
            })
            .push(c.clone());
    }
    let gts: HashMap<&str, &[GroundTruthLabel]> = ds
        .images
        .iter()
        .map(|i| (i.image_id.as_str(), i.labels.as_slice()))
        .collect();
    let merged: Vec<_> = order
        .par_iter()
        .map(|img| merge_self_labels(gts.get(img).copied().unwrap_or(&[]), &by_image[img], &cfg.self_label))
        .collect::<Result<Vec<_>>>()?;
    let merged: Vec<_> = merged.into_iter().flatten().collect();
    formats::save_self_labels(out, &merged)?;
    eprintln!(
        "selflabel: kept {} of {} candidates",
        merged.len(),
        candidates.len()
    );
    Ok(0)
}

fn cmd_split(cfg: &RunConfig, validation: bool) -> Result<i32> {
    let ds = formats::load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let unseen = formats::load_class_list(cfg.require(&cfg.unseen, "unseen")?)?;
    let out = cfg.require(&cfg.out, "out")?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let split = ClassSplit::from_unseen_names(&ds, &unseen)?;
    let role = if validation {
        HoldOut::Validation
    } else {
        HoldOut::Test
    };
    let s = make_zsd_split(&ds, &split, role)?;
    let train = strip_unseen_labels(&ds, &split, &s.train, UnseenLabels::Drop)?;
    let held = strip_unseen_labels(&ds, &split, &s.held_out, UnseenLabels::Keep)?;
    let held_name = match role {
        HoldOut::Test => "test.jsonl",
        HoldOut::Validation => "validation.jsonl",
    };
    formats::save_dataset(out.join("train.jsonl"), &train)?;
    formats::save_dataset(out.join(held_name), &held)?;
    eprintln!(
        "split: {} train images, {} {} images",
        s.train.len(),
        s.held_out.len(),
        held_name.trim_end_matches(".jsonl")
    );
    Ok(0)
}

fn cmd_gradcheck(trials: usize, seed: u64) -> Result<i32> {
    let r = run_gradient_suite(trials, seed)?;
    let ok = r.max_error() < GRADCHECK_TOLERANCE;
    println!(
        "gradcheck: {} trials, max relative error {:.3e} (text {:.3e}, image {:.3e}) -> {}",
        r.trials,
        r.max_error(),
        r.max_text_error,
        r.max_image_error,
        if ok { "ok" } else { "FAILED" }
    );
    Ok(if ok { 0 } else { 1 })
}

fn cmd_embed(cfg: &RunConfig) -> Result<i32> {
    let classes = match (&cfg.classes, &cfg.unseen) {
        (Some(p), _) | (None, Some(p)) => formats::load_class_list(p)?,
        (None, None) => return Err(Error::invalid("missing required --classes or --unseen")),
    };
    let definitions = cfg
        .definitions
        .as_ref()
        .map(formats::load_definitions)
        .transpose()?
        .unwrap_or_default();
    let prompts = classes
        .iter()
        .map(|c| {
            let spec = match definitions.get(c) {
                Some(d) => PromptSpec::with_definition(c.clone(), d.clone()),
                None => PromptSpec::new(c.clone()),
            };
            build_prompt(&spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let endpoint = cfg.require(&cfg.endpoint, "endpoint")?;
    let out = cfg.require(&cfg.out, "out")?;
    let set = EncoderClient::new(endpoint.clone()).encode(&prompts)?.renamed(classes)?;
    save_embeddings(&set, out, cfg.encoding)?;
    eprintln!("embed: wrote {} x {} embeddings", set.len(), set.dim());
    Ok(0)
}
