//! Zero-shot object detection toolkit for one-stage detectors whose class head
//! emits a semantic embedding instead of class logits.
//!
//! The crate covers everything that happens on the class side of such a
//! detector once the network itself has produced its per-anchor outputs:
//!
//! - [`geometry`]: corner-format boxes and IoU.
//! - [`embedding`]: class prompts, embedding files, cosine similarity and the
//!   temperatured softmax, plus a client for an external text encoder.
//! - [`alignment`]: positive-anchor matching, the text / image / dual
//!   alignment losses and their analytic gradients.
//! - [`selflabel`]: merging class-agnostic detections into the training labels.
//! - [`postprocess`]: YOLO-style, ZSD and ZSD+ post-processing.
//! - [`evaluation`]: AP, mAP@0.5, Recall@100 and the GZSD harmonic mean.
//! - [`datasplit`]: seen/unseen train and test split construction.
//! - [`cli`]: the `zsd` command-line driver and the JSONL formats it reads.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod alignment;
pub mod cli;
pub mod datasplit;
pub mod embedding;
mod error;
mod fsutil;
pub mod evaluation;
pub mod geometry;
pub mod postprocess;
pub mod selflabel;

pub use error::{Error, Result};

/// Library version, shared with the command-line tool.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
