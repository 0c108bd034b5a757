//! Oriented object detection through pairs of middle lines.
//!
//! An oriented box is represented by its two middle lines (segments joining
//! the midpoints of opposite sides) and their intersection point. This crate
//! provides:
//!
//! * [`geometry`]: exact box ⇄ middle-line conversion and branch selection,
//! * [`encoder`]: per-branch heatmap and 8-channel regression targets with
//!   circular drift regions,
//! * [`loss`]: the intersection-point focal loss and the Line Loss with
//!   analytic gradients, plus a finite-difference checker,
//! * [`decoder`]: heatmap → connected domains → oriented detections, without
//!   NMS or a top-K cap,
//! * [`eval`]: rotated IoU, AP/mAP and precision/recall/F1,
//! * [`ingest`]: DOTA / ICDAR annotation parsing and overlapping tiling,
//! * [`formats`]: the JSON and map-container file formats shared by the CLI.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod ingest;
pub mod loss;
pub mod synth;

pub use decoder::{decode, Component, DecodeOutput, Detection};
pub use encoder::{encode_image, EncoderConfig, TargetMaps};
pub use error::{Error, Result};
pub use eval::{evaluate, rotated_iou, ApMode, EvalMode, EvalReport};
pub use geometry::{AngleRange, BranchId, MidlinePair, OrientedBox, Point2};
pub use loss::{LossValue, LossWeights};
