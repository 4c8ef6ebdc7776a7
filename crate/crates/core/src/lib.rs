//! Post-processing, event-level evaluation and hyperparameter search for
//! frame-wise baleen whale call detectors, plus a small forward-only model of
//! a boundary-proposal gating network.
//!
//! The data flow is
//!
//! ```text
//! FrameTrace --framepost--> DetectionTrace --eventpost--> EventSet --evalkit--> metrics
//! ```
//!
//! and [`hypersearch`] picks the per-class parameters of the first two
//! stages by cross-validated grid search.

pub mod bpn;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod eventpost;
pub mod framepost;
pub mod hypersearch;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod types;

pub use error::{Error, Result};
pub use eventpost::EventParams;
pub use framepost::FrameParams;
pub use pipeline::{ClassConfig, PostProcessingConfig};
pub use types::{iou, ClassLabel, DetectionTrace, Event, EventSet, FrameTrace};
