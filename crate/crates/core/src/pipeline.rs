//! Full post-processing chain: frame-level then event-level, per class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventpost::{event_pipeline_row, EventParams};
use crate::framepost::{frame_pipeline_row, FrameParams};
use crate::types::{ClassLabel, Event, EventSet, FrameTrace};

/// Frame- and event-level parameters of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub frame: FrameParams,
    pub event: EventParams,
}

/// Per-class post-processing configuration.
pub type PostProcessingConfig = BTreeMap<ClassLabel, ClassConfig>;

/// Post-processes one probability row into events.
pub fn postprocess_row(
    row: &[f64],
    frame_rate: f64,
    start_time: f64,
    label: &ClassLabel,
    config: &ClassConfig,
) -> Result<Vec<Event>> {
    let dets = frame_pipeline_row(row, &config.frame)?;
    event_pipeline_row(&dets, frame_rate, start_time, label, &config.event)
}

/// Post-processes every class of `trace` that has a configuration.
///
/// Classes without an entry in `config` are an error.
pub fn postprocess(
    trace: &FrameTrace,
    config: &PostProcessingConfig,
    source_id: &str,
) -> Result<EventSet> {
    let mut events = Vec::new();
    for (label, row) in trace.classes().iter().zip(trace.rows()) {
        let cfg = config
            .get(label)
            .ok_or_else(|| Error::Config(format!("no configuration for class '{label}'")))?;
        events.extend(postprocess_row(
            row,
            trace.frame_rate(),
            trace.start_time(),
            label,
            cfg,
        )?);
    }
    Ok(EventSet::new(source_id, events))
}
