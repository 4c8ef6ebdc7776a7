//! Domain types shared by every stage: class labels, frame traces, events.
//!
//! Frame `i` of a trace spans `[start + i/rate, start + (i+1)/rate)`, so a run
//! of `n` frames maps to an event of duration `n/rate`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when comparing times that were derived from frame indices.
///
/// `a/r - b/r` is not bit-identical to `(a-b)/r`, so boundary comparisons
/// (gap vs. minimum gap, duration vs. bounds) treat values within this
/// distance as equal.
pub const TIME_EPS: f64 = 1e-9;

/// Grouped call class, e.g. `bmabz`, `d` or `bp`.
///
/// Labels are plain strings so that alternative groupings can be configured
/// without touching the type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(String);

impl ClassLabel {
    pub fn new(name: impl Into<String>) -> Self {
        ClassLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn bmabz() -> Self {
        ClassLabel::new("bmabz")
    }

    pub fn d() -> Self {
        ClassLabel::new("d")
    }

    pub fn bp() -> Self {
        ClassLabel::new("bp")
    }

    /// The three grouped classes in their canonical order.
    pub fn defaults() -> Vec<ClassLabel> {
        vec![Self::bmabz(), Self::d(), Self::bp()]
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassLabel {
    fn from(s: &str) -> Self {
        ClassLabel::new(s)
    }
}

fn check_axis(frame_rate: f64, start_time: f64) -> Result<()> {
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "frame rate must be positive, got {frame_rate}"
        )));
    }
    if !(start_time.is_finite() && start_time >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "start time must be non-negative, got {start_time}"
        )));
    }
    Ok(())
}

fn check_rows<T>(classes: &[ClassLabel], rows: &[Vec<T>]) -> Result<usize> {
    if classes.len() != rows.len() {
        return Err(Error::InvalidInput(format!(
            "{} class labels but {} rows",
            classes.len(),
            rows.len()
        )));
    }
    let n = rows.first().map_or(0, Vec::len);
    if let Some((c, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::InvalidInput(format!(
            "class '{}' has {} frames, expected {n}",
            classes[c],
            row.len()
        )));
    }
    Ok(n)
}

/// Per-class probability sequences on a shared frame axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    frame_rate: f64,
    start_time: f64,
    classes: Vec<ClassLabel>,
    probs: Vec<Vec<f64>>,
}

impl FrameTrace {
    /// Builds a trace from one probability row per class.
    pub fn new(
        frame_rate: f64,
        start_time: f64,
        classes: Vec<ClassLabel>,
        probs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_axis(frame_rate, start_time)?;
        check_rows(&classes, &probs)?;
        for (c, row) in probs.iter().enumerate() {
            if let Some((i, p)) = row
                .iter()
                .enumerate()
                .find(|(_, p)| !(0.0..=1.0).contains(*p))
            {
                return Err(Error::InvalidInput(format!(
                    "class '{}' frame {i}: probability {p} outside [0, 1]",
                    classes[c]
                )));
            }
        }
        Ok(FrameTrace {
            frame_rate,
            start_time,
            classes,
            probs,
        })
    }

    /// Single-class convenience constructor starting at time zero.
    pub fn single(frame_rate: f64, label: ClassLabel, probs: Vec<f64>) -> Result<Self> {
        Self::new(frame_rate, 0.0, vec![label], vec![probs])
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn hop(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn n_frames(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.probs[class]
    }

    pub fn class_index(&self, label: &ClassLabel) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn row_of(&self, label: &ClassLabel) -> Result<&[f64]> {
        self.class_index(label)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Start time of frame `index`.
    pub fn frame_time(&self, index: usize) -> f64 {
        frame_time(self.start_time, self.frame_rate, index)
    }

    /// Same axis, new rows. Rows are re-validated.
    pub fn with_rows(&self, probs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.frame_rate, self.start_time, self.classes.clone(), probs)
    }
}

pub(crate) fn frame_time(start_time: f64, frame_rate: f64, index: usize) -> f64 {
    start_time + index as f64 / frame_rate
}

/// Binary per-class detections on a shared frame axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTrace {
    frame_rate: f64,
    start_time: f64,
    classes: Vec<ClassLabel>,
    dets: Vec<Vec<bool>>,
}

impl DetectionTrace {
    pub fn new(
        frame_rate: f64,
        start_time: f64,
        classes: Vec<ClassLabel>,
        dets: Vec<Vec<bool>>,
    ) -> Result<Self> {
        check_axis(frame_rate, start_time)?;
        check_rows(&classes, &dets)?;
        Ok(DetectionTrace {
            frame_rate,
            start_time,
            classes,
            dets,
        })
    }

    pub fn single(frame_rate: f64, label: ClassLabel, dets: Vec<bool>) -> Result<Self> {
        Self::new(frame_rate, 0.0, vec![label], vec![dets])
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn n_frames(&self) -> usize {
        self.dets.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.dets
    }

    pub fn row(&self, class: usize) -> &[bool] {
        &self.dets[class]
    }

    pub fn class_index(&self, label: &ClassLabel) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Number of active frames summed over all classes.
    pub fn active_frames(&self) -> usize {
        self.dets.iter().flatten().filter(|&&d| d).count()
    }

    pub fn with_rows(&self, dets: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(self.frame_rate, self.start_time, self.classes.clone(), dets)
    }
}

/// One labelled time interval `[t_start, t_end)` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub label: ClassLabel,
    pub t_start: f64,
    pub t_end: f64,
}

impl Event {
    pub fn new(label: ClassLabel, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(Error::InvalidInput(format!(
                "event [{t_start}, {t_end}) must have t_end > t_start"
            )));
        }
        Ok(Event {
            label,
            t_start,
            t_end,
        })
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Intersection over union of two time intervals; labels are ignored.
pub fn iou(a: &Event, b: &Event) -> f64 {
    let inter = (a.t_end.min(b.t_end) - a.t_start.max(b.t_start)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.t_end.max(b.t_end) - a.t_start.min(b.t_start);
    (inter / union).clamp(0.0, 1.0)
}

/// Events belonging to one recording.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventSet {
    pub source_id: String,
    pub events: Vec<Event>,
}

impl EventSet {
    pub fn new(source_id: impl Into<String>, events: Vec<Event>) -> Self {
        EventSet {
            source_id: source_id.into(),
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of one class, in their stored order.
    pub fn of_class<'a>(&'a self, label: &'a ClassLabel) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| &e.label == label)
    }

    /// Sorts by class, then start time, then end time.
    pub fn sort(&mut self) {
        self.events.sort_by(|a, b| {
            a.label
                .cmp(&b.label)
                .then(a.t_start.total_cmp(&b.t_start))
                .then(a.t_end.total_cmp(&b.t_end))
        });
    }

    /// True when, within every class, events are sorted and do not overlap.
    pub fn is_well_formed(&self) -> bool {
        let mut by_class: std::collections::BTreeMap<&ClassLabel, Vec<&Event>> =
            std::collections::BTreeMap::new();
        for e in &self.events {
            by_class.entry(&e.label).or_default().push(e);
        }
        by_class
            .values()
            .all(|evs| evs.windows(2).all(|w| w[0].t_end <= w[1].t_start))
    }
}
