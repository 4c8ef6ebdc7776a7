//! In-memory datasets: recordings with their probability trace and ground
//! truth, partitioned into named folds.

use std::collections::BTreeMap;

use crate::types::{ClassLabel, Event, FrameTrace};

/// One recording: model output plus grouped ground-truth events per class,
/// sorted by start time.
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: String,
    pub trace: FrameTrace,
    pub truth: BTreeMap<ClassLabel, Vec<Event>>,
}

impl Recording {
    pub fn new(id: impl Into<String>, trace: FrameTrace, truth: BTreeMap<ClassLabel, Vec<Event>>) -> Self {
        let mut truth = truth;
        for evs in truth.values_mut() {
            evs.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.t_end.total_cmp(&b.t_end)));
        }
        Recording {
            id: id.into(),
            trace,
            truth,
        }
    }

    /// Ground truth of one class; empty when the class never occurs.
    pub fn truth_of(&self, label: &ClassLabel) -> &[Event] {
        self.truth.get(label).map_or(&[], Vec::as_slice)
    }
}

/// A named partition of the data, e.g. one site-year.
#[derive(Debug, Clone)]
pub struct Fold {
    pub name: String,
    pub recordings: Vec<Recording>,
}

impl Fold {
    pub fn new(name: impl Into<String>, recordings: Vec<Recording>) -> Self {
        Fold {
            name: name.into(),
            recordings,
        }
    }
}
