//! Event-level post-processing: turning binary detections into events,
//! merging events separated by short gaps and discarding events of
//! implausible duration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{frame_time, ClassLabel, DetectionTrace, Event, EventSet, TIME_EPS};

/// Event-level hyperparameters for one class, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub min_gap: f64,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl EventParams {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.min_gap, self.min_duration, self.max_duration]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive || self.min_duration >= self.max_duration {
            return Err(Error::param(format!(
                "event parameters must be positive with min_duration < max_duration, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One event per maximal run of active frames. Frame `i` contributes
/// `[start + i/rate, start + (i+1)/rate)`.
pub fn aggregate_row(row: &[bool], frame_rate: f64, start_time: f64, label: &ClassLabel) -> Vec<Event> {
    let mut events = Vec::new();
    let mut run_start = None;
    for (i, &active) in row.iter().chain(std::iter::once(&false)).enumerate() {
        match (active, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                events.push(Event {
                    label: label.clone(),
                    t_start: frame_time(start_time, frame_rate, s),
                    t_end: frame_time(start_time, frame_rate, i),
                });
                run_start = None;
            }
            _ => {}
        }
    }
    events
}

pub fn aggregate_events(dets: &DetectionTrace, label: &ClassLabel) -> Result<EventSet> {
    let idx = dets
        .class_index(label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    Ok(EventSet::new(
        "",
        aggregate_row(dets.row(idx), dets.frame_rate(), dets.start_time(), label),
    ))
}

/// Merges consecutive events whose gap is shorter than `min_gap`.
///
/// Expects events of one class sorted by start time. Merging runs left to
/// right, so chains of short gaps collapse into a single event.
pub fn merge_events(events: &[Event], min_gap: f64) -> Vec<Event> {
    let mut out: Vec<Event> = Vec::with_capacity(events.len());
    for e in events {
        match out.last_mut() {
            Some(prev) if e.t_start - prev.t_end < min_gap - TIME_EPS => {
                prev.t_end = prev.t_end.max(e.t_end);
            }
            _ => out.push(e.clone()),
        }
    }
    out
}

/// Keeps events with `min_d <= duration <= max_d`; others are dropped, never
/// truncated.
pub fn filter_duration(events: &[Event], min_d: f64, max_d: f64) -> Vec<Event> {
    events
        .iter()
        .filter(|e| {
            let d = e.duration();
            d >= min_d - TIME_EPS && d <= max_d + TIME_EPS
        })
        .cloned()
        .collect()
}

/// Merge followed by duration filtering.
pub fn refine_events(events: &[Event], params: &EventParams) -> Vec<Event> {
    filter_duration(
        &merge_events(events, params.min_gap),
        params.min_duration,
        params.max_duration,
    )
}

/// Aggregate, merge, filter on a single detection row.
pub fn event_pipeline_row(
    row: &[bool],
    frame_rate: f64,
    start_time: f64,
    label: &ClassLabel,
    params: &EventParams,
) -> Result<Vec<Event>> {
    params.validate()?;
    Ok(refine_events(
        &aggregate_row(row, frame_rate, start_time, label),
        params,
    ))
}

/// Runs the event-level chain for every class of `dets`. Output events are
/// grouped by class in trace order and sorted within each class.
pub fn event_pipeline(
    dets: &DetectionTrace,
    params: &BTreeMap<ClassLabel, EventParams>,
) -> Result<EventSet> {
    let mut events = Vec::new();
    for (label, row) in dets.classes().iter().zip(dets.rows()) {
        let p = params
            .get(label)
            .ok_or_else(|| Error::Config(format!("no event parameters for class '{label}'")))?;
        events.extend(event_pipeline_row(
            row,
            dets.frame_rate(),
            dets.start_time(),
            label,
            p,
        )?);
    }
    Ok(EventSet::new("", events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(a: f64, b: f64) -> Event {
        Event::new(ClassLabel::bp(), a, b).unwrap()
    }

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    fn close(a: &Event, s: f64, e: f64) -> bool {
        (a.t_start - s).abs() < 1e-12 && (a.t_end - e).abs() < 1e-12
    }

    #[test]
    fn aggregate_examples() {
        let evs = aggregate_row(&bits(&[0, 1, 1, 1, 0]), 10.0, 0.0, &ClassLabel::bp());
        assert_eq!(evs.len(), 1);
        assert!(close(&evs[0], 0.1, 0.4));

        assert!(aggregate_row(&[false; 8], 10.0, 0.0, &ClassLabel::bp()).is_empty());

        let evs = aggregate_row(&[true; 37], 4.0, 2.0, &ClassLabel::bp());
        assert_eq!(evs.len(), 1);
        assert!(close(&evs[0], 2.0, 2.0 + 37.0 / 4.0));
    }

    #[test]
    fn merge_examples() {
        let merged = merge_events(&[ev(0.0, 1.0), ev(1.3, 2.0)], 0.5);
        assert_eq!(merged, vec![ev(0.0, 2.0)]);
        let apart = merge_events(&[ev(0.0, 1.0), ev(1.5, 2.0)], 0.5);
        assert_eq!(apart.len(), 2);
        assert_eq!(merge_events(&[ev(3.0, 4.0)], 0.5), vec![ev(3.0, 4.0)]);
    }

    #[test]
    fn merge_is_transitive() {
        let merged = merge_events(&[ev(0.0, 1.0), ev(1.2, 2.0), ev(2.2, 3.0), ev(5.0, 6.0)], 0.5);
        assert_eq!(merged, vec![ev(0.0, 3.0), ev(5.0, 6.0)]);
    }

    #[test]
    fn filter_examples() {
        assert!(filter_duration(&[ev(0.0, 1.4)], 2.0, 10.0).is_empty());
        assert!(filter_duration(&[ev(0.0, 30.0)], 2.12, 28.07).is_empty());
        assert_eq!(filter_duration(&[ev(1.0, 3.0)], 2.0, 10.0).len(), 1);
        assert_eq!(filter_duration(&[ev(1.0, 11.0)], 2.0, 10.0).len(), 1);
    }

    #[test]
    fn frame_derived_boundary_gap_is_not_merged() {
        // frames 0..5 and 10..15 at 10 fps: gap of exactly five hops
        let mut row = vec![false; 20];
        row[..5].fill(true);
        row[10..15].fill(true);
        let evs = aggregate_row(&row, 10.0, 0.0, &ClassLabel::bp());
        assert_eq!(merge_events(&evs, 0.5).len(), 2);
        assert_eq!(merge_events(&evs, 0.50001).len(), 1);
    }

    #[test]
    fn pipeline_examples() {
        let row = bits(&[1, 1, 0, 1, 1]);
        let p = EventParams {
            min_gap: 0.2,
            min_duration: 0.1,
            max_duration: 10.0,
        };
        let evs = event_pipeline_row(&row, 10.0, 0.0, &ClassLabel::bp(), &p).unwrap();
        assert_eq!(evs.len(), 1);
        assert!(close(&evs[0], 0.0, 0.5));

        let p = EventParams { min_gap: 0.05, ..p };
        let evs = event_pipeline_row(&row, 10.0, 0.0, &ClassLabel::bp(), &p).unwrap();
        assert_eq!(evs.len(), 2);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = EventParams {
            min_gap: 0.5,
            min_duration: 3.0,
            max_duration: 2.0,
        };
        assert!(event_pipeline_row(&[true], 10.0, 0.0, &ClassLabel::bp(), &p).is_err());
    }

    fn sorted_events() -> impl Strategy<Value = Vec<Event>> {
        proptest::collection::vec((0.0f64..3.0, 0.05f64..4.0), 0..30).prop_map(|parts| {
            let mut t = 0.0;
            parts
                .into_iter()
                .map(|(gap, len)| {
                    let s = t + gap;
                    t = s + len;
                    ev(s, t)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn refine_is_idempotent(evs in sorted_events(), gap in 0.05f64..2.0,
                                lo in 0.05f64..2.0, span in 0.1f64..5.0) {
            let p = EventParams { min_gap: gap, min_duration: lo, max_duration: lo + span };
            let once = refine_events(&evs, &p);
            prop_assert_eq!(refine_events(&once, &p), once);
        }

        #[test]
        fn merge_output_sorted_and_disjoint(evs in sorted_events(), gap in 0.0f64..2.0) {
            let out = merge_events(&evs, gap);
            for w in out.windows(2) {
                prop_assert!(w[1].t_start - w[0].t_end >= gap - TIME_EPS);
            }
        }

        #[test]
        fn pipeline_never_invents_activity(row in proptest::collection::vec(any::<bool>(), 1..200),
                                           gap in 0.05f64..1.0) {
            let p = EventParams { min_gap: gap, min_duration: 0.05, max_duration: 100.0 };
            let raw = aggregate_row(&row, 10.0, 0.0, &ClassLabel::bp());
            let out = event_pipeline_row(&row, 10.0, 0.0, &ClassLabel::bp(), &p).unwrap();
            // every output event starts and ends on a raw run boundary
            for e in &out {
                prop_assert!(raw.iter().any(|r| r.t_start == e.t_start));
                prop_assert!(raw.iter().any(|r| r.t_end == e.t_end));
            }
        }
    }
}
