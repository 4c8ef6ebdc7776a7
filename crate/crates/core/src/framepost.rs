//! Frame-level post-processing: median smoothing of probabilities,
//! hysteresis binarisation and hangover (majority-vote) smoothing of the
//! resulting detections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, DetectionTrace, FrameTrace};

/// Frame-level hyperparameters for one class.
///
/// A kernel of `None` skips that stage entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub median_kernel: Option<usize>,
    pub on_threshold: f64,
    pub off_threshold: f64,
    pub hangover_kernel: Option<usize>,
}

impl FrameParams {
    /// Plain fixed threshold with no smoothing.
    pub fn threshold(t: f64) -> Self {
        FrameParams {
            median_kernel: None,
            on_threshold: t,
            off_threshold: t,
            hangover_kernel: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in [self.median_kernel, self.hangover_kernel].into_iter().flatten() {
            check_kernel(k)?;
        }
        check_thresholds(self.on_threshold, self.off_threshold)
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::param(format!(
            "kernel must be odd and >= 3, got {kernel}"
        )));
    }
    Ok(())
}

fn check_thresholds(on: f64, off: f64) -> Result<()> {
    if !(off > 0.0 && off <= on && on < 1.0) {
        return Err(Error::param(format!(
            "thresholds must satisfy 0 < off <= on < 1, got on={on} off={off}"
        )));
    }
    Ok(())
}

/// Centered running median with replicate padding at both ends.
///
/// Keeps the window sorted and updates it incrementally, so the cost is
/// `O(n * kernel)` rather than a sort per frame.
pub fn median_filter_row(row: &[f64], kernel: usize) -> Result<Vec<f64>> {
    check_kernel(kernel)?;
    let n = row.len();
    if kernel > n {
        return Err(Error::param(format!(
            "median kernel {kernel} exceeds trace length {n}"
        )));
    }
    let half = kernel / 2;
    let at = |i: isize| row[i.clamp(0, n as isize - 1) as usize];

    let mut window: Vec<f64> = (-(half as isize)..=half as isize).map(at).collect();
    window.sort_by(f64::total_cmp);

    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        out.push(window[half]);
        let leaving = at(t - half as isize);
        let entering = at(t + half as isize + 1);
        if leaving.total_cmp(&entering).is_ne() {
            let pos = window.partition_point(|v| v.total_cmp(&leaving).is_lt());
            window.remove(pos);
            let pos = window.partition_point(|v| v.total_cmp(&entering).is_lt());
            window.insert(pos, entering);
        }
    }
    Ok(out)
}

/// Applies [`median_filter_row`] to every class of a trace.
pub fn median_filter(trace: &FrameTrace, kernel: usize) -> Result<FrameTrace> {
    let rows = trace
        .rows()
        .iter()
        .map(|r| median_filter_row(r, kernel))
        .collect::<Result<Vec<_>>>()?;
    trace.with_rows(rows)
}

/// Two-threshold state machine. Starts inactive; enters the active state
/// when `p >= on` and leaves it when `p < off`.
pub fn hysteresis_row(row: &[f64], on: f64, off: f64) -> Result<Vec<bool>> {
    check_thresholds(on, off)?;
    Ok(hysteresis_unchecked(row, on, off))
}

pub(crate) fn hysteresis_unchecked(row: &[f64], on: f64, off: f64) -> Vec<bool> {
    let mut active = false;
    row.iter()
        .map(|&p| {
            active = if active { p >= off } else { p >= on };
            active
        })
        .collect()
}

pub fn hysteresis_binarize(trace: &FrameTrace, on: f64, off: f64) -> Result<DetectionTrace> {
    check_thresholds(on, off)?;
    let rows = trace
        .rows()
        .iter()
        .map(|r| hysteresis_unchecked(r, on, off))
        .collect();
    DetectionTrace::new(
        trace.frame_rate(),
        trace.start_time(),
        trace.classes().to_vec(),
        rows,
    )
}

/// Causal majority vote over the current frame and `kernel - 1` past frames.
///
/// Frame `t` is active iff strictly more than half of the window is active.
/// While fewer than `kernel` frames are available the window is truncated to
/// the `t + 1` frames seen so far.
pub fn hangover_row(row: &[bool], kernel: usize) -> Result<Vec<bool>> {
    check_kernel(kernel)?;
    Ok(hangover_unchecked(row, kernel))
}

pub(crate) fn hangover_unchecked(row: &[bool], kernel: usize) -> Vec<bool> {
    let mut sum = 0usize;
    let mut out = Vec::with_capacity(row.len());
    for t in 0..row.len() {
        sum += row[t] as usize;
        if t >= kernel {
            sum -= row[t - kernel] as usize;
        }
        let width = kernel.min(t + 1);
        out.push(2 * sum > width);
    }
    out
}

pub fn hangover(dets: &DetectionTrace, kernel: usize) -> Result<DetectionTrace> {
    check_kernel(kernel)?;
    let rows = dets
        .rows()
        .iter()
        .map(|r| hangover_unchecked(r, kernel))
        .collect();
    dets.with_rows(rows)
}

/// Median filter (optional), hysteresis, hangover (optional) on one row.
pub fn frame_pipeline_row(row: &[f64], params: &FrameParams) -> Result<Vec<bool>> {
    params.validate()?;
    let smoothed;
    let probs = match params.median_kernel {
        Some(k) => {
            smoothed = median_filter_row(row, k)?;
            &smoothed[..]
        }
        None => row,
    };
    let dets = hysteresis_unchecked(probs, params.on_threshold, params.off_threshold);
    Ok(match params.hangover_kernel {
        Some(k) => hangover_unchecked(&dets, k),
        None => dets,
    })
}

/// Runs the frame-level chain on every class of `trace` with that class's
/// parameters.
pub fn frame_pipeline(
    trace: &FrameTrace,
    params: &BTreeMap<ClassLabel, FrameParams>,
) -> Result<DetectionTrace> {
    let rows = trace
        .classes()
        .iter()
        .zip(trace.rows())
        .map(|(label, row)| {
            let p = params.get(label).ok_or_else(|| {
                Error::Config(format!("no frame parameters for class '{label}'"))
            })?;
            frame_pipeline_row(row, p)
        })
        .collect::<Result<Vec<_>>>()?;
    DetectionTrace::new(
        trace.frame_rate(),
        trace.start_time(),
        trace.classes().to_vec(),
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sort-based sliding window with explicit replicate padding.
    fn median_oracle(row: &[f64], kernel: usize) -> Vec<f64> {
        let n = row.len() as isize;
        let half = (kernel / 2) as isize;
        (0..n)
            .map(|t| {
                let mut w: Vec<f64> = (t - half..=t + half)
                    .map(|i| row[i.clamp(0, n - 1) as usize])
                    .collect();
                w.sort_by(|a, b| a.partial_cmp(b).unwrap());
                w[w.len() / 2]
            })
            .collect()
    }

    /// Direct transcription of the majority-vote rule.
    fn hangover_oracle(row: &[bool], kernel: usize) -> Vec<bool> {
        let k = kernel - 1;
        (0..row.len())
            .map(|t| {
                let avail = k.min(t);
                let sum: usize = (0..=avail).map(|i| row[t - i] as usize).sum();
                sum as f64 > (avail + 1) as f64 / 2.0
            })
            .collect()
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_filter_row(&[0.1, 0.9, 0.1], 3).unwrap(),
            vec![0.1, 0.1, 0.1]
        );
        assert_eq!(
            median_filter_row(&[0.4; 4], 3).unwrap(),
            vec![0.4; 4]
        );
    }

    #[test]
    fn median_rejects_bad_kernels() {
        assert!(median_filter_row(&[0.1; 10], 4).is_err());
        assert!(median_filter_row(&[0.1; 10], 1).is_err());
        assert!(median_filter_row(&[0.1; 10], 11).is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(3..300);
            let k = [3, 5, 11, 33, 55][rng.random_range(0..5)];
            if k > n {
                continue;
            }
            // coarse values so the window holds many duplicates
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 19.0).collect();
            assert_eq!(median_filter_row(&row, k).unwrap(), median_oracle(&row, k));
        }
    }

    #[test]
    fn hysteresis_examples() {
        let row = [0.2, 0.8, 0.5, 0.4, 0.2, 0.6];
        let out: Vec<u8> = hysteresis_row(&row, 0.7, 0.3)
            .unwrap()
            .into_iter()
            .map(u8::from)
            .collect();
        assert_eq!(out, vec![0, 1, 1, 1, 0, 0]);
        assert_eq!(hysteresis_row(&[0.4, 0.6], 0.5, 0.5).unwrap(), vec![false, true]);
        assert_eq!(hysteresis_row(&[0.1, 0.2, 0.05], 0.7, 0.3).unwrap(), vec![false; 3]);
        assert!(hysteresis_row(&row, 0.3, 0.7).is_err());
    }

    #[test]
    fn hangover_examples() {
        // windows are [y_t, y_t-1, y_t-2]
        let out = hangover_row(&[false, true, true], 3).unwrap();
        assert!(out[2]);
        let out = hangover_row(&[false, false, true], 3).unwrap();
        assert!(!out[2]);
        assert!(hangover_row(&[true; 4], 4).is_err());
    }

    #[test]
    fn hangover_warm_up_uses_truncated_window() {
        // t=0: 1 of 1 active; t=1: 1 of 2 is not a strict majority
        assert_eq!(
            hangover_row(&[true, false, true], 5).unwrap(),
            vec![true, false, true]
        );
    }

    #[test]
    fn hangover_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..200);
            let k = [3, 11, 33, 55][rng.random_range(0..4)];
            let row: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            assert_eq!(hangover_row(&row, k).unwrap(), hangover_oracle(&row, k));
        }
    }

    #[test]
    fn pipeline_degenerate_is_plain_threshold() {
        let row = [0.1, 0.5, 0.49, 0.9, 0.2];
        let out = frame_pipeline_row(&row, &FrameParams::threshold(0.5)).unwrap();
        assert_eq!(out, vec![false, true, false, true, false]);
    }

    #[test]
    fn pipeline_extreme_grid_values_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let trace = FrameTrace::single(10.0, ClassLabel::bp(), row).unwrap();
        let params = FrameParams {
            median_kernel: Some(55),
            on_threshold: 0.9,
            off_threshold: 0.1,
            hangover_kernel: Some(55),
        };
        let map = BTreeMap::from([(ClassLabel::bp(), params)]);
        let out = frame_pipeline(&trace, &map).unwrap();
        assert_eq!(out.n_frames(), 3000);
    }

    #[test]
    fn pipeline_matches_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..400).map(|_| rng.random::<f64>()).collect())
                .collect();
            let classes = vec![ClassLabel::d(), ClassLabel::bp()];
            let trace = FrameTrace::new(10.0, 0.0, classes.clone(), rows).unwrap();
            let params = FrameParams {
                median_kernel: Some(11),
                on_threshold: 0.6,
                off_threshold: 0.4,
                hangover_kernel: Some(33),
            };
            let map: BTreeMap<_, _> = classes.iter().map(|c| (c.clone(), params)).collect();
            let manual = hangover(
                &hysteresis_binarize(&median_filter(&trace, 11).unwrap(), 0.6, 0.4).unwrap(),
                33,
            )
            .unwrap();
            assert_eq!(frame_pipeline(&trace, &map).unwrap(), manual);
        }
    }

    #[test]
    fn pipeline_requires_params_for_every_class() {
        let trace = FrameTrace::single(10.0, ClassLabel::d(), vec![0.5; 5]).unwrap();
        assert!(matches!(
            frame_pipeline(&trace, &BTreeMap::new()),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn median_of_constant_is_identity(c in 0.0f64..=1.0, n in 3usize..100) {
            let row = vec![c; n];
            prop_assert_eq!(median_filter_row(&row, 3).unwrap(), row);
        }

        #[test]
        fn raising_on_threshold_never_adds_activity(
            row in proptest::collection::vec(0.0f64..=1.0, 1..200),
            off in 0.05f64..0.5, a in 0.5f64..0.99, b in 0.5f64..0.99,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let count = |on| hysteresis_row(&row, on, off).unwrap().iter().filter(|&&x| x).count();
            prop_assert!(count(hi) <= count(lo));
        }

        #[test]
        fn equal_thresholds_is_plain_threshold(
            row in proptest::collection::vec(0.0f64..=1.0, 1..200), t in 0.01f64..0.99,
        ) {
            let expected: Vec<bool> = row.iter().map(|&p| p >= t).collect();
            prop_assert_eq!(hysteresis_row(&row, t, t).unwrap(), expected);
        }

        #[test]
        fn unanimous_windows_are_kept(
            row in proptest::collection::vec(any::<bool>(), 1..200), k in prop::sample::select(vec![3usize, 5, 11]),
        ) {
            let out = hangover_row(&row, k).unwrap();
            for t in 0..row.len() {
                let lo = t.saturating_sub(k - 1);
                let w = &row[lo..=t];
                if w.iter().all(|&x| x) { prop_assert!(out[t]); }
                if w.iter().all(|&x| !x) { prop_assert!(!out[t]); }
            }
        }
    }
}
