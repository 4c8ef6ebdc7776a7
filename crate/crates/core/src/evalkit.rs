//! Event-level evaluation: one-to-one IoU matching, precision / recall / F1,
//! fold averaging, precision-recall sweeps and the equal precision-recall
//! operating point.
//!
//! Fold-level scores follow one convention throughout: precision and recall
//! are averaged over folds and F1 is recomputed from the averages. F1 values
//! are never averaged directly.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Fold, Recording};
use crate::error::{Error, Result};
use crate::eventpost::EventParams;
use crate::framepost::FrameParams;
use crate::pipeline::{postprocess_row, ClassConfig, PostProcessingConfig};
use crate::types::{iou, ClassLabel, Event};

/// Minimum IoU for a detection to count as a hit.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub gt: Event,
    pub det: Event,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<Event>,
    pub unmatched_det: Vec<Event>,
}

/// Counts that can be summed across recordings before forming ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou_sum: f64,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum += o.iou_sum;
    }
}

fn check_match_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::param(format!(
            "match threshold must lie in (0, 1], got {t}"
        )));
    }
    Ok(())
}

fn by_time(events: &[Event]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..events.len()).collect();
    idx.sort_by(|&a, &b| {
        events[a]
            .t_start
            .total_cmp(&events[b].t_start)
            .then(events[a].t_end.total_cmp(&events[b].t_end))
    });
    idx
}

/// Greedy one-to-one matching. Returns `(gt_index, det_index, iou)` triples
/// in acceptance order.
///
/// Candidate pairs with `iou >= threshold` are visited by descending IoU,
/// ties broken by the earlier ground-truth event and then the earlier
/// detection (both in start-time order).
fn greedy_match(gt: &[Event], det: &[Event], threshold: f64) -> Vec<(usize, usize, f64)> {
    let gt_order = by_time(gt);
    let det_order = by_time(det);
    let det_starts: Vec<f64> = det_order.iter().map(|&i| det[i].t_start).collect();
    let longest = det.iter().map(Event::duration).fold(0.0, f64::max);

    // (iou, gt rank, det rank)
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (gr, &gi) in gt_order.iter().enumerate() {
        let g = &gt[gi];
        let lo = det_starts.partition_point(|&s| s < g.t_start - longest);
        let hi = det_starts.partition_point(|&s| s < g.t_end);
        for dr in lo..hi {
            let v = iou(g, &det[det_order[dr]]);
            if v >= threshold {
                cands.push((v, gr, dr));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gt_used = vec![false; gt.len()];
    let mut det_used = vec![false; det.len()];
    let mut out = Vec::new();
    for (v, gr, dr) in cands {
        if !gt_used[gr] && !det_used[dr] {
            gt_used[gr] = true;
            det_used[dr] = true;
            out.push((gt_order[gr], det_order[dr], v));
        }
    }
    out
}

/// Matches detections to ground truth of a single class.
pub fn match_events(gt: &[Event], det: &[Event], threshold: f64) -> Result<MatchResult> {
    check_match_threshold(threshold)?;
    let pairs = greedy_match(gt, det, threshold);
    let mut gt_hit = vec![false; gt.len()];
    let mut det_hit = vec![false; det.len()];
    for &(g, d, _) in &pairs {
        gt_hit[g] = true;
        det_hit[d] = true;
    }
    Ok(MatchResult {
        pairs: pairs
            .into_iter()
            .map(|(g, d, v)| MatchedPair {
                gt: gt[g].clone(),
                det: det[d].clone(),
                iou: v,
            })
            .collect(),
        unmatched_gt: gt
            .iter()
            .zip(&gt_hit)
            .filter(|(_, &h)| !h)
            .map(|(e, _)| e.clone())
            .collect(),
        unmatched_det: det
            .iter()
            .zip(&det_hit)
            .filter(|(_, &h)| !h)
            .map(|(e, _)| e.clone())
            .collect(),
    })
}

/// Same matching as [`match_events`] but only the counts are kept.
pub fn match_counts(gt: &[Event], det: &[Event], threshold: f64) -> Result<MatchCounts> {
    check_match_threshold(threshold)?;
    let pairs = greedy_match(gt, det, threshold);
    Ok(MatchCounts {
        tp: pairs.len(),
        fp: det.len() - pairs.len(),
        fn_: gt.len() - pairs.len(),
        iou_sum: pairs.iter().map(|p| p.2).sum(),
    })
}

/// Precision, recall, F1 and mean matched IoU for one class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_iou: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

impl ClassMetrics {
    pub fn from_counts(c: MatchCounts) -> Self {
        let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
        let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
        ClassMetrics {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
            mean_iou: ratio(c.iou_sum, c.tp as f64),
        }
    }
}

pub fn pr_from_matching(m: &MatchResult) -> ClassMetrics {
    ClassMetrics::from_counts(MatchCounts {
        tp: m.pairs.len(),
        fp: m.unmatched_det.len(),
        fn_: m.unmatched_gt.len(),
        iou_sum: m.pairs.iter().map(|p| p.iou).sum(),
    })
}

/// Averages precision, recall and mean IoU over folds and recomputes F1
/// from the averaged precision and recall. Counts are summed.
pub fn fold_average_metrics(per_fold: &[ClassMetrics]) -> Result<ClassMetrics> {
    if per_fold.is_empty() {
        return Err(Error::InvalidInput(
            "cannot average metrics over zero folds".into(),
        ));
    }
    let n = per_fold.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_fold.iter().map(f).sum::<f64>() / n;
    let precision = mean(|m| m.precision);
    let recall = mean(|m| m.recall);
    Ok(ClassMetrics {
        tp: per_fold.iter().map(|m| m.tp).sum(),
        fp: per_fold.iter().map(|m| m.fp).sum(),
        fn_: per_fold.iter().map(|m| m.fn_).sum(),
        precision,
        recall,
        f1: f1_score(precision, recall),
        mean_iou: mean(|m| m.mean_iou),
    })
}

/// Mean of per-class F1 values.
pub fn macro_f1(per_class: &BTreeMap<ClassLabel, ClassMetrics>) -> f64 {
    if per_class.is_empty() {
        return 0.0;
    }
    per_class.values().map(|m| m.f1).sum::<f64>() / per_class.len() as f64
}

/// Per-fold and fold-averaged metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub folds: Vec<String>,
    /// `per_fold[i]` belongs to `folds[i]`.
    pub per_fold: Vec<BTreeMap<ClassLabel, ClassMetrics>>,
    pub averaged: BTreeMap<ClassLabel, ClassMetrics>,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn from_folds(
        folds: Vec<String>,
        per_fold: Vec<BTreeMap<ClassLabel, ClassMetrics>>,
    ) -> Result<Self> {
        if folds.len() != per_fold.len() {
            return Err(Error::InvalidInput(format!(
                "{} fold names for {} fold results",
                folds.len(),
                per_fold.len()
            )));
        }
        let classes: Vec<ClassLabel> = per_fold
            .first()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        let mut averaged = BTreeMap::new();
        for c in classes {
            let series = per_fold
                .iter()
                .map(|m| {
                    m.get(&c).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("class '{c}' missing from a fold"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            averaged.insert(c, fold_average_metrics(&series)?);
        }
        let macro_f1 = macro_f1(&averaged);
        Ok(EvalReport {
            folds,
            per_fold,
            averaged,
            macro_f1,
        })
    }
}

/// Pooled match counts of one class over a set of recordings.
pub fn class_counts(
    recordings: &[Recording],
    label: &ClassLabel,
    config: &ClassConfig,
    match_threshold: f64,
) -> Result<MatchCounts> {
    let mut total = MatchCounts::default();
    for rec in recordings {
        let row = rec.trace.row_of(label)?;
        let det = postprocess_row(
            row,
            rec.trace.frame_rate(),
            rec.trace.start_time(),
            label,
            config,
        )?;
        total += match_counts(rec.truth_of(label), &det, match_threshold)?;
    }
    Ok(total)
}

/// Metrics of every configured class on one fold. Counts are pooled over
/// the fold's recordings.
pub fn evaluate_fold(
    fold: &Fold,
    config: &PostProcessingConfig,
    match_threshold: f64,
) -> Result<BTreeMap<ClassLabel, ClassMetrics>> {
    config
        .iter()
        .map(|(label, cfg)| {
            class_counts(&fold.recordings, label, cfg, match_threshold)
                .map(|c| (label.clone(), ClassMetrics::from_counts(c)))
        })
        .collect()
}

/// Evaluates one configuration on each fold and averages.
pub fn evaluate_folds(
    folds: &[Fold],
    config: &PostProcessingConfig,
    match_threshold: f64,
) -> Result<EvalReport> {
    let per_fold = folds
        .iter()
        .map(|f| evaluate_fold(f, config, match_threshold))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_folds(folds.iter().map(|f| f.name.clone()).collect(), per_fold)
}

/// One precision-recall operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrPoint {
    pub class: ClassLabel,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Thresholds 0.02, 0.04, ..., 0.98.
pub fn default_sweep() -> Vec<f64> {
    (1..=49).map(|i| i as f64 / 50.0).collect()
}

/// Sweeps a plain threshold (on = off, no smoothing) and reports precision
/// and recall of the full pipeline at each point, with event-level
/// parameters held at `event_params`.
///
/// Points are grouped by class in `classes` order, thresholds ascending.
pub fn pr_curve(
    recordings: &[Recording],
    classes: &[ClassLabel],
    sweep: &[f64],
    event_params: &BTreeMap<ClassLabel, EventParams>,
    match_threshold: f64,
) -> Result<Vec<PrPoint>> {
    if sweep.is_empty() {
        return Err(Error::param("threshold sweep is empty"));
    }
    if sweep.windows(2).any(|w| w[0] >= w[1]) || sweep[0] <= 0.0 || sweep[sweep.len() - 1] >= 1.0 {
        return Err(Error::param(
            "sweep thresholds must be strictly increasing inside (0, 1)",
        ));
    }
    let mut points = Vec::with_capacity(classes.len() * sweep.len());
    for label in classes {
        let event = *event_params
            .get(label)
            .ok_or_else(|| Error::Config(format!("no event parameters for class '{label}'")))?;
        let row: Vec<PrPoint> = sweep
            .par_iter()
            .map(|&t| {
                let cfg = ClassConfig {
                    frame: FrameParams::threshold(t),
                    event,
                };
                let m = ClassMetrics::from_counts(class_counts(
                    recordings,
                    label,
                    &cfg,
                    match_threshold,
                )?);
                Ok(PrPoint {
                    class: label.clone(),
                    threshold: t,
                    precision: m.precision,
                    recall: m.recall,
                })
            })
            .collect::<Result<_>>()?;
        points.extend(row);
    }
    Ok(points)
}

/// Pointwise mean of several curves computed on the same sweep.
pub fn average_curves(curves: &[Vec<PrPoint>]) -> Result<Vec<PrPoint>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidInput("no curves to average".into()))?;
    let n = curves.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut precision = 0.0;
            let mut recall = 0.0;
            for c in curves {
                let q = c.get(i).filter(|q| q.class == p.class && q.threshold == p.threshold);
                let q = q.ok_or_else(|| {
                    Error::InvalidInput("curves were computed on different sweeps".into())
                })?;
                precision += q.precision;
                recall += q.recall;
            }
            Ok(PrPoint {
                class: p.class.clone(),
                threshold: p.threshold,
                precision: precision / n,
                recall: recall / n,
            })
        })
        .collect()
}

/// Threshold whose point minimises `|precision - recall|`; ties go to the
/// lower threshold. Points with precision and recall both zero are skipped
/// unless every point is like that. `points` must all belong to one class.
pub fn equal_pr_threshold(points: &[PrPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("empty precision-recall curve".into()));
    }
    let live: Vec<&PrPoint> = points
        .iter()
        .filter(|p| p.precision > 0.0 || p.recall > 0.0)
        .collect();
    let mut pool = if live.is_empty() { points.iter().collect() } else { live };
    pool.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    let mut best = pool[0];
    for p in &pool[1..] {
        if (p.precision - p.recall).abs() < (best.precision - best.recall).abs() {
            best = p;
        }
    }
    Ok(best.threshold)
}

/// Writes curve points as `class\tthreshold\tprecision\trecall` rows with a
/// header line.
pub fn write_pr_tsv<W: Write>(mut w: W, points: &[PrPoint]) -> std::io::Result<()> {
    writeln!(w, "class\tthreshold\tprecision\trecall")?;
    for p in points {
        writeln!(
            w,
            "{}\t{:.2}\t{:.6}\t{:.6}",
            p.class, p.threshold, p.precision, p.recall
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FrameTrace;
    use proptest::prelude::*;

    fn ev(a: f64, b: f64) -> Event {
        Event::new(ClassLabel::d(), a, b).unwrap()
    }

    fn point(t: f64, p: f64, r: f64) -> PrPoint {
        PrPoint {
            class: ClassLabel::d(),
            threshold: t,
            precision: p,
            recall: r,
        }
    }

    #[test]
    fn greedy_prefers_highest_iou() {
        let m = match_events(&[ev(0.0, 10.0)], &[ev(0.0, 6.0), ev(5.0, 10.0)], 0.3).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].det, ev(0.0, 6.0));
        assert!((m.pairs[0].iou - 0.6).abs() < 1e-15);
        assert_eq!(m.unmatched_det, vec![ev(5.0, 10.0)]);
        assert!(m.unmatched_gt.is_empty());

        let c = pr_from_matching(&m);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        assert_eq!(c.precision, 0.5);
        assert_eq!(c.recall, 1.0);
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_and_disjoint_matching() {
        let set = vec![ev(0.0, 1.0), ev(2.0, 4.0), ev(5.0, 9.0)];
        let m = match_events(&set, &set, 0.3).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.iou == 1.0));
        let c = pr_from_matching(&m);
        assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));

        let far = vec![ev(20.0, 21.0), ev(30.0, 31.0)];
        assert!(match_events(&set, &far, 0.3).unwrap().pairs.is_empty());
    }

    #[test]
    fn tie_goes_to_earlier_ground_truth() {
        // the detection overlaps both ground-truth events equally
        let m = match_events(&[ev(0.0, 2.0), ev(3.0, 5.0)], &[ev(1.0, 4.0)], 0.1).unwrap();
        assert_eq!(m.pairs[0].gt, ev(0.0, 2.0));
    }

    #[test]
    fn empty_everything_scores_zero() {
        let c = pr_from_matching(&match_events(&[], &[], 0.3).unwrap());
        assert_eq!(c, ClassMetrics::default());
    }

    #[test]
    fn bad_match_threshold() {
        assert!(match_events(&[], &[], 0.0).is_err());
        assert!(match_events(&[], &[], 1.5).is_err());
        assert!(match_events(&[], &[], 1.0).is_ok());
    }

    fn pr(p: f64, r: f64) -> ClassMetrics {
        ClassMetrics {
            precision: p,
            recall: r,
            f1: f1_score(p, r),
            ..Default::default()
        }
    }

    #[test]
    fn fold_average_recomputes_f1() {
        let avg = fold_average_metrics(&[pr(0.5, 1.0), pr(0.7, 0.6)]).unwrap();
        assert!((avg.precision - 0.6).abs() < 1e-15);
        assert!((avg.recall - 0.8).abs() < 1e-15);
        assert!((avg.f1 - 0.96 / 1.4).abs() < 1e-12);

        // mean of the per-fold F1 scores is a different number
        let mean_f1 = (f1_score(0.5, 1.0) + f1_score(0.7, 0.6)) / 2.0;
        assert!((mean_f1 - avg.f1).abs() > 1e-3);

        let same = fold_average_metrics(&[pr(0.3, 0.9), pr(0.3, 0.9)]).unwrap();
        assert!((same.f1 - f1_score(0.3, 0.9)).abs() < 1e-15);

        assert!(fold_average_metrics(&[]).is_err());
    }

    #[test]
    fn equal_pr_examples() {
        let curve = [point(0.3, 0.4, 0.8), point(0.5, 0.6, 0.6), point(0.7, 0.8, 0.3)];
        assert_eq!(equal_pr_threshold(&curve).unwrap(), 0.5);
        let tie = [point(0.5, 0.7, 0.5), point(0.3, 0.5, 0.7), point(0.9, 0.9, 0.1)];
        assert_eq!(equal_pr_threshold(&tie).unwrap(), 0.3);
        assert!(equal_pr_threshold(&[]).is_err());
    }

    #[test]
    fn equal_pr_skips_empty_detection_points() {
        let curve = [point(0.02, 0.0, 0.0), point(0.5, 0.6, 0.4), point(0.98, 0.0, 0.0)];
        assert_eq!(equal_pr_threshold(&curve).unwrap(), 0.5);
        let dead = [point(0.4, 0.0, 0.0), point(0.2, 0.0, 0.0)];
        assert_eq!(equal_pr_threshold(&dead).unwrap(), 0.2);
    }

    #[test]
    fn pr_curve_on_clean_trace() {
        // p = 0.95 inside two calls, 0.02 elsewhere, 10 fps
        let mut row = vec![0.02; 200];
        row[20..50].fill(0.95);
        row[120..160].fill(0.95);
        let trace = FrameTrace::single(10.0, ClassLabel::d(), row).unwrap();
        let truth = BTreeMap::from([(ClassLabel::d(), vec![ev(2.0, 5.0), ev(12.0, 16.0)])]);
        let rec = Recording::new("r", trace, truth);
        let params = BTreeMap::from([(
            ClassLabel::d(),
            EventParams {
                min_gap: 0.5,
                min_duration: 0.29,
                max_duration: 6.78,
            },
        )]);
        let pts = pr_curve(&[rec], &[ClassLabel::d()], &default_sweep(), &params, 0.3).unwrap();
        assert_eq!(pts.len(), 49);
        for p in &pts {
            if p.threshold > 0.02 && p.threshold < 0.95 {
                assert_eq!((p.precision, p.recall), (1.0, 1.0), "t={}", p.threshold);
            }
        }
        // nothing is ever detected above 0.95
        let high = pr_curve(
            &[Recording::new(
                "r",
                FrameTrace::single(10.0, ClassLabel::d(), vec![0.5; 50]).unwrap(),
                BTreeMap::from([(ClassLabel::d(), vec![ev(1.0, 2.0)])]),
            )],
            &[ClassLabel::d()],
            &[0.98],
            &params,
            0.3,
        )
        .unwrap();
        assert_eq!(high[0].recall, 0.0);
        assert!(pr_curve(&[], &[ClassLabel::d()], &[], &params, 0.3).is_err());
        assert!(pr_curve(&[], &[ClassLabel::d()], &[0.5, 0.4], &params, 0.3).is_err());
    }

    #[test]
    fn tsv_layout() {
        let mut buf = Vec::new();
        write_pr_tsv(&mut buf, &[point(0.02, 0.5, 0.25)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "class\tthreshold\tprecision\trecall\nd\t0.02\t0.500000\t0.250000\n"
        );
    }

    #[test]
    fn macro_f1_independent_of_insertion_order() {
        let a: BTreeMap<_, _> = [(ClassLabel::bp(), pr(0.2, 0.4)), (ClassLabel::d(), pr(0.9, 0.8))]
            .into_iter()
            .collect();
        let b: BTreeMap<_, _> = [(ClassLabel::d(), pr(0.9, 0.8)), (ClassLabel::bp(), pr(0.2, 0.4))]
            .into_iter()
            .collect();
        assert_eq!(macro_f1(&a), macro_f1(&b));
    }

    fn event_list() -> impl Strategy<Value = Vec<Event>> {
        proptest::collection::vec((0.0f64..100.0, 0.1f64..10.0), 0..25)
            .prop_map(|v| v.into_iter().map(|(s, l)| ev(s, s + l)).collect())
    }

    proptest! {
        #[test]
        fn matching_is_one_to_one(gt in event_list(), det in event_list(), thr in 0.05f64..=1.0) {
            let m = match_events(&gt, &det, thr).unwrap();
            let c = pr_from_matching(&m);
            prop_assert_eq!(c.tp + c.fn_, gt.len());
            prop_assert_eq!(c.tp + c.fp, det.len());
            prop_assert!(m.pairs.iter().all(|p| p.iou >= thr));
            if c.precision > 0.0 && c.recall > 0.0 {
                prop_assert!(c.f1 >= c.precision.min(c.recall) - 1e-12);
                prop_assert!(c.f1 <= c.precision.max(c.recall) + 1e-12);
            }
            let counts = match_counts(&gt, &det, thr).unwrap();
            prop_assert_eq!((counts.tp, counts.fp, counts.fn_), (c.tp, c.fp, c.fn_));
        }
    }
}
