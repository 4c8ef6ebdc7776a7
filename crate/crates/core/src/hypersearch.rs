//! Hyperparameter selection for the post-processing chain.
//!
//! Two two-stage strategies are provided. Forward-search fixes event-level
//! parameters from call-duration statistics, searches frame-level parameters,
//! then searches event-level parameters with the frame-level winner fixed.
//! Backward-search fixes a plain threshold at the equal precision-recall
//! point of the dev-averaged PR curve, searches event-level parameters, then
//! searches frame-level parameters with the event-level winner fixed.
//!
//! Every candidate is scored by dev F1: precision and recall are computed per
//! dev fold, averaged, and F1 is recomputed from the averages. Classes are
//! searched independently because a class's metrics depend only on its own
//! parameters. Candidates are scored in parallel; the winner is the first
//! maximum in enumeration order, so results do not depend on thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Fold;
use crate::error::{Error, Result};
use crate::evalkit::{
    average_curves, class_counts, default_sweep, equal_pr_threshold, evaluate_fold,
    f1_score, fold_average_metrics, match_counts, pr_curve, ClassMetrics, EvalReport,
    MatchCounts, DEFAULT_MATCH_THRESHOLD,
};
use crate::eventpost::{refine_events, aggregate_row, EventParams};
use crate::framepost::{hangover_unchecked, hysteresis_unchecked, median_filter_row, FrameParams};
use crate::ingest::{GroupingMap, RawLabel};
use crate::pipeline::{ClassConfig, PostProcessingConfig};
use crate::types::{ClassLabel, Event};

/// Inclusive arithmetic range, rounded to 1e-9 so that grid values compare
/// exactly (`0.1 * 3` would otherwise be `0.30000000000000004`).
pub fn inclusive_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

/// Candidate values for the frame-level parameters of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpace {
    pub median_kernels: Vec<Option<usize>>,
    pub on_thresholds: Vec<f64>,
    pub off_thresholds: Vec<f64>,
    pub hangover_kernels: Vec<Option<usize>>,
}

impl Default for FrameSpace {
    fn default() -> Self {
        let kernels = vec![None, Some(11), Some(33), Some(55)];
        let thresholds = inclusive_range(0.1, 0.9, 0.1);
        FrameSpace {
            median_kernels: kernels.clone(),
            on_thresholds: thresholds.clone(),
            off_thresholds: thresholds,
            hangover_kernels: kernels,
        }
    }
}

/// Candidate values for the event-level parameters of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpace {
    pub min_gaps: Vec<f64>,
    pub min_durations: Vec<f64>,
    pub max_durations: Vec<f64>,
}

impl EventSpace {
    /// Default ranges for the three grouped classes.
    pub fn defaults_for(label: &ClassLabel) -> Option<Self> {
        let (min_d, max_d) = match label.as_str() {
            "bmabz" => (inclusive_range(2.0, 5.0, 0.5), inclusive_range(25.0, 40.0, 2.5)),
            "d" => (inclusive_range(0.6, 3.0, 0.4), inclusive_range(5.0, 11.0, 1.0)),
            "bp" => (inclusive_range(0.3, 1.5, 0.2), inclusive_range(2.0, 5.0, 0.5)),
            _ => return None,
        };
        Some(EventSpace {
            min_gaps: inclusive_range(0.1, 0.9, 0.1),
            min_durations: min_d,
            max_durations: max_d,
        })
    }
}

/// Per-class search grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub frame: BTreeMap<ClassLabel, FrameSpace>,
    pub event: BTreeMap<ClassLabel, EventSpace>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let classes = ClassLabel::defaults();
        SearchSpace {
            frame: classes
                .iter()
                .map(|c| (c.clone(), FrameSpace::default()))
                .collect(),
            event: classes
                .iter()
                .map(|c| (c.clone(), EventSpace::defaults_for(c).expect("default class")))
                .collect(),
        }
    }
}

impl SearchSpace {
    /// Classes covered by the space; frame and event grids must agree.
    pub fn classes(&self) -> Result<Vec<ClassLabel>> {
        let frame: Vec<_> = self.frame.keys().cloned().collect();
        let event: Vec<_> = self.event.keys().cloned().collect();
        if frame != event {
            return Err(Error::Config(format!(
                "frame grid classes {frame:?} differ from event grid classes {event:?}"
            )));
        }
        if frame.is_empty() {
            return Err(Error::Config("search space has no classes".into()));
        }
        Ok(frame)
    }

    /// Restricts the space to a single class.
    pub fn only(&self, label: &ClassLabel) -> Result<Self> {
        let missing = || Error::Config(format!("class '{label}' not in search space"));
        Ok(SearchSpace {
            frame: BTreeMap::from([(label.clone(), self.frame.get(label).ok_or_else(missing)?.clone())]),
            event: BTreeMap::from([(label.clone(), self.event.get(label).ok_or_else(missing)?.clone())]),
        })
    }
}

/// Frame-level candidates in lexicographic order of
/// (median kernel, on, off, hangover kernel), skipping `off > on`.
pub fn frame_grid(space: &FrameSpace) -> Vec<FrameParams> {
    let mut out = Vec::new();
    for &median_kernel in &space.median_kernels {
        for &on in &space.on_thresholds {
            for &off in space.off_thresholds.iter().filter(|&&off| off <= on) {
                for &hangover_kernel in &space.hangover_kernels {
                    out.push(FrameParams {
                        median_kernel,
                        on_threshold: on,
                        off_threshold: off,
                        hangover_kernel,
                    });
                }
            }
        }
    }
    out
}

/// Event-level candidates in lexicographic order of
/// (min gap, min duration, max duration).
pub fn event_grid(space: &EventSpace) -> Vec<EventParams> {
    let mut out = Vec::new();
    for &min_gap in &space.min_gaps {
        for &min_duration in &space.min_durations {
            for &max_duration in &space.max_durations {
                out.push(EventParams {
                    min_gap,
                    min_duration,
                    max_duration,
                });
            }
        }
    }
    out
}

/// Minimum, maximum and mean call duration (seconds) of one raw call type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

/// Call-duration statistics per raw call type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationTable(pub BTreeMap<RawLabel, DurationStats>);

impl DurationTable {
    fn from_rows(rows: [(RawLabel, f64, f64, f64); 7]) -> Self {
        DurationTable(
            rows.into_iter()
                .map(|(l, min, max, avg)| (l, DurationStats { min, max, avg }))
                .collect(),
        )
    }

    /// Training-set statistics of the seven annotated call types.
    #[allow(clippy::approx_constant)]
    pub fn training() -> Self {
        use RawLabel::*;
        Self::from_rows([
            (BmA, 2.12, 27.11, 7.19),
            (BmB, 3.14, 19.51, 7.83),
            (BmZ, 3.87, 28.07, 12.76),
            (BmD, 0.29, 6.78, 1.42),
            (BpD, 0.29, 2.70, 1.12),
            (Bp20, 0.48, 3.08, 1.52),
            (Bp20plus, 0.76, 2.91, 1.50),
        ])
    }

    /// Development-set statistics of the seven annotated call types.
    pub fn development() -> Self {
        use RawLabel::*;
        Self::from_rows([
            (BmA, 2.12, 36.62, 7.12),
            (BmB, 1.29, 18.1, 8.35),
            (BmZ, 5.15, 29.45, 12.64),
            (BmD, 0.74, 7.36, 2.87),
            (BpD, 0.37, 2.58, 1.08),
            (Bp20, 0.46, 2.83, 1.35),
            (Bp20plus, 0.64, 2.58, 1.43),
        ])
    }

    /// Min / max over the raw call types that make up `label`.
    pub fn group_bounds(&self, label: &ClassLabel, grouping: &GroupingMap) -> Result<(f64, f64)> {
        let mut bounds: Option<(f64, f64)> = None;
        for raw in grouping.members(label) {
            let s = self.0.get(&raw).ok_or_else(|| {
                Error::Config(format!("no duration statistics for raw call type '{raw}'"))
            })?;
            bounds = Some(match bounds {
                None => (s.min, s.max),
                Some((lo, hi)) => (lo.min(s.min), hi.max(s.max)),
            });
        }
        bounds.ok_or_else(|| Error::Config(format!("no raw call types map to class '{label}'")))
    }
}

/// Minimum inter-event gap used before event-level parameters are searched.
pub const EMPIRICAL_MIN_GAP: f64 = 0.5;

/// Event parameters derived from duration statistics: gap 0.5 s, duration
/// bounds from the extremes of each group's constituent call types.
pub fn empirical_event_defaults(
    stats: &DurationTable,
    grouping: &GroupingMap,
) -> Result<BTreeMap<ClassLabel, EventParams>> {
    for raw in grouping.raw_labels() {
        if !stats.0.contains_key(&raw) {
            return Err(Error::Config(format!(
                "grouping maps raw call type '{raw}' which has no duration statistics"
            )));
        }
    }
    grouping
        .classes()
        .into_iter()
        .map(|c| {
            let (min_duration, max_duration) = stats.group_bounds(&c, grouping)?;
            Ok((
                c,
                EventParams {
                    min_gap: EMPIRICAL_MIN_GAP,
                    min_duration,
                    max_duration,
                },
            ))
        })
        .collect()
}

/// Unoptimised reference configuration: plain 0.5 threshold, no smoothing,
/// empirical event parameters.
pub fn empirical_baseline(defaults: &BTreeMap<ClassLabel, EventParams>) -> PostProcessingConfig {
    defaults
        .iter()
        .map(|(c, &event)| {
            (
                c.clone(),
                ClassConfig {
                    frame: FrameParams::threshold(0.5),
                    event,
                },
            )
        })
        .collect()
}

/// One cross-validation turn: indices of the dev folds and the test fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Turn {
    pub dev: Vec<usize>,
    pub test: usize,
}

/// Fold names and the turn schedule derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: Vec<String>,
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec {
            folds: vec![
                "casey2017".into(),
                "kerguelen2014".into(),
                "kerguelen2015".into(),
            ],
        }
    }
}

impl FoldSpec {
    /// Turn `i` holds out fold `i`; the remaining folds, in order, are dev.
    pub fn turns(&self) -> Vec<Turn> {
        (0..self.folds.len())
            .map(|test| Turn {
                dev: (0..self.folds.len()).filter(|&i| i != test).collect(),
                test,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Forward,
    Backward,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Forward => "forward",
            Strategy::Backward => "backward",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Strategy::Forward),
            "backward" => Ok(Strategy::Backward),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}', expected forward or backward"
            ))),
        }
    }
}

/// What backward-search Stage 2 searches over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardStage2 {
    /// All four frame-level parameters, thresholds included.
    #[default]
    AllFrameParams,
    /// Only the two kernels; on = off stays at the equal-PR threshold.
    KernelsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOptions {
    pub match_threshold: f64,
    /// Threshold sweep for the equal-PR point of backward-search.
    pub sweep: Vec<f64>,
    pub backward_stage2: BackwardStage2,
    /// Minimum number of folds accepted by cross-validation.
    pub min_folds: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            sweep: default_sweep(),
            backward_stage2: BackwardStage2::default(),
            min_folds: 3,
        }
    }
}

/// Dev-fold F1 of one class under `config`, computed directly through the
/// public pipeline. Errors propagate.
pub fn dev_f1(
    dev_folds: &[&Fold],
    label: &ClassLabel,
    config: &ClassConfig,
    match_threshold: f64,
) -> Result<f64> {
    let per_fold = dev_folds
        .iter()
        .map(|f| {
            class_counts(&f.recordings, label, config, match_threshold).map(ClassMetrics::from_counts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fold_average_metrics(&per_fold)?.f1)
}

/// Dev F1 of every class in `config`.
pub fn evaluate_candidate(
    config: &PostProcessingConfig,
    dev_folds: &[&Fold],
    match_threshold: f64,
) -> Result<BTreeMap<ClassLabel, f64>> {
    config
        .iter()
        .map(|(c, cfg)| dev_f1(dev_folds, c, cfg, match_threshold).map(|f| (c.clone(), f)))
        .collect()
}

struct PreparedRecording {
    frame_rate: f64,
    start_time: f64,
    /// Median-smoothed rows keyed by kernel; `None` marks a kernel that is
    /// invalid for this recording (e.g. longer than the trace).
    smoothed: BTreeMap<Option<usize>, Option<Vec<f64>>>,
    truth: Vec<Event>,
}

/// One class's view of the dev folds with median filtering precomputed for
/// every kernel in the grid.
struct ClassData {
    label: ClassLabel,
    folds: Vec<Vec<PreparedRecording>>,
}

impl ClassData {
    fn prepare(folds: &[&Fold], label: &ClassLabel, kernels: &[Option<usize>]) -> Result<Self> {
        let mut kernels = kernels.to_vec();
        kernels.push(None);
        kernels.sort();
        kernels.dedup();
        let folds = folds
            .iter()
            .map(|fold| {
                fold.recordings
                    .iter()
                    .map(|rec| {
                        let row = rec.trace.row_of(label)?;
                        let smoothed = kernels
                            .par_iter()
                            .map(|&k| {
                                let r = match k {
                                    None => Some(row.to_vec()),
                                    Some(k) => median_filter_row(row, k).ok(),
                                };
                                (k, r)
                            })
                            .collect();
                        Ok(PreparedRecording {
                            frame_rate: rec.trace.frame_rate(),
                            start_time: rec.trace.start_time(),
                            smoothed,
                            truth: rec.truth_of(label).to_vec(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassData {
            label: label.clone(),
            folds,
        })
    }

    fn try_score(&self, cfg: &ClassConfig, match_threshold: f64) -> Option<f64> {
        cfg.frame.validate().ok()?;
        cfg.event.validate().ok()?;
        let mut precision = 0.0;
        let mut recall = 0.0;
        for fold in &self.folds {
            let mut counts = MatchCounts::default();
            for rec in fold {
                let row = rec.smoothed.get(&cfg.frame.median_kernel)?.as_ref()?;
                let dets =
                    hysteresis_unchecked(row, cfg.frame.on_threshold, cfg.frame.off_threshold);
                let dets = match cfg.frame.hangover_kernel {
                    Some(k) => hangover_unchecked(&dets, k),
                    None => dets,
                };
                let events = refine_events(
                    &aggregate_row(&dets, rec.frame_rate, rec.start_time, &self.label),
                    &cfg.event,
                );
                counts += match_counts(&rec.truth, &events, match_threshold).ok()?;
            }
            let m = ClassMetrics::from_counts(counts);
            precision += m.precision;
            recall += m.recall;
        }
        let n = self.folds.len() as f64;
        Some(f1_score(precision / n, recall / n))
    }

    /// Scores all candidates in parallel and returns the first best.
    fn best(&self, candidates: &[ClassConfig], match_threshold: f64) -> Result<(ClassConfig, f64, usize)> {
        if candidates.is_empty() {
            return Err(Error::Config(format!(
                "empty search grid for class '{}'",
                self.label
            )));
        }
        let scores: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|c| self.try_score(c, match_threshold))
            .collect();
        let failures = scores.iter().filter(|s| s.is_none()).count();
        let mut best = 0;
        let mut best_score = scores[0].unwrap_or(0.0);
        for (i, s) in scores.iter().enumerate().skip(1) {
            let s = s.unwrap_or(0.0);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        Ok((candidates[best], best_score, failures))
    }
}

/// Result of searching one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSearch {
    pub config: ClassConfig,
    /// Best dev F1 after Stage 1.
    pub stage1_dev_f1: f64,
    /// Dev F1 of the final configuration.
    pub dev_f1: f64,
    /// Plain threshold fixed by backward-search Stage 1.
    pub equal_pr_threshold: Option<f64>,
    pub stage1_candidates: usize,
    pub stage2_candidates: usize,
    /// Candidates whose pipeline failed and were scored 0.
    pub failed_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub strategy: Strategy,
    pub per_class: BTreeMap<ClassLabel, ClassSearch>,
}

impl SearchOutcome {
    pub fn chosen(&self) -> PostProcessingConfig {
        self.per_class
            .iter()
            .map(|(c, s)| (c.clone(), s.config))
            .collect()
    }
}

fn lookup<'a, T>(map: &'a BTreeMap<ClassLabel, T>, label: &ClassLabel, what: &str) -> Result<&'a T> {
    map.get(label)
        .ok_or_else(|| Error::Config(format!("no {what} for class '{label}'")))
}

fn forward_class(
    dev: &[&Fold],
    label: &ClassLabel,
    space: &SearchSpace,
    defaults: &BTreeMap<ClassLabel, EventParams>,
    opts: &SearchOptions,
) -> Result<ClassSearch> {
    let fspace = lookup(&space.frame, label, "frame grid")?;
    let espace = lookup(&space.event, label, "event grid")?;
    let event = *lookup(defaults, label, "empirical event parameters")?;
    let data = ClassData::prepare(dev, label, &fspace.median_kernels)?;

    let stage1: Vec<ClassConfig> = frame_grid(fspace)
        .into_iter()
        .map(|frame| ClassConfig { frame, event })
        .collect();
    let (best1, f1_1, fail1) = data.best(&stage1, opts.match_threshold)?;

    let stage2: Vec<ClassConfig> = event_grid(espace)
        .into_iter()
        .map(|event| ClassConfig {
            frame: best1.frame,
            event,
        })
        .collect();
    let (best2, f1_2, fail2) = data.best(&stage2, opts.match_threshold)?;

    Ok(ClassSearch {
        config: best2,
        stage1_dev_f1: f1_1,
        dev_f1: f1_2,
        equal_pr_threshold: None,
        stage1_candidates: stage1.len(),
        stage2_candidates: stage2.len(),
        failed_candidates: fail1 + fail2,
    })
}

/// Equal precision-recall threshold of the PR curve averaged over `dev`.
pub fn dev_equal_pr_threshold(
    dev: &[&Fold],
    label: &ClassLabel,
    event: EventParams,
    opts: &SearchOptions,
) -> Result<f64> {
    let params = BTreeMap::from([(label.clone(), event)]);
    let curves = dev
        .iter()
        .map(|f| {
            pr_curve(
                &f.recordings,
                std::slice::from_ref(label),
                &opts.sweep,
                &params,
                opts.match_threshold,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    equal_pr_threshold(&average_curves(&curves)?)
}

fn backward_class(
    dev: &[&Fold],
    label: &ClassLabel,
    space: &SearchSpace,
    defaults: &BTreeMap<ClassLabel, EventParams>,
    opts: &SearchOptions,
) -> Result<ClassSearch> {
    let fspace = lookup(&space.frame, label, "frame grid")?;
    let espace = lookup(&space.event, label, "event grid")?;
    let sweep_event = *lookup(defaults, label, "empirical event parameters")?;
    let data = ClassData::prepare(dev, label, &fspace.median_kernels)?;

    let threshold = dev_equal_pr_threshold(dev, label, sweep_event, opts)?;
    let frame = FrameParams::threshold(threshold);
    let stage1: Vec<ClassConfig> = event_grid(espace)
        .into_iter()
        .map(|event| ClassConfig { frame, event })
        .collect();
    let (best1, f1_1, fail1) = data.best(&stage1, opts.match_threshold)?;

    let frames = match opts.backward_stage2 {
        BackwardStage2::AllFrameParams => frame_grid(fspace),
        BackwardStage2::KernelsOnly => frame_grid(&FrameSpace {
            median_kernels: fspace.median_kernels.clone(),
            on_thresholds: vec![threshold],
            off_thresholds: vec![threshold],
            hangover_kernels: fspace.hangover_kernels.clone(),
        }),
    };
    let stage2: Vec<ClassConfig> = frames
        .into_iter()
        .map(|frame| ClassConfig {
            frame,
            event: best1.event,
        })
        .collect();
    let (best2, f1_2, fail2) = data.best(&stage2, opts.match_threshold)?;

    Ok(ClassSearch {
        config: best2,
        stage1_dev_f1: f1_1,
        dev_f1: f1_2,
        equal_pr_threshold: Some(threshold),
        stage1_candidates: stage1.len(),
        stage2_candidates: stage2.len(),
        failed_candidates: fail1 + fail2,
    })
}

fn run_search(
    strategy: Strategy,
    dev: &[&Fold],
    space: &SearchSpace,
    defaults: &BTreeMap<ClassLabel, EventParams>,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    if dev.is_empty() {
        return Err(Error::Config("search needs at least one dev fold".into()));
    }
    let per_class = space
        .classes()?
        .into_iter()
        .map(|c| {
            let r = match strategy {
                Strategy::Forward => forward_class(dev, &c, space, defaults, opts),
                Strategy::Backward => backward_class(dev, &c, space, defaults, opts),
            };
            r.map(|s| (c, s))
        })
        .collect::<Result<_>>()?;
    Ok(SearchOutcome {
        strategy,
        per_class,
    })
}

/// Forward-search on the given dev folds.
pub fn forward_search(
    dev: &[&Fold],
    space: &SearchSpace,
    defaults: &BTreeMap<ClassLabel, EventParams>,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    run_search(Strategy::Forward, dev, space, defaults, opts)
}

/// Backward-search on the given dev folds. `sweep_events` are the event
/// parameters held fixed while the PR curve is swept.
pub fn backward_search(
    dev: &[&Fold],
    space: &SearchSpace,
    sweep_events: &BTreeMap<ClassLabel, EventParams>,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    run_search(Strategy::Backward, dev, space, sweep_events, opts)
}

/// Search outcome and held-out metrics of one turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnResult {
    pub dev_folds: Vec<String>,
    pub test_fold: String,
    pub search: SearchOutcome,
    pub test: BTreeMap<ClassLabel, ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub strategy: Strategy,
    pub turns: Vec<TurnResult>,
    /// Test-fold metrics averaged over turns.
    pub final_report: EvalReport,
}

/// Runs the chosen search once per turn on the dev folds and evaluates the
/// winner on the held-out fold.
pub fn cross_validated_evaluation(
    strategy: Strategy,
    folds: &[Fold],
    space: &SearchSpace,
    defaults: &BTreeMap<ClassLabel, EventParams>,
    opts: &SearchOptions,
) -> Result<CrossValidation> {
    let needed = opts.min_folds.max(2);
    if folds.len() < needed {
        return Err(Error::Config(format!(
            "cross-validation needs at least {needed} folds, got {}",
            folds.len()
        )));
    }
    let spec = FoldSpec {
        folds: folds.iter().map(|f| f.name.clone()).collect(),
    };
    let turns = spec
        .turns()
        .into_iter()
        .map(|turn| {
            let dev: Vec<&Fold> = turn.dev.iter().map(|&i| &folds[i]).collect();
            let search = run_search(strategy, &dev, space, defaults, opts)?;
            let test = evaluate_fold(&folds[turn.test], &search.chosen(), opts.match_threshold)?;
            Ok(TurnResult {
                dev_folds: dev.iter().map(|f| f.name.clone()).collect(),
                test_fold: folds[turn.test].name.clone(),
                search,
                test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_report = EvalReport::from_folds(
        turns.iter().map(|t| t.test_fold.clone()).collect(),
        turns.iter().map(|t| t.test.clone()).collect(),
    )?;
    Ok(CrossValidation {
        strategy,
        turns,
        final_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_sizes() {
        assert_eq!(frame_grid(&FrameSpace::default()).len(), 720);
        for c in ClassLabel::defaults() {
            assert_eq!(event_grid(&EventSpace::defaults_for(&c).unwrap()).len(), 441);
        }
    }

    #[test]
    fn ranges_are_exact() {
        assert_eq!(inclusive_range(0.1, 0.9, 0.1), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        assert_eq!(inclusive_range(0.6, 3.0, 0.4), vec![0.6, 1.0, 1.4, 1.8, 2.2, 2.6, 3.0]);
        assert_eq!(inclusive_range(25.0, 40.0, 2.5).len(), 7);
    }

    #[test]
    fn singleton_space_has_one_candidate() {
        let s = FrameSpace {
            median_kernels: vec![None],
            on_thresholds: vec![0.5],
            off_thresholds: vec![0.3],
            hangover_kernels: vec![Some(11)],
        };
        assert_eq!(frame_grid(&s).len(), 1);
        // off > on is pruned
        let s = FrameSpace {
            off_thresholds: vec![0.7],
            ..s
        };
        assert!(frame_grid(&s).is_empty());
    }

    #[test]
    fn frame_grid_is_lexicographic() {
        let g = frame_grid(&FrameSpace::default());
        assert_eq!(
            g[0],
            FrameParams {
                median_kernel: None,
                on_threshold: 0.1,
                off_threshold: 0.1,
                hangover_kernel: None
            }
        );
        assert_eq!(g[1].hangover_kernel, Some(11));
        assert_eq!(g[4].on_threshold, 0.2);
        assert_eq!(g[719].median_kernel, Some(55));
        assert_eq!(g, frame_grid(&FrameSpace::default()));
    }

    #[test]
    fn empirical_defaults_from_training_table() {
        let d = empirical_event_defaults(&DurationTable::training(), &GroupingMap::default()).unwrap();
        let b = |c: ClassLabel| {
            let p = d[&c];
            (p.min_gap, p.min_duration, p.max_duration)
        };
        assert_eq!(b(ClassLabel::bmabz()), (0.5, 2.12, 28.07));
        assert_eq!(b(ClassLabel::d()), (0.5, 0.29, 6.78));
        assert_eq!(b(ClassLabel::bp()), (0.5, 0.48, 3.08));
    }

    #[test]
    fn missing_statistics_is_a_config_error() {
        let mut t = DurationTable::training();
        t.0.remove(&RawLabel::BpD);
        assert!(matches!(
            empirical_event_defaults(&t, &GroupingMap::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn turns_hold_out_each_fold_once() {
        let turns = FoldSpec::default().turns();
        assert_eq!(turns.len(), 3);
        let mut tests: Vec<usize> = turns.iter().map(|t| t.test).collect();
        tests.sort();
        assert_eq!(tests, vec![0, 1, 2]);
        for t in &turns {
            assert_eq!(t.dev.len(), 2);
            assert!(!t.dev.contains(&t.test));
        }
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("forward".parse::<Strategy>().unwrap(), Strategy::Forward);
        assert_eq!("backward".parse::<Strategy>().unwrap(), Strategy::Backward);
        assert!("sideways".parse::<Strategy>().is_err());
    }
}
