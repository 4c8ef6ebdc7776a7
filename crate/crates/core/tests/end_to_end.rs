use std::collections::BTreeMap;
use std::fs;

use approx::assert_abs_diff_eq;
use whalepost::dataset::Fold;
use whalepost::evalkit::{evaluate_fold, evaluate_folds, fold_average_metrics, DEFAULT_MATCH_THRESHOLD};
use whalepost::hypersearch::{
    cross_validated_evaluation, empirical_baseline, empirical_event_defaults, forward_search, DurationTable,
    EventSpace, FrameSpace, SearchOptions, SearchSpace, Strategy,
};
use whalepost::ingest::{
    dataset_annotations, load_dataset, synth_dataset, write_annotations, write_trace, GroupingMap, SynthSpec,
};
use whalepost::{ClassConfig, ClassLabel, EventParams, FrameParams, PostProcessingConfig};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("fold{i}")).collect()
}

fn defaults() -> BTreeMap<ClassLabel, EventParams> {
    empirical_event_defaults(&DurationTable::training(), &GroupingMap::default()).unwrap()
}

#[test]
fn clean_synth_is_recovered_exactly_by_thresholding() {
    let folds = synth_dataset(&SynthSpec::clean(7), &names(3), 2).unwrap();
    let report = evaluate_folds(&folds, &empirical_baseline(&defaults()), DEFAULT_MATCH_THRESHOLD).unwrap();
    for (label, m) in &report.averaged {
        assert_eq!(m.f1, 1.0, "{label}");
    }
    assert_eq!(report.macro_f1, 1.0);
}

#[test]
fn dataset_round_trips_through_files() {
    let folds = synth_dataset(&SynthSpec::noisy_default(4), &names(2), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for fold in &folds {
        let sub = dir.path().join(&fold.name);
        fs::create_dir_all(&sub).unwrap();
        for rec in &fold.recordings {
            let f = fs::File::create(sub.join(format!("{}.csv", rec.id))).unwrap();
            write_trace(f, &rec.trace).unwrap();
        }
    }
    let grouping = GroupingMap::default();
    let anns = dataset_annotations(&folds, &grouping).unwrap();
    let mut buf = Vec::new();
    write_annotations(&mut buf, &anns).unwrap();
    let parsed = whalepost::ingest::parse_annotations(buf.as_slice(), "mem").unwrap();
    let loaded = load_dataset(dir.path(), &parsed, &grouping, &names(2)).unwrap();

    for (a, b) in folds.iter().zip(&loaded) {
        assert_eq!(a.name, b.name);
        for (ra, rb) in a.recordings.iter().zip(&b.recordings) {
            assert_eq!(ra.id, rb.id);
            assert_eq!(ra.trace.classes(), rb.trace.classes());
            for (x, y) in ra.trace.rows().iter().flatten().zip(rb.trace.rows().iter().flatten()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-6);
            }
            for label in ClassLabel::defaults() {
                let (ta, tb) = (ra.truth_of(&label), rb.truth_of(&label));
                assert_eq!(ta.len(), tb.len());
                for (ea, eb) in ta.iter().zip(tb) {
                    assert_abs_diff_eq!(ea.t_start, eb.t_start, epsilon = 1e-6);
                    assert_abs_diff_eq!(ea.t_end, eb.t_end, epsilon = 1e-6);
                }
            }
        }
    }
    let cfg = empirical_baseline(&defaults());
    let before = evaluate_folds(&folds, &cfg, DEFAULT_MATCH_THRESHOLD).unwrap();
    let after = evaluate_folds(&loaded, &cfg, DEFAULT_MATCH_THRESHOLD).unwrap();
    assert_abs_diff_eq!(before.macro_f1, after.macro_f1, epsilon = 1e-9);
}

fn small_space() -> SearchSpace {
    let frame = FrameSpace {
        median_kernels: vec![None, Some(5)],
        on_thresholds: vec![0.4, 0.6],
        off_thresholds: vec![0.2, 0.4],
        hangover_kernels: vec![None, Some(5)],
    };
    let classes = ClassLabel::defaults();
    SearchSpace {
        frame: classes.iter().map(|c| (c.clone(), frame.clone())).collect(),
        event: classes
            .iter()
            .map(|c| {
                let d = EventSpace::defaults_for(c).unwrap();
                let e = EventSpace {
                    min_gaps: vec![0.3, 0.6],
                    min_durations: d.min_durations[..2].to_vec(),
                    max_durations: d.max_durations[d.max_durations.len() - 2..].to_vec(),
                };
                (c.clone(), e)
            })
            .collect(),
    }
}

#[test]
fn cross_validation_composes_search_and_held_out_evaluation() {
    let folds = synth_dataset(&SynthSpec::noisy_default(2), &names(3), 1).unwrap();
    let space = small_space();
    let opts = SearchOptions::default();
    let cv = cross_validated_evaluation(Strategy::Forward, &folds, &space, &defaults(), &opts).unwrap();
    assert_eq!(cv.turns.len(), 3);

    let mut per_class: BTreeMap<ClassLabel, Vec<_>> = BTreeMap::new();
    for (i, turn) in cv.turns.iter().enumerate() {
        assert_eq!(turn.test_fold, folds[i].name);
        let dev: Vec<&Fold> = folds.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, f)| f).collect();
        assert_eq!(turn.dev_folds, dev.iter().map(|f| f.name.clone()).collect::<Vec<_>>());
        let search = forward_search(&dev, &space, &defaults(), &opts).unwrap();
        assert_eq!(search.chosen(), turn.search.chosen());
        let test = evaluate_fold(&folds[i], &search.chosen(), opts.match_threshold).unwrap();
        assert_eq!(test, turn.test);
        for (label, m) in test {
            per_class.entry(label).or_default().push(m);
        }
    }
    for (label, ms) in per_class {
        let avg = fold_average_metrics(&ms).unwrap();
        assert_eq!(avg, cv.final_report.averaged[&label], "{label}");
    }
}

#[test]
fn cross_validation_rejects_too_few_folds() {
    let folds = synth_dataset(&SynthSpec::clean(0), &names(2), 1).unwrap();
    let err = cross_validated_evaluation(Strategy::Backward, &folds, &small_space(), &defaults(), &SearchOptions::default());
    assert!(err.is_err());
}

#[test]
fn plain_threshold_config_matches_thresholded_truth_on_clean_data() {
    let folds = synth_dataset(&SynthSpec::clean(9), &names(1), 1).unwrap();
    let open = EventParams { min_gap: 0.05, min_duration: 0.01, max_duration: 1e6 };
    let cfg: PostProcessingConfig = ClassLabel::defaults()
        .into_iter()
        .map(|c| (c, ClassConfig { frame: FrameParams::threshold(0.5), event: open }))
        .collect();
    let m = evaluate_fold(&folds[0], &cfg, DEFAULT_MATCH_THRESHOLD).unwrap();
    for (label, metrics) in m {
        assert_eq!(metrics.f1, 1.0, "{label}");
    }
}
