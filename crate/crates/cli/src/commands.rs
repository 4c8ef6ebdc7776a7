use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use whalepost::bpn::{self, BpnConfig, BpnWeights, WeightManifest};
use whalepost::dataset::Fold;
use whalepost::evalkit::{self, match_counts, ClassMetrics, EvalReport, MatchCounts};
use whalepost::hypersearch::{
    cross_validated_evaluation, empirical_baseline, empirical_event_defaults, DurationTable, SearchOptions,
    SearchSpace,
};
use whalepost::ingest::{self, GroupingMap, SynthSpec};
use whalepost::report::{to_canonical_json, SearchReport, SCHEMA_VERSION};
use whalepost::{pipeline, ClassLabel, EventParams, EventSet, PostProcessingConfig};

use crate::output::{read_events, read_json, require_exists, write_atomic, write_events, write_text};
use crate::{
    BpnDemoArgs, Cli, Command, DataArgs, EvaluateArgs, Failure, PostprocessArgs, PrCurveArgs, Preset, SearchArgs,
    SynthArgs,
};

pub fn run(cli: Cli) -> Result<(), Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {} workers: {e}", cli.jobs)))?;
    pool.install(|| match cli.command {
        Command::Postprocess(a) => postprocess(a),
        Command::Evaluate(a) => evaluate(a),
        Command::PrCurve(a) => pr_curve(a),
        Command::Search(a) => search(a),
        Command::Synth(a) => synth(a),
        Command::BpnDemo(a) => bpn_demo(a),
    })
}

fn grouping(path: Option<&Path>) -> Result<GroupingMap, Failure> {
    path.map_or_else(|| Ok(GroupingMap::default()), read_json)
}

fn event_defaults(grouping: &GroupingMap) -> Result<BTreeMap<ClassLabel, EventParams>, Failure> {
    Ok(empirical_event_defaults(&DurationTable::training(), grouping)?)
}

fn check_match_threshold(t: f64) -> Result<(), Failure> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--match-threshold must lie in (0, 1], got {t}")))
    }
}

fn load(data: &DataArgs) -> Result<(GroupingMap, Vec<Fold>), Failure> {
    require_exists(&data.traces)?;
    require_exists(&data.annotations)?;
    check_match_threshold(data.match_threshold)?;
    let grouping = grouping(data.grouping.as_deref())?;
    let anns = ingest::read_annotation_file(&data.annotations)?;
    let folds = ingest::load_dataset(&data.traces, &anns, &grouping, &data.folds)?;
    Ok((grouping, folds))
}

fn collect_traces(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), Failure> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let entries = fs::read_dir(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    for entry in entries {
        let p = entry.map_err(|e| Failure::Data(e.to_string()))?.path();
        if p.is_dir() {
            collect_traces(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

fn postprocess(a: PostprocessArgs) -> Result<(), Failure> {
    require_exists(&a.traces)?;
    let config: PostProcessingConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => empirical_baseline(&event_defaults(&GroupingMap::default())?),
    };
    let mut paths = Vec::new();
    collect_traces(&a.traces, &mut paths)?;
    paths.sort();
    let sets = paths
        .par_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let trace = ingest::read_trace_file(p)?;
            pipeline::postprocess(&trace, &config, &id)
                .map_err(|e| whalepost::Error::InvalidInput(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<EventSet>, _>>()?;
    write_atomic(&a.out, |w| write_events(w, &sets))?;
    eprintln!(
        "postprocess: {} events from {} traces",
        sets.iter().map(EventSet::len).sum::<usize>(),
        sets.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    schema: &'static str,
    tool: &'static str,
    version: &'static str,
    match_threshold: f64,
    report: &'a EvalReport,
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    require_exists(&a.annotations)?;
    check_match_threshold(a.match_threshold)?;
    let grouping = grouping(a.grouping.as_deref())?;
    let truth = ingest::group_labels(&ingest::read_annotation_file(&a.annotations)?, &grouping)?;
    let dets = read_events(&a.events)?;
    let classes = grouping.classes();

    let mut fold_of: BTreeMap<String, String> =
        truth.iter().map(|(id, r)| (id.clone(), r.site_year.clone())).collect();
    if let Some(dir) = &a.traces {
        require_exists(dir)?;
        for fold in &a.folds {
            let entries = fs::read_dir(dir.join(fold)).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
            for entry in entries.flatten() {
                let p = entry.path();
                if p.extension().is_some_and(|x| x == "csv") {
                    if let Some(stem) = p.file_stem() {
                        fold_of.entry(stem.to_string_lossy().into_owned()).or_insert_with(|| fold.clone());
                    }
                }
            }
        }
    }
    for (id, by_class) in &dets {
        if !fold_of.contains_key(id) {
            return Err(Failure::Data(format!("recording '{id}' has detections but no fold")));
        }
        if let Some(label) = by_class.keys().find(|l| !classes.contains(l)) {
            return Err(Failure::Data(format!("recording '{id}': unknown class '{label}'")));
        }
    }

    let empty = Vec::new();
    let per_fold = a
        .folds
        .iter()
        .map(|fold| {
            classes
                .iter()
                .map(|c| {
                    let mut counts = MatchCounts::default();
                    for id in fold_of.iter().filter(|(_, f)| *f == fold).map(|(id, _)| id) {
                        let gt = truth
                            .get(id)
                            .and_then(|r| r.events.get(c))
                            .map_or(&empty, |s| &s.events);
                        let det = dets.get(id).and_then(|m| m.get(c)).unwrap_or(&empty);
                        counts += match_counts(gt, det, a.match_threshold)?;
                    }
                    Ok((c.clone(), ClassMetrics::from_counts(counts)))
                })
                .collect::<whalepost::Result<BTreeMap<_, _>>>()
        })
        .collect::<whalepost::Result<Vec<_>>>()?;
    let report = EvalReport::from_folds(a.folds.clone(), per_fold)?;
    let json = to_canonical_json(&EvaluateReport {
        schema: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        match_threshold: a.match_threshold,
        report: &report,
    })?;
    write_text(&a.out, &json)?;
    eprintln!("evaluate: macro F1 {:.4}", report.macro_f1);
    Ok(())
}

fn pr_curve(a: PrCurveArgs) -> Result<(), Failure> {
    let (grouping, folds) = load(&a.data)?;
    let classes = grouping.classes();
    let defaults = event_defaults(&grouping)?;
    let sweep = evalkit::default_sweep();
    let curves = folds
        .iter()
        .map(|f| evalkit::pr_curve(&f.recordings, &classes, &sweep, &defaults, a.data.match_threshold))
        .collect::<whalepost::Result<Vec<_>>>()?;
    let averaged = evalkit::average_curves(&curves)?;
    write_atomic(&a.out, |w| evalkit::write_pr_tsv(w, &averaged))?;
    Ok(())
}

fn search(a: SearchArgs) -> Result<(), Failure> {
    let (grouping, folds) = load(&a.data)?;
    let space: SearchSpace = match &a.space {
        Some(p) => read_json(p)?,
        None => SearchSpace::default(),
    };
    let defaults = event_defaults(&grouping)?;
    let opts = SearchOptions {
        match_threshold: a.data.match_threshold,
        backward_stage2: a.backward_stage2.into(),
        ..SearchOptions::default()
    };
    let started = Instant::now();
    let cv = cross_validated_evaluation(a.strategy.into(), &folds, &space, &defaults, &opts)?;
    let report = SearchReport::new(&cv, &space, opts.match_threshold, opts.backward_stage2, a.seed)?;
    write_text(&a.out, &report.to_json()?)?;
    eprintln!(
        "search: {} over {} folds, final macro F1 {:.4} ({:.1} s)",
        cv.strategy,
        folds.len(),
        cv.final_report.macro_f1,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(p), _) => read_json::<SynthSpec>(p)?,
        (None, Preset::Clean) => SynthSpec::clean(a.seed),
        (None, Preset::Noisy) => SynthSpec::noisy_default(a.seed),
    };
    spec.seed = a.seed;
    if a.folds.is_empty() || a.recordings == 0 {
        return Err(Failure::Usage("need at least one fold and one recording".into()));
    }
    let folds = ingest::synth_dataset(&spec, &a.folds, a.recordings)?;
    let grouping = GroupingMap::default();
    for fold in &folds {
        for rec in &fold.recordings {
            let path = a.out.join("traces").join(&fold.name).join(format!("{}.csv", rec.id));
            write_atomic(&path, |w| ingest::write_trace(w, &rec.trace))?;
        }
    }
    let anns = ingest::dataset_annotations(&folds, &grouping)?;
    write_atomic(&a.out.join("annotations.csv"), |w| {
        ingest::write_annotations(w, &anns).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    eprintln!(
        "synth: {} folds x {} recordings, {} annotations",
        folds.len(),
        a.recordings,
        anns.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct MaskRange {
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct DemoChecks {
    shape_preserved: bool,
    mask_in_open_unit_interval: bool,
    gate_never_increases: bool,
}

#[derive(Serialize)]
struct DemoReport {
    schema: &'static str,
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: BpnConfig,
    feature_map_shape: [usize; 3],
    n_rois: usize,
    roi_scores_shape: [usize; 3],
    classes: Vec<ClassLabel>,
    frames: usize,
    mask: MaskRange,
    checks: DemoChecks,
}

fn bpn_demo(a: BpnDemoArgs) -> Result<(), Failure> {
    if a.heads == 0 || a.frames == 0 || a.freq == 0 {
        return Err(Failure::Usage("--heads, --frames and --freq must be positive".into()));
    }
    let cfg = if a.single {
        BpnConfig::single(a.heads)
    } else {
        BpnConfig {
            n_heads: a.heads,
            ..BpnConfig::default()
        }
    };
    let weights = match &a.weights {
        Some(p) => read_json::<WeightManifest>(p)?.to_weights(&cfg)?,
        None => BpnWeights::random(&cfg, a.seed)?,
    };
    if let Some(p) = &a.save_weights {
        let json = serde_json::to_string(&WeightManifest::from_weights(&weights))
            .map_err(|e| Failure::Data(e.to_string()))?;
        write_text(p, &json)?;
    }
    let maps = bpn::fixture_feature_maps(&cfg, a.frames, a.freq, a.seed.wrapping_add(1));
    let posteriors = bpn::fixture_posteriors(a.frames, a.seed.wrapping_add(2))?;
    let out = bpn::bpn_forward(&maps, &posteriors, &cfg, &weights)?;

    let min = out.mask.iter().copied().fold(f64::INFINITY, f64::min);
    let max = out.mask.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let checks = DemoChecks {
        shape_preserved: out.gated.n_frames() == posteriors.n_frames()
            && out.gated.classes() == posteriors.classes(),
        mask_in_open_unit_interval: min > 0.0 && max < 1.0,
        gate_never_increases: posteriors
            .rows()
            .iter()
            .zip(out.gated.rows())
            .all(|(p, g)| p.iter().zip(g).all(|(x, y)| y <= x)),
    };
    let ok = checks.shape_preserved && checks.mask_in_open_unit_interval && checks.gate_never_increases;
    let (h, r, t) = out.roi_scores.dim();
    let report = DemoReport {
        schema: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: a.seed,
        feature_map_shape: [cfg.in_channels, a.frames, a.freq],
        n_rois: cfg.n_rois(),
        roi_scores_shape: [h, r, t],
        classes: out.gated.classes().to_vec(),
        frames: out.gated.n_frames(),
        mask: MaskRange { min, max },
        checks,
        config: cfg,
    };
    write_text(&a.out, &to_canonical_json(&report)?)?;
    if ok {
        Ok(())
    } else {
        Err(Failure::Data("gating invariants violated; see report".into()))
    }
}
