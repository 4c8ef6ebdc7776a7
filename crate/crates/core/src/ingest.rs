//! Reading and writing annotation and probability-trace files, grouping raw
//! call types into classes, assembling folds, and generating synthetic
//! datasets.
//!
//! Annotation CSV (UTF-8, header required):
//!
//! ```text
//! recording_id,t_start,t_end,f_min,f_max,label,site_year
//! rec1,12.0,19.2,25.0,28.0,BmA,kerguelen2014
//! ```
//!
//! Trace CSV: a `# frame_rate=<R>` line, a `time,<class>...` header, then
//! one row per frame with values printed to six decimals.
//!
//! Datasets on disk keep one directory per fold:
//! `<traces>/<site_year>/<recording_id>.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Fold, Recording};
use crate::error::{Error, Result};
use crate::types::{ClassLabel, Event, EventSet, FrameTrace};

/// The seven annotated call types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RawLabel {
    BmA,
    BmB,
    BmZ,
    BmD,
    BpD,
    Bp20,
    Bp20plus,
}

impl RawLabel {
    pub const ALL: [RawLabel; 7] = [
        RawLabel::BmA,
        RawLabel::BmB,
        RawLabel::BmZ,
        RawLabel::BmD,
        RawLabel::BpD,
        RawLabel::Bp20,
        RawLabel::Bp20plus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RawLabel::BmA => "BmA",
            RawLabel::BmB => "BmB",
            RawLabel::BmZ => "BmZ",
            RawLabel::BmD => "BmD",
            RawLabel::BpD => "BpD",
            RawLabel::Bp20 => "Bp20",
            RawLabel::Bp20plus => "Bp20plus",
        }
    }

    /// Training-set frequency extent (Hz), used when writing synthetic
    /// annotations.
    fn band(self) -> (f64, f64) {
        match self {
            RawLabel::BmA => (11.4, 110.6),
            RawLabel::BmB => (10.0, 31.3),
            RawLabel::BmZ => (11.5, 34.6),
            RawLabel::BmD => (11.5, 110.7),
            RawLabel::BpD => (16.7, 134.1),
            RawLabel::Bp20 => (8.5, 45.1),
            RawLabel::Bp20plus => (9.2, 112.7),
        }
    }
}

impl fmt::Display for RawLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RawLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RawLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Maps every raw call type onto a grouped class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<RawLabel, ClassLabel>", into = "BTreeMap<RawLabel, ClassLabel>")]
pub struct GroupingMap(BTreeMap<RawLabel, ClassLabel>);

impl Default for GroupingMap {
    fn default() -> Self {
        use RawLabel::*;
        GroupingMap(BTreeMap::from([
            (BmA, ClassLabel::bmabz()),
            (BmB, ClassLabel::bmabz()),
            (BmZ, ClassLabel::bmabz()),
            (BmD, ClassLabel::d()),
            (BpD, ClassLabel::d()),
            (Bp20, ClassLabel::bp()),
            (Bp20plus, ClassLabel::bp()),
        ]))
    }
}

impl TryFrom<BTreeMap<RawLabel, ClassLabel>> for GroupingMap {
    type Error = Error;

    fn try_from(map: BTreeMap<RawLabel, ClassLabel>) -> Result<Self> {
        if let Some(missing) = RawLabel::ALL.into_iter().find(|l| !map.contains_key(l)) {
            return Err(Error::Config(format!(
                "grouping map does not cover raw call type '{missing}'"
            )));
        }
        Ok(GroupingMap(map))
    }
}

impl From<GroupingMap> for BTreeMap<RawLabel, ClassLabel> {
    fn from(g: GroupingMap) -> Self {
        g.0
    }
}

impl GroupingMap {
    pub fn class_of(&self, raw: RawLabel) -> Result<&ClassLabel> {
        self.0
            .get(&raw)
            .ok_or_else(|| Error::UnknownLabel(raw.to_string()))
    }

    pub fn raw_labels(&self) -> Vec<RawLabel> {
        self.0.keys().copied().collect()
    }

    /// Distinct grouped classes, sorted.
    pub fn classes(&self) -> Vec<ClassLabel> {
        self.0
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Raw call types grouped into `label`.
    pub fn members(&self, label: &ClassLabel) -> Vec<RawLabel> {
        self.0
            .iter()
            .filter(|(_, c)| *c == label)
            .map(|(r, _)| *r)
            .collect()
    }

    /// First raw member of a class; used to label synthetic annotations.
    pub fn representative(&self, label: &ClassLabel) -> Result<RawLabel> {
        self.members(label)
            .first()
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

/// One row of an annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnnotation {
    pub recording_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub raw_label: RawLabel,
    pub site_year: String,
}

impl RawAnnotation {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

const ANNOTATION_HEADER: [&str; 7] = [
    "recording_id",
    "t_start",
    "t_end",
    "f_min",
    "f_max",
    "label",
    "site_year",
];

/// Parses an annotation CSV. `source` names the input in error messages.
pub fn parse_annotations<R: Read>(reader: R, source: &str) -> Result<Vec<RawAnnotation>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ANNOTATION_HEADER {
        return Err(parse_err(
            1,
            format!("expected header '{}'", ANNOTATION_HEADER.join(",")),
        ));
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    parse_err(line, format!("{}: '{}' is not a number", ANNOTATION_HEADER[i], &record[i]))
                })
        };
        let ann = RawAnnotation {
            recording_id: record[0].to_string(),
            t_start: num(1)?,
            t_end: num(2)?,
            f_min: num(3)?,
            f_max: num(4)?,
            raw_label: record[5]
                .parse()
                .map_err(|_| parse_err(line, format!("unknown label '{}'", &record[5])))?,
            site_year: record[6].to_string(),
        };
        if ann.t_end <= ann.t_start {
            return Err(parse_err(
                line,
                format!("t_end {} must exceed t_start {}", ann.t_end, ann.t_start),
            ));
        }
        if ann.recording_id.is_empty() {
            return Err(parse_err(line, "empty recording_id".into()));
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(w: W, anns: &[RawAnnotation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("writing annotations: {e}"));
    wtr.write_record(ANNOTATION_HEADER).map_err(csv_err)?;
    for a in anns {
        wtr.write_record([
            a.recording_id.clone(),
            format!("{:.6}", a.t_start),
            format!("{:.6}", a.t_end),
            format!("{:.1}", a.f_min),
            format!("{:.1}", a.f_max),
            a.raw_label.to_string(),
            a.site_year.clone(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()
        .map_err(|e| Error::InvalidInput(format!("writing annotations: {e}")))
}

/// Grouped ground truth of one recording.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordingAnnotations {
    pub site_year: String,
    pub events: BTreeMap<ClassLabel, EventSet>,
}

impl RecordingAnnotations {
    pub fn n_events(&self) -> usize {
        self.events.values().map(EventSet::len).sum()
    }
}

/// Replaces raw labels by grouped classes and indexes the events by
/// recording and class. Events are sorted by start time within each class.
pub fn group_labels(
    anns: &[RawAnnotation],
    map: &GroupingMap,
) -> Result<BTreeMap<String, RecordingAnnotations>> {
    let mut out: BTreeMap<String, RecordingAnnotations> = BTreeMap::new();
    for a in anns {
        let class = map.class_of(a.raw_label)?.clone();
        let entry = out
            .entry(a.recording_id.clone())
            .or_insert_with(|| RecordingAnnotations {
                site_year: a.site_year.clone(),
                events: BTreeMap::new(),
            });
        if entry.site_year != a.site_year {
            return Err(Error::InvalidInput(format!(
                "recording '{}' annotated under both '{}' and '{}'",
                a.recording_id, entry.site_year, a.site_year
            )));
        }
        entry
            .events
            .entry(class.clone())
            .or_insert_with(|| EventSet::new(a.recording_id.clone(), Vec::new()))
            .events
            .push(Event::new(class, a.t_start, a.t_end)?);
    }
    for rec in out.values_mut() {
        for set in rec.events.values_mut() {
            set.sort();
        }
    }
    Ok(out)
}

/// Parses a trace file. `source` names the input in error messages.
pub fn parse_trace<R: BufRead>(reader: R, source: &str) -> Result<FrameTrace> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate().map(|(i, l)| {
        l.map(|l| (i + 1, l))
            .map_err(|e| parse_err(i + 1, e.to_string()))
    });

    let (n, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty trace file".into()))??;
    let frame_rate = first
        .trim()
        .trim_start_matches('#')
        .trim()
        .strip_prefix("frame_rate=")
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|r| r.is_finite() && *r > 0.0)
        .ok_or_else(|| parse_err(n, "expected '# frame_rate=<positive number>'".into()))?;

    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing column header".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "time" {
        return Err(parse_err(n, "header must be 'time,<class>...'".into()));
    }
    let classes: Vec<ClassLabel> = cols[1..].iter().map(|c| ClassLabel::new(*c)).collect();

    let mut probs: Vec<Vec<f64>> = vec![Vec::new(); classes.len()];
    let mut start_time = None;
    for item in lines {
        let (n, line) = item?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                n,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let values = fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(n, format!("'{f}' is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        let frame = probs[0].len();
        let t0 = *start_time.get_or_insert(values[0]);
        let expected = t0 + frame as f64 / frame_rate;
        if (values[0] - expected).abs() > 0.5 / frame_rate {
            return Err(parse_err(
                n,
                format!("time {} does not match frame {frame} at {frame_rate} fps", values[0]),
            ));
        }
        for (c, &p) in values[1..].iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(parse_err(n, format!("probability {p} outside [0, 1]")));
            }
            probs[c].push(p);
        }
    }
    let start_time = start_time.ok_or_else(|| parse_err(n + 1, "trace has no frames".into()))?;
    FrameTrace::new(frame_rate, start_time, classes, probs)
}

pub fn write_trace<W: Write>(mut w: W, trace: &FrameTrace) -> std::io::Result<()> {
    writeln!(w, "# frame_rate={}", trace.frame_rate())?;
    write!(w, "time")?;
    for c in trace.classes() {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for i in 0..trace.n_frames() {
        write!(w, "{:.6}", trace.frame_time(i))?;
        for row in trace.rows() {
            write!(w, ",{:.6}", row[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<FrameTrace> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(BufReader::new(f), &path.display().to_string())
}

pub fn read_annotation_file(path: &Path) -> Result<Vec<RawAnnotation>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(BufReader::new(f), &path.display().to_string())
}

/// Loads `<traces_dir>/<fold>/*.csv` for each fold name and attaches the
/// grouped annotations. Recordings are ordered by id within each fold.
pub fn load_dataset(
    traces_dir: &Path,
    annotations: &[RawAnnotation],
    grouping: &GroupingMap,
    fold_names: &[String],
) -> Result<Vec<Fold>> {
    let grouped = group_labels(annotations, grouping)?;
    fold_names
        .iter()
        .map(|name| {
            let dir = traces_dir.join(name);
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            paths.sort();
            let mut recordings = paths
                .par_iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let trace = read_trace_file(p)?;
                    let truth = match grouped.get(&id) {
                        Some(ann) if ann.site_year != *name => {
                            return Err(Error::InvalidInput(format!(
                                "recording '{id}' is stored under fold '{name}' but annotated as '{}'",
                                ann.site_year
                            )))
                        }
                        Some(ann) => ann
                            .events
                            .iter()
                            .map(|(c, s)| (c.clone(), s.events.clone()))
                            .collect(),
                        None => BTreeMap::new(),
                    };
                    Ok(Recording::new(id, trace, truth))
                })
                .collect::<Result<Vec<_>>>()?;
            recordings.sort_by(|a, b| a.id.cmp(&b.id));

            let present: BTreeSet<&str> = recordings.iter().map(|r| r.id.as_str()).collect();
            if let Some((id, _)) = grouped
                .iter()
                .find(|(id, a)| a.site_year == *name && !present.contains(id.as_str()))
            {
                return Err(Error::InvalidInput(format!(
                    "recording '{id}' of fold '{name}' has annotations but no trace in {}",
                    dir.display()
                )));
            }
            Ok(Fold::new(name.clone(), recordings))
        })
        .collect()
}

/// Generation parameters of one synthetic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub label: ClassLabel,
    /// Events per minute; a recording holds `round(rate * minutes)` events.
    pub rate_per_min: f64,
    /// Event durations are uniform in `[min_duration, max_duration]` seconds.
    pub min_duration: f64,
    pub max_duration: f64,
    pub p_inside: f64,
    pub p_outside: f64,
    /// Chance that a frame inside an event drops to the outside level.
    pub fragmentation: f64,
    /// Standard deviation of Gaussian noise added to every frame.
    pub jitter: f64,
}

/// Specification of one synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub frame_rate: f64,
    /// Minimum silence between consecutive events of one class.
    #[serde(default = "default_separation")]
    pub min_separation_s: f64,
    pub classes: Vec<SynthClass>,
}

fn default_separation() -> f64 {
    1.0
}

impl SynthSpec {
    /// Ten clean minutes at 10 fps with duration bounds taken from the
    /// training-set statistics of each group.
    pub fn clean(seed: u64) -> Self {
        let class = |label: ClassLabel, rate: f64, lo: f64, hi: f64| SynthClass {
            label,
            rate_per_min: rate,
            min_duration: lo,
            max_duration: hi,
            p_inside: 0.95,
            p_outside: 0.02,
            fragmentation: 0.0,
            jitter: 0.0,
        };
        SynthSpec {
            seed,
            duration_s: 600.0,
            frame_rate: 10.0,
            min_separation_s: default_separation(),
            classes: vec![
                class(ClassLabel::bmabz(), 1.0, 2.12, 28.07),
                class(ClassLabel::d(), 3.0, 0.29, 6.78),
                class(ClassLabel::bp(), 4.0, 0.48, 3.08),
            ],
        }
    }

    /// Same layout as [`SynthSpec::clean`] with the given noise applied to
    /// every class.
    pub fn noisy(seed: u64, p_inside: f64, p_outside: f64, fragmentation: f64, jitter: f64) -> Self {
        let mut s = Self::clean(seed);
        for c in &mut s.classes {
            c.p_inside = p_inside;
            c.p_outside = p_outside;
            c.fragmentation = fragmentation;
            c.jitter = jitter;
        }
        s
    }

    /// Noisy layout used for end-to-end checks: inside 0.8, outside 0.1,
    /// fragmentation 0.3, no jitter.
    pub fn noisy_default(seed: u64) -> Self {
        Self::noisy(seed, 0.8, 0.1, 0.3, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.duration_s > 0.0 && self.frame_rate > 0.0 && self.min_separation_s >= 0.0) {
            return bad("duration, frame rate must be positive and separation non-negative".into());
        }
        for c in &self.classes {
            let probs = [c.p_inside, c.p_outside, c.fragmentation];
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("class '{}': probabilities must lie in [0, 1]", c.label));
            }
            if !(c.rate_per_min > 0.0 && c.jitter >= 0.0) {
                return bad(format!("class '{}': rate must be positive, jitter non-negative", c.label));
            }
            if !(c.min_duration > 0.0 && c.min_duration <= c.max_duration) {
                return bad(format!("class '{}': need 0 < min_duration <= max_duration", c.label));
            }
            let occupancy = self.expected_occupancy(c);
            if occupancy > 0.9 {
                return bad(format!(
                    "class '{}': expected occupancy {occupancy:.2} exceeds 0.9",
                    c.label
                ));
            }
        }
        Ok(())
    }

    /// Expected fraction of time covered by events of class `c`.
    pub fn expected_occupancy(&self, c: &SynthClass) -> f64 {
        c.rate_per_min / 60.0 * (c.min_duration + c.max_duration) / 2.0
    }
}

/// Places `round(rate * minutes)` events of one class. Durations are
/// stratified over `[min_duration, max_duration]` and shuffled; the spare
/// frames are split at random among the gaps. Returns `(start, len)` frame
/// pairs.
fn sample_track(spec: &SynthSpec, c: &SynthClass, n_frames: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let fr = spec.frame_rate;
    let n = (c.rate_per_min * spec.duration_s / 60.0).round() as usize;
    if n == 0 {
        return Ok(Vec::new());
    }
    let max_len = ((c.max_duration * fr + 1e-9).floor() as usize).max(1);
    let span = c.max_duration - c.min_duration;
    let mut lens: Vec<usize> = (0..n)
        .map(|i| {
            let d = c.min_duration + span * (i as f64 + rng.random::<f64>()) / n as f64;
            ((d * fr - 1e-9).ceil() as usize).clamp(1, max_len)
        })
        .collect();
    lens.shuffle(rng);

    let sep = (spec.min_separation_s * fr - 1e-9).ceil().max(0.0) as usize;
    let used = lens.iter().sum::<usize>() + sep * (n - 1);
    let spare = n_frames.checked_sub(used).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "class '{}': {n} events do not fit into {} s",
            c.label, spec.duration_s
        ))
    })?;
    let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=spare)).collect();
    cuts.sort_unstable();

    let mut track = Vec::with_capacity(n);
    let (mut pos, mut prev_cut) = (0, 0);
    for (len, cut) in lens.into_iter().zip(cuts) {
        pos += cut - prev_cut;
        prev_cut = cut;
        track.push((pos, len));
        pos += len + sep;
    }
    Ok(track)
}

/// Generates a probability trace and its ground truth. Deterministic in
/// `spec.seed`; each class draws from its own random stream.
pub fn synth_generate(spec: &SynthSpec, source_id: &str) -> Result<(FrameTrace, EventSet)> {
    spec.validate()?;
    let n_frames = (spec.duration_s * spec.frame_rate).round() as usize;
    let mut rows = Vec::with_capacity(spec.classes.len());
    let mut events = Vec::new();
    for (ci, c) in spec.classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(ci as u64);
        let track = sample_track(spec, c, n_frames, &mut rng)?;

        let mut inside = vec![false; n_frames];
        for &(s, l) in &track {
            inside[s..s + l].fill(true);
            events.push(Event::new(
                c.label.clone(),
                s as f64 / spec.frame_rate,
                (s + l) as f64 / spec.frame_rate,
            )?);
        }
        let noise = Normal::new(0.0, c.jitter.max(f64::MIN_POSITIVE)).expect("finite sd");
        let row = inside
            .iter()
            .map(|&inn| {
                let base = if inn && !rng.random_bool(c.fragmentation) {
                    c.p_inside
                } else {
                    c.p_outside
                };
                if c.jitter > 0.0 {
                    (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
                } else {
                    base
                }
            })
            .collect();
        rows.push(row);
    }
    let classes = spec.classes.iter().map(|c| c.label.clone()).collect();
    let trace = FrameTrace::new(spec.frame_rate, 0.0, classes, rows)?;
    Ok((trace, EventSet::new(source_id, events)))
}

/// Builds `recordings_per_fold` synthetic recordings for each fold. The
/// seed of recording `r` in fold `f` is `base.seed + 1000 * f + r`.
pub fn synth_dataset(base: &SynthSpec, fold_names: &[String], recordings_per_fold: usize) -> Result<Vec<Fold>> {
    fold_names
        .iter()
        .enumerate()
        .map(|(fi, name)| {
            let recordings = (0..recordings_per_fold)
                .map(|r| {
                    let spec = SynthSpec {
                        seed: base.seed + 1000 * fi as u64 + r as u64,
                        ..base.clone()
                    };
                    let id = format!("{name}_{r:03}");
                    let (trace, truth) = synth_generate(&spec, &id)?;
                    let mut by_class: BTreeMap<ClassLabel, Vec<Event>> = BTreeMap::new();
                    for e in truth.events {
                        by_class.entry(e.label.clone()).or_default().push(e);
                    }
                    Ok(Recording::new(id, trace, by_class))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Fold::new(name.clone(), recordings))
        })
        .collect()
}

/// Annotation rows for a dataset; each class is written under its
/// representative raw call type.
pub fn dataset_annotations(folds: &[Fold], grouping: &GroupingMap) -> Result<Vec<RawAnnotation>> {
    let mut out = Vec::new();
    for fold in folds {
        for rec in &fold.recordings {
            for (class, events) in &rec.truth {
                let raw = grouping.representative(class)?;
                let (f_min, f_max) = raw.band();
                out.extend(events.iter().map(|e| RawAnnotation {
                    recording_id: rec.id.clone(),
                    t_start: e.t_start,
                    t_end: e.t_end,
                    f_min,
                    f_max,
                    raw_label: raw,
                    site_year: fold.name.clone(),
                }));
            }
        }
    }
    Ok(out)
}
