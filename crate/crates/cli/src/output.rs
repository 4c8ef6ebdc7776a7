use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use tempfile::NamedTempFile;
use whalepost::{ClassLabel, Event, EventSet};

use crate::Failure;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| Failure::Data(format!("{}: {e}", path.display()));
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn require_exists(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} does not exist", path.display())))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    require_exists(path)?;
    let f = fs::File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

pub const EVENTS_HEADER: [&str; 4] = ["recording_id", "label", "t_start", "t_end"];

pub fn write_events(w: &mut dyn Write, sets: &[EventSet]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(EVENTS_HEADER)?;
    for set in sets {
        for e in &set.events {
            wtr.write_record([
                set.source_id.as_str(),
                e.label.as_str(),
                &format!("{:.6}", e.t_start),
                &format!("{:.6}", e.t_end),
            ])?;
        }
    }
    wtr.flush()
}

/// Detections per recording and class, each list sorted by start time.
pub type Detections = BTreeMap<String, BTreeMap<ClassLabel, Vec<Event>>>;

pub fn read_events(path: &Path) -> Result<Detections, Failure> {
    require_exists(path)?;
    let at = |line: u64, msg: String| Failure::Data(format!("{}:{line}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| at(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != EVENTS_HEADER {
        return Err(at(1, format!("expected header '{}'", EVENTS_HEADER.join(","))));
    }
    let mut out = Detections::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| at(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| at(line, format!("{}: '{}' is not a number", EVENTS_HEADER[i], &rec[i])))
        };
        let label = ClassLabel::new(&rec[1]);
        let event = Event::new(label.clone(), num(2)?, num(3)?).map_err(|e| at(line, e.to_string()))?;
        out.entry(rec[0].to_string())
            .or_default()
            .entry(label)
            .or_default()
            .push(event);
    }
    for classes in out.values_mut() {
        for evs in classes.values_mut() {
            evs.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.t_end.total_cmp(&b.t_end)));
        }
    }
    Ok(out)
}
