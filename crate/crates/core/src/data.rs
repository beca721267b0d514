//! JSONL trip datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sample::{build_windows, SequenceSample, Trip};

/// Share of malformed lines above which loading fails.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

/// A malformed input line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub trips: usize,
    pub rejected: Vec<Rejection>,
    /// Trips shorter than one window.
    pub short_trips: usize,
    pub samples: usize,
}

/// Parses one trip per non-blank line, validating each.
pub fn parse_trips(reader: impl BufRead) -> Result<(Vec<Trip>, LoadReport)> {
    let mut trips = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let parsed = serde_json::from_str::<Trip>(&line)
            .map_err(Error::from)
            .and_then(|t| t.validate().map(|_| t));
        match parsed {
            Ok(t) => trips.push(t),
            Err(e) => {
                log::warn!("line {}: {e}", i + 1);
                report.rejected.push(Rejection {
                    line: i + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    report.trips = trips.len();
    if report.lines == 0 {
        log::warn!("dataset is empty");
    }
    let frac = report.rejected.len() as f64 / report.lines.max(1) as f64;
    if frac > MAX_REJECT_FRACTION {
        let first = &report.rejected[0];
        return Err(Error::Dataset(format!(
            "{} of {} lines rejected (first at line {}: {})",
            report.rejected.len(),
            report.lines,
            first.line,
            first.reason
        )));
    }
    Ok((trips, report))
}

pub fn load_trips(path: &Path) -> Result<(Vec<Trip>, LoadReport)> {
    parse_trips(BufReader::new(File::open(path)?))
}

/// Loads trips and cuts them into `N_p`/`N_f` windows.
pub fn load_dataset(path: &Path, n_p: usize, n_f: usize) -> Result<(Vec<SequenceSample>, LoadReport)> {
    let (trips, mut report) = load_trips(path)?;
    let (samples, short) = build_windows(&trips, n_p, n_f);
    report.short_trips = short;
    report.samples = samples.len();
    if short > 0 {
        log::info!("{short} trips shorter than {} stops skipped", n_p + n_f);
    }
    Ok((samples, report))
}

pub fn write_trips(mut w: impl Write, trips: &[Trip]) -> Result<()> {
    for t in trips {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trips(path: &Path, trips: &[Trip]) -> Result<()> {
    write_trips(BufWriter::new(File::create(path)?), trips)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"route_id":"R0","trip_id":"a","stops":[{"s_km":0.5,"t_sched_s":90,"delay_s":-3.5,"signal":1,"t_mean_s":95}],"peak":0,"weekday":1,"sched_arrivals_s":[90]}"#;

    #[test]
    fn empty_input_is_empty_dataset() {
        let (t, r) = parse_trips("".as_bytes()).unwrap();
        assert!(t.is_empty());
        assert_eq!(r.lines, 0);
    }

    #[test]
    fn bad_lines_are_numbered() {
        let four = GOOD.replace(r#","t_mean_s":95"#, "");
        let mut text = String::new();
        for _ in 0..10 {
            text.push_str(GOOD);
            text.push('\n');
        }
        text.push_str(&four);
        text.push('\n');
        let (t, r) = parse_trips(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].line, 11);
        let text = format!("{GOOD}\n{four}\n");
        assert!(matches!(parse_trips(text.as_bytes()), Err(Error::Dataset(_))));
    }

    #[test]
    fn write_then_parse_roundtrips() {
        let (t, _) = parse_trips(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_trips(&mut buf, &t).unwrap();
        let (back, _) = parse_trips(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }
}
