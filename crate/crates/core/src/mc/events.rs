//! JSON-lines event files: one [`ShotEvents`] object per line.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use thiserror::Error;

use super::ShotEvents;

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("event file contains no shots")]
    Empty,
    #[error("{malformed} of {total} lines malformed (first at line {first_line}: {first_reason})")]
    TooManyMalformed { malformed: usize, total: usize, first_line: usize, first_reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MalformedLine {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventFile {
    pub shots: Vec<ShotEvents>,
    pub malformed: Vec<MalformedLine>,
}

pub fn write_events<'a, W, I>(mut w: W, shots: I) -> Result<(), EventsError>
where
    W: Write,
    I: IntoIterator<Item = &'a ShotEvents>,
{
    for shot in shots {
        serde_json::to_writer(&mut w, shot)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn check(shot: &ShotEvents) -> Result<(), String> {
    if !(0.0..2.0 * PI).contains(&shot.phase) {
        return Err(format!("phase {} outside [0, 2π)", shot.phase));
    }
    if !shot.tau_us.is_finite() {
        return Err("non-finite tau_us".into());
    }
    Ok(())
}

/// Parses an event file, skipping blank lines. Malformed lines are collected;
/// if their share of non-blank lines exceeds `max_malformed_fraction` the
/// whole read fails.
pub fn read_events<R: BufRead>(reader: R, max_malformed_fraction: f64) -> Result<EventFile, EventsError> {
    let mut shots = Vec::new();
    let mut malformed = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ShotEvents>(&line).map_err(|e| e.to_string()).and_then(|s| check(&s).map(|_| s)) {
            Ok(s) => shots.push(s),
            Err(reason) => malformed.push(MalformedLine { line: i + 1, reason }),
        }
    }
    let total = shots.len() + malformed.len();
    if total == 0 {
        return Err(EventsError::Empty);
    }
    if malformed.len() as f64 > max_malformed_fraction * total as f64 {
        let first = &malformed[0];
        return Err(EventsError::TooManyMalformed {
            malformed: malformed.len(),
            total,
            first_line: first.line,
            first_reason: first.reason.clone(),
        });
    }
    if shots.is_empty() {
        return Err(EventsError::Empty);
    }
    Ok(EventFile { shots, malformed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shot(id: u64) -> ShotEvents {
        ShotEvents {
            shot_id: id,
            tau_us: 550.0,
            phase: 0.1 * id as f64,
            events: vec![[0.1, -0.2, 12.075], [1.0 / 3.0, 0.0, 7.0]],
            resampled: (id % 2) as u32,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let shots: Vec<_> = (0..10).map(shot).collect();
        let mut buf = Vec::new();
        write_events(&mut buf, &shots).unwrap();
        let back = read_events(buf.as_slice(), 0.0).unwrap();
        assert_eq!(back.shots, shots);
        assert!(back.malformed.is_empty());
    }

    #[test]
    fn resampled_counter_is_omitted_when_zero() {
        let text = serde_json::to_string(&shot(0)).unwrap();
        assert!(!text.contains("resampled"));
        assert!(serde_json::to_string(&shot(1)).unwrap().contains("\"resampled\":1"));
    }

    #[test]
    fn malformed_lines_are_reported_with_numbers() {
        let mut text = String::new();
        for id in 0..200 {
            text += &serde_json::to_string(&shot(id % 50)).unwrap();
            text.push('\n');
        }
        text += "{not json\n";
        let f = read_events(text.as_bytes(), 0.01).unwrap();
        assert_eq!(f.malformed.len(), 1);
        assert_eq!(f.malformed[0].line, 201);

        let bad = "{\"x\":1}\n".to_string() + &serde_json::to_string(&shot(0)).unwrap();
        assert!(matches!(read_events(bad.as_bytes(), 0.01), Err(EventsError::TooManyMalformed { first_line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(read_events("\n\n".as_bytes(), 0.01), Err(EventsError::Empty)));
    }
}
