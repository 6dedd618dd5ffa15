//! The recording file format: a CSV of samples next to a JSON sidecar
//! holding the session metadata. `read(write(r))` reproduces `r` exactly;
//! floats are serialized with at least nine significant digits in a form
//! that parses back to the same bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textio::fmt_float;

use super::{MedState, Recording};

const HEADER: &str = "sample_index,ax_g,ay_g,az_g,fog_label";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    subject_id: String,
    med_state: MedState,
    fs_hz: f64,
}

/// The metadata sidecar lives next to the CSV with a `.json` extension.
pub(crate) fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `rec` as `<path>` (CSV) plus `<path with .json>` (metadata).
pub fn write_recording(rec: &Recording, csv_path: &Path) -> Result<()> {
    rec.validate()?;
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for (i, (s, &label)) in rec.samples.iter().zip(&rec.labels).enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{}",
                fmt_float(s[0]),
                fmt_float(s[1]),
                fmt_float(s[2]),
                u8::from(label)
            )?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(csv_path, e))?;

    let sidecar = Sidecar {
        subject_id: rec.subject_id.clone(),
        med_state: rec.med_state,
        fs_hz: rec.fs_hz,
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar always serializes");
    let path = sidecar_path(csv_path);
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::parse(path, row, message)
}

/// Reads a recording written by [`write_recording`]. Row numbers in errors
/// are 1-based and count the header line.
pub fn read_recording(csv_path: &Path) -> Result<Recording> {
    let side_path = sidecar_path(csv_path);
    let side_text =
        std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| parse_err(&side_path, e.line(), e.to_string()))?;

    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let reader = BufReader::new(file);
    let mut samples: Vec<[f64; 3]> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(csv_path, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(csv_path, e))?;
    if header.trim_end() != HEADER {
        return Err(parse_err(
            csv_path,
            1,
            format!("expected header '{HEADER}', found '{header}'"),
        ));
    }

    for (idx, line) in lines {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(csv_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                csv_path,
                row,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(csv_path, row, format!("bad sample index '{}'", fields[0])))?;
        if index != samples.len() {
            return Err(parse_err(
                csv_path,
                row,
                format!("sample index {index} out of order, expected {}", samples.len()),
            ));
        }
        let mut s = [0.0f64; 3];
        for (slot, field) in s.iter_mut().zip(&fields[1..4]) {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(csv_path, row, format!("acceleration '{field}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "{}:{row}: acceleration {field} is not finite",
                    csv_path.display()
                )));
            }
            *slot = v;
        }
        let label: u8 = fields[4]
            .parse()
            .map_err(|_| parse_err(csv_path, row, format!("bad FOG label '{}'", fields[4])))?;
        if label > 1 {
            return Err(Error::validation(format!(
                "{}:{row}: FOG label must be 0 or 1, got {label}",
                csv_path.display()
            )));
        }
        samples.push(s);
        labels.push(label == 1);
    }

    let rec = Recording {
        subject_id: sidecar.subject_id,
        med_state: sidecar.med_state,
        fs_hz: sidecar.fs_hz,
        samples,
        labels,
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcohort::{generate_subject, CohortSpec};

    fn sample_recording() -> Recording {
        let spec = CohortSpec {
            n_subjects: 2,
            minutes_per_state: 0.2,
            seed: 3,
            ..CohortSpec::default()
        };
        generate_subject(&spec, 0, MedState::Off).unwrap()
    }

    fn write_temp(rec: &Recording) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        write_recording(rec, &path).unwrap();
        (dir, path)
    }

    #[test]
    fn roundtrip_is_identity() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        let back = read_recording(&path).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn rewriting_produces_identical_bytes() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        let first = std::fs::read(&path).unwrap();
        write_recording(&rec, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn non_numeric_cell_is_a_parse_error_with_its_row() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        let mut text = std::fs::read_to_string(&path).unwrap();
        // Corrupt the acceleration on data row 3 (file row 4).
        let lines: Vec<&str> = text.lines().collect();
        let corrupted = lines[3].replacen(',', ",oops", 1);
        let mut rebuilt: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        rebuilt[3] = corrupted;
        text = rebuilt.join("\n");
        std::fs::write(&path, text).unwrap();
        let err = read_recording(&path).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_two_is_a_validation_error() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        let last = lines.len() - 1;
        let prefix = lines[last].rsplit_once(',').unwrap().0.to_string();
        lines[last] = format!("{prefix},2");
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = read_recording(&path).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err:?}");
    }

    #[test]
    fn shuffled_sample_index_is_rejected() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        lines.swap(1, 2);
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = read_recording(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "got {err:?}");
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let err = read_recording(&path).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "got {err:?}");
    }

    #[test]
    fn sidecar_metadata_survives() {
        let rec = sample_recording();
        let (_dir, path) = write_temp(&rec);
        let back = read_recording(&path).unwrap();
        assert_eq!(back.subject_id, rec.subject_id);
        assert_eq!(back.med_state, MedState::Off);
        assert_eq!(back.fs_hz, 200.0);
    }
}
