use std::io::Read;

use crate::data::{ClassLabel, Recording};
use crate::error::{Error, Result};

/// Reads a recording stored as CSV: a header row of channel names followed
/// by one row per sample.
pub fn read_csv_recording<R: Read>(reader: R, sample_rate_hz: f64, subject_id: &str) -> Result<Recording> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let channels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if channels.is_empty() || channels.iter().all(String::is_empty) {
        return Err(Error::Format {
            field: "header".into(),
            message: "missing channel-name row".into(),
        });
    }
    let mut samples = vec![Vec::new(); channels.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // header is row 1
        let row = i + 2;
        if record.len() != channels.len() {
            return Err(Error::Format {
                field: format!("row {row}"),
                message: format!("{} cells, expected {}", record.len(), channels.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            samples[c].push(v);
        }
    }
    Recording::new(sample_rate_hz, channels, samples, subject_id)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CueEvent {
    pub onset_s: f64,
    pub label: ClassLabel,
}

/// Reads a sidecar events file with header `onset_seconds,label`.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<CueEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "onset_seconds" || &headers[1] != "label" {
        return Err(Error::Format {
            field: "header".into(),
            message: format!("expected `onset_seconds,label`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let onset_s: f64 = record[0].parse().map_err(|_| Error::Parse {
            row,
            column: 1,
            message: format!("`{}` is not a number", &record[0]),
        })?;
        let label = record[1].parse::<ClassLabel>().map_err(|e| Error::Parse {
            row,
            column: 2,
            message: e.to_string(),
        })?;
        out.push(CueEvent { onset_s, label });
    }
    Ok(out)
}
