//! Minimal EDF reader (fixed-rate signals, linear digital→physical scaling).
//!
//! EDF+ annotation channels are skipped; cue times come from a sidecar
//! events file instead.

use crate::data::Recording;
use crate::error::{Error, Result};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;
const ANNOTATION_LABEL: &str = "EDF Annotations";

/// Per-signal header fields needed to decode samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    /// Maps `digital_min` to `physical_min` and `digital_max` to
    /// `physical_max` exactly.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let d = i32::from(digital);
        if d == self.digital_min {
            return self.physical_min;
        }
        if d == self.digital_max {
            return self.physical_max;
        }
        self.physical_min + f64::from(d - self.digital_min) * self.gain()
    }

    fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub n_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<SignalHeader>,
}

fn field(bytes: &[u8], offset: usize, len: usize, name: &str) -> Result<String> {
    let raw = bytes.get(offset..offset + len).ok_or_else(|| Error::Format {
        field: name.to_string(),
        message: format!("header truncated at byte {offset}"),
    })?;
    if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
        return Err(Error::Format {
            field: name.to_string(),
            message: "non-ASCII characters".into(),
        });
    }
    Ok(String::from_utf8_lossy(raw).trim().to_string())
}

fn number<T: std::str::FromStr>(text: &str, name: &str) -> Result<T> {
    text.parse::<T>().map_err(|_| Error::Format {
        field: name.to_string(),
        message: format!("`{text}` is not a number"),
    })
}

/// Parses the fixed and per-signal headers.
pub fn read_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Format {
            field: "header".into(),
            message: format!("{} bytes, need at least {FIXED_HEADER}", bytes.len()),
        });
    }
    let version = field(bytes, 0, 8, "version")?;
    if version != "0" {
        return Err(Error::Format {
            field: "version".into(),
            message: format!("expected `0`, found `{version}`"),
        });
    }
    let header_bytes: usize = number(&field(bytes, 184, 8, "header_bytes")?, "header_bytes")?;
    let n_records_raw: i64 = number(&field(bytes, 236, 8, "n_records")?, "n_records")?;
    let record_duration_s: f64 =
        number(&field(bytes, 244, 8, "record_duration")?, "record_duration")?;
    let ns: usize = number(&field(bytes, 252, 4, "n_signals")?, "n_signals")?;
    if ns == 0 {
        return Err(Error::Format {
            field: "n_signals".into(),
            message: "no signals".into(),
        });
    }
    if header_bytes != FIXED_HEADER + ns * SIGNAL_HEADER {
        return Err(Error::Format {
            field: "header_bytes".into(),
            message: format!(
                "declares {header_bytes}, expected {} for {ns} signals",
                FIXED_HEADER + ns * SIGNAL_HEADER
            ),
        });
    }
    if !(record_duration_s > 0.0) {
        return Err(Error::Format {
            field: "record_duration".into(),
            message: format!("must be positive, got {record_duration_s}"),
        });
    }

    // Per-signal fields are stored column-wise: all labels, then all
    // transducers, and so on.
    let col = |start: usize, width: usize, i: usize, name: &str| {
        field(bytes, FIXED_HEADER + start * ns + i * width, width, name)
    };
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = col(0, 16, i, "label")?;
        let physical_min: f64 = number(&col(104, 8, i, "physical_min")?, "physical_min")?;
        let physical_max: f64 = number(&col(112, 8, i, "physical_max")?, "physical_max")?;
        let digital_min: i32 = number(&col(120, 8, i, "digital_min")?, "digital_min")?;
        let digital_max: i32 = number(&col(128, 8, i, "digital_max")?, "digital_max")?;
        let samples_per_record: usize =
            number(&col(216, 8, i, "samples_per_record")?, "samples_per_record")?;
        if digital_max <= digital_min {
            return Err(Error::Format {
                field: "digital_max".into(),
                message: format!("signal `{label}`: digital_max must exceed digital_min"),
            });
        }
        if physical_max == physical_min {
            return Err(Error::Format {
                field: "physical_max".into(),
                message: format!("signal `{label}`: empty physical range"),
            });
        }
        signals.push(SignalHeader {
            label,
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            samples_per_record,
        });
    }

    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let n_records = if n_records_raw < 0 {
        // -1 while recording: infer from size
        (bytes.len() - header_bytes) / record_bytes.max(1)
    } else {
        n_records_raw as usize
    };
    Ok(EdfHeader {
        n_records,
        record_duration_s,
        signals,
    })
}

/// Decodes an EDF byte buffer into a [`Recording`] in physical units.
pub fn read_edf(bytes: &[u8], subject_id: &str) -> Result<Recording> {
    let header = read_header(bytes)?;
    let ns = header.signals.len();
    let data_start = FIXED_HEADER + ns * SIGNAL_HEADER;
    let record_samples: usize = header.signals.iter().map(|s| s.samples_per_record).sum();
    let needed = data_start + header.n_records * record_samples * 2;
    if bytes.len() < needed {
        return Err(Error::Format {
            field: "data_records".into(),
            message: format!(
                "{} records need {needed} bytes, file has {}",
                header.n_records,
                bytes.len()
            ),
        });
    }

    let keep: Vec<usize> = (0..ns).filter(|&i| !header.signals[i].is_annotation()).collect();
    if keep.is_empty() {
        return Err(Error::Unsupported("file contains only annotation signals".into()));
    }
    let spr = header.signals[keep[0]].samples_per_record;
    if let Some(&bad) = keep.iter().find(|&&i| header.signals[i].samples_per_record != spr) {
        return Err(Error::Unsupported(format!(
            "mixed sampling rates: `{}` has {} samples per record, `{}` has {spr}",
            header.signals[bad].label,
            header.signals[bad].samples_per_record,
            header.signals[keep[0]].label
        )));
    }

    let mut samples: Vec<Vec<f64>> = keep
        .iter()
        .map(|_| Vec::with_capacity(header.n_records * spr))
        .collect();
    let mut offset = data_start;
    for _ in 0..header.n_records {
        let mut k = 0;
        for (i, sig) in header.signals.iter().enumerate() {
            let n = sig.samples_per_record;
            if keep.get(k) == Some(&i) {
                let out = &mut samples[k];
                for chunk in bytes[offset..offset + 2 * n].chunks_exact(2) {
                    out.push(sig.to_physical(i16::from_le_bytes([chunk[0], chunk[1]])));
                }
                k += 1;
            }
            offset += 2 * n;
        }
    }

    let sample_rate = spr as f64 / header.record_duration_s;
    let channels = keep.iter().map(|&i| header.signals[i].label.clone()).collect();
    Recording::new(sample_rate, channels, samples, subject_id)
}

/// Signal description for [`write_edf`].
#[derive(Clone, Debug)]
pub struct EdfSignal {
    pub header: SignalHeader,
    pub digital: Vec<i16>,
}

fn put(buf: &mut Vec<u8>, text: &str, width: usize) {
    let mut s: Vec<u8> = text.bytes().take(width).collect();
    s.resize(width, b' ');
    buf.extend_from_slice(&s);
}

/// Writes a plain EDF file. Every signal must hold
/// `n_records * samples_per_record` digital samples.
pub fn write_edf(signals: &[EdfSignal], n_records: usize, record_duration_s: f64) -> Result<Vec<u8>> {
    for s in signals {
        if s.digital.len() != n_records * s.header.samples_per_record {
            return Err(Error::shape(format!(
                "signal `{}` has {} samples, expected {}",
                s.header.label,
                s.digital.len(),
                n_records * s.header.samples_per_record
            )));
        }
    }
    let ns = signals.len();
    let mut buf = Vec::new();
    put(&mut buf, "0", 8);
    put(&mut buf, "X X X X", 80);
    put(&mut buf, "Startdate X X X X", 80);
    put(&mut buf, "01.01.00", 8);
    put(&mut buf, "00.00.00", 8);
    put(&mut buf, &(FIXED_HEADER + ns * SIGNAL_HEADER).to_string(), 8);
    put(&mut buf, "", 44);
    put(&mut buf, &n_records.to_string(), 8);
    put(&mut buf, &format_number(record_duration_s), 8);
    put(&mut buf, &ns.to_string(), 4);
    let h: Vec<&SignalHeader> = signals.iter().map(|s| &s.header).collect();
    h.iter().for_each(|s| put(&mut buf, &s.label, 16));
    h.iter().for_each(|_| put(&mut buf, "", 80));
    h.iter().for_each(|_| put(&mut buf, "uV", 8));
    h.iter().for_each(|s| put(&mut buf, &format_number(s.physical_min), 8));
    h.iter().for_each(|s| put(&mut buf, &format_number(s.physical_max), 8));
    h.iter().for_each(|s| put(&mut buf, &s.digital_min.to_string(), 8));
    h.iter().for_each(|s| put(&mut buf, &s.digital_max.to_string(), 8));
    h.iter().for_each(|_| put(&mut buf, "", 80));
    h.iter().for_each(|s| put(&mut buf, &s.samples_per_record.to_string(), 8));
    h.iter().for_each(|_| put(&mut buf, "", 32));
    for r in 0..n_records {
        for s in signals {
            let n = s.header.samples_per_record;
            for d in &s.digital[r * n..(r + 1) * n] {
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

fn format_number(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 8 {
        s
    } else {
        format!("{v:.6}").chars().take(8).collect()
    }
}
