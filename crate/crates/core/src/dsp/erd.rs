//! Baseline-referenced ERD/ERS maps and their summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::multitaper::{Multitaper, PowerGrid};
use crate::data::Epoch;
use crate::error::{Error, Result};

pub const BASELINE_S: [f64; 2] = [-0.5, 0.0];
pub const ALPHA_HZ: [f64; 2] = [8.0, 15.0];
pub const BETA_HZ: [f64; 2] = [20.0, 30.0];
pub const POST_CUE_INTERVAL_S: [f64; 2] = [0.5, 1.5];

// frame times are sums of binary fractions; compare bounds with slack
const TIME_EPS: f64 = 1e-9;

/// Signed percent power change per frequency bin (`values[f][t]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfrMap {
    pub values: Vec<Vec<f64>>,
    pub freqs_hz: Vec<f64>,
    pub frame_times_s: Vec<f64>,
    pub electrode: String,
    /// Bins whose baseline power was zero; their rows are NaN.
    pub undefined_bins: Vec<usize>,
}

impl TfrMap {
    pub fn n_freqs(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frame_times_s.len()
    }

    fn same_grid(&self, other: &TfrMap) -> bool {
        self.electrode == other.electrode
            && self.freqs_hz == other.freqs_hz
            && self.frame_times_s == other.frame_times_s
    }

    /// CSV grid: an optional metadata row, then frame times across the top
    /// and frequencies down the first column.
    pub fn to_csv(&self, metadata: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(meta) = metadata {
            let _ = writeln!(out, "# {meta}");
        }
        out.push_str("freq_hz");
        for t in &self.frame_times_s {
            let _ = write!(out, ",{t:.4}");
        }
        out.push('\n');
        for (f, row) in self.freqs_hz.iter().zip(&self.values) {
            let _ = write!(out, "{f}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Binary PPM rendering: frequency increases upward, blue for ERD, red
    /// for ERS, saturating at `±range` percent.
    pub fn to_ppm(&self, range: f64, scale: usize) -> Vec<u8> {
        let scale = scale.max(1);
        let (w, h) = (self.n_frames() * scale, self.n_freqs() * scale);
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            let f = self.n_freqs() - 1 - y / scale;
            for x in 0..w {
                out.extend_from_slice(&diverging(self.values[f][x / scale] / range));
            }
        }
        out
    }
}

fn diverging(v: f64) -> [u8; 3] {
    if !v.is_finite() {
        return [128, 128, 128];
    }
    let v = v.clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
    if v < 0.0 {
        [fade(-v), fade(-v), 255]
    } else {
        [255, fade(v), fade(v)]
    }
}

/// `100 * (P - P_base) / P_base` per frequency bin, with `P_base` the mean
/// power over frames centred inside the (inclusive) baseline interval.
pub fn erd_ers(power: &PowerGrid, baseline_s: [f64; 2], electrode: &str) -> Result<TfrMap> {
    let base_frames: Vec<usize> = power
        .frame_times_s
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= baseline_s[0] - TIME_EPS && t <= baseline_s[1] + TIME_EPS)
        .map(|(i, _)| i)
        .collect();
    if base_frames.is_empty() {
        return Err(Error::invalid(format!(
            "no frame centre inside baseline [{}, {}] s",
            baseline_s[0], baseline_s[1]
        )));
    }
    let mut undefined_bins = Vec::new();
    let values = power
        .power
        .iter()
        .enumerate()
        .map(|(f, row)| {
            let base = base_frames.iter().map(|&i| row[i]).sum::<f64>() / base_frames.len() as f64;
            if base > 0.0 {
                row.iter().map(|p| 100.0 * (p - base) / base).collect()
            } else {
                undefined_bins.push(f);
                vec![f64::NAN; row.len()]
            }
        })
        .collect();
    Ok(TfrMap {
        values,
        freqs_hz: power.freqs_hz.clone(),
        frame_times_s: power.frame_times_s.clone(),
        electrode: electrode.to_string(),
        undefined_bins,
    })
}

/// Element-wise mean of maps sharing one grid and electrode.
pub fn average_tfr(maps: &[TfrMap]) -> Result<TfrMap> {
    let first = maps.first().ok_or_else(|| Error::invalid("no maps to average"))?;
    if let Some(bad) = maps.iter().position(|m| !m.same_grid(first)) {
        return Err(Error::shape(format!(
            "map {bad} ({}) has a different grid or electrode than map 0 ({})",
            maps[bad].electrode, first.electrode
        )));
    }
    let n = maps.len() as f64;
    let mut values = vec![vec![0.0; first.n_frames()]; first.n_freqs()];
    for m in maps {
        for (acc, row) in values.iter_mut().zip(&m.values) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    values.iter_mut().flatten().for_each(|v| *v /= n);
    let mut undefined_bins: Vec<usize> = maps.iter().flat_map(|m| m.undefined_bins.iter().copied()).collect();
    undefined_bins.sort_unstable();
    undefined_bins.dedup();
    Ok(TfrMap {
        values,
        freqs_hz: first.freqs_hz.clone(),
        frame_times_s: first.frame_times_s.clone(),
        electrode: first.electrode.clone(),
        undefined_bins,
    })
}

/// Mean map value over bins in `band_hz` and frames centred in
/// `interval_s` (both inclusive).
pub fn bandpower_change(map: &TfrMap, band_hz: [f64; 2], interval_s: [f64; 2]) -> Result<f64> {
    let freqs: Vec<usize> = (0..map.n_freqs())
        .filter(|&i| map.freqs_hz[i] >= band_hz[0] && map.freqs_hz[i] <= band_hz[1])
        .collect();
    let frames: Vec<usize> = (0..map.n_frames())
        .filter(|&i| {
            let t = map.frame_times_s[i];
            t >= interval_s[0] - TIME_EPS && t <= interval_s[1] + TIME_EPS
        })
        .collect();
    if freqs.is_empty() || frames.is_empty() {
        return Err(Error::invalid(format!(
            "band {band_hz:?} Hz x interval {interval_s:?} s selects no cells"
        )));
    }
    let sum: f64 = freqs
        .iter()
        .flat_map(|&f| frames.iter().map(move |&t| map.values[f][t]))
        .sum();
    Ok(sum / (freqs.len() * frames.len()) as f64)
}

/// Per-channel ERD/ERS maps of one epoch with the default baseline.
pub fn epoch_tfr(mt: &Multitaper, epoch: &Epoch, channel_names: &[String]) -> Result<Vec<TfrMap>> {
    if channel_names.len() != epoch.n_channels() {
        return Err(Error::shape(format!(
            "{} channel names for a {}-channel epoch",
            channel_names.len(),
            epoch.n_channels()
        )));
    }
    (0..epoch.n_channels())
        .map(|c| {
            let x: Vec<f64> = epoch.channel(c).iter().map(|&v| f64::from(v)).collect();
            erd_ers(&mt.power(&x)?, BASELINE_S, &channel_names[c])
        })
        .collect()
}
