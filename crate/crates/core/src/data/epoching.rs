//! Cue-aligned and resting-state epoch extraction.

use crate::data::{ClassLabel, Epoch, EpochKind, Recording};
use crate::error::{Error, Result};

pub const PRE_CUE_S: f64 = 0.5;
pub const POST_CUE_S: f64 = 2.0;
pub const RESTING_RECORDING_S: f64 = 60.0;
pub const RESTING_DISCARD_S: f64 = 5.0;
pub const RESTING_EPOCH_S: f64 = 2.5;

/// Half-open sample range `[start, end)` of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochWindow {
    pub start: usize,
    pub end: usize,
}

fn whole_samples(seconds: f64, fs: f64, what: &str) -> Result<usize> {
    let n = seconds * fs;
    let r = n.round();
    if (n - r).abs() > 1e-9 * n.abs().max(1.0) {
        return Err(Error::Unsupported(format!(
            "{what} of {seconds} s is {n} samples at {fs} Hz, not an integer"
        )));
    }
    Ok(r as usize)
}

fn slice_epoch(rec: &Recording, w: EpochWindow) -> Vec<f32> {
    let mut data = Vec::with_capacity(rec.n_channels() * (w.end - w.start));
    for ch in rec.samples() {
        data.extend(ch[w.start..w.end].iter().map(|&v| v as f32));
    }
    data
}

/// Window for a cue at `cue_s`: the cue sample is `round(cue_s * fs)` and
/// the window is `[cue - pre, cue + post)`.
fn cue_window(cue_s: f64, fs: f64, pre: usize, post: usize) -> Option<EpochWindow> {
    let cue = (cue_s * fs).round();
    if !cue.is_finite() || cue < pre as f64 {
        return None;
    }
    let cue = cue as usize;
    Some(EpochWindow {
        start: cue - pre,
        end: cue + post,
    })
}

/// One epoch per cue spanning 0.5 s before to 2 s after the cue.
///
/// At 160 Hz this is 400 samples with the cue at sample 80. Any cue whose
/// window leaves the recording fails the whole call; the error names the
/// first offending cue.
pub fn extract_cue_epochs(rec: &Recording, cue_times_s: &[f64], label: ClassLabel) -> Result<Vec<Epoch>> {
    let fs = rec.sample_rate_hz();
    let pre = whole_samples(PRE_CUE_S, fs, "pre-cue interval")?;
    let post = whole_samples(POST_CUE_S, fs, "post-cue interval")?;
    let mut out = Vec::with_capacity(cue_times_s.len());
    for (index, &t) in cue_times_s.iter().enumerate() {
        let w = cue_window(t, fs, pre, post)
            .filter(|w| w.end <= rec.n_samples())
            .ok_or_else(|| Error::OutOfBounds {
                index,
                time_s: t,
                message: format!(
                    "needs {PRE_CUE_S} s before and {POST_CUE_S} s after the cue inside {} samples",
                    rec.n_samples()
                ),
            })?;
        out.push(Epoch::new(
            slice_epoch(rec, w),
            rec.n_channels(),
            pre + post,
            Some(label),
            rec.subject_id.clone(),
            EpochKind::CueAligned,
        )?);
    }
    Ok(out)
}

/// Resting epoch windows for a recording of `n_samples` at `fs`.
pub fn resting_windows(n_samples: usize, fs: f64) -> Result<Vec<EpochWindow>> {
    let total = whole_samples(RESTING_RECORDING_S, fs, "resting recording")?;
    let discard = whole_samples(RESTING_DISCARD_S, fs, "discarded margin")?;
    let len = whole_samples(RESTING_EPOCH_S, fs, "resting epoch")?;
    if n_samples < total {
        return Err(Error::invalid(format!(
            "resting recording has {:.3} s, need {RESTING_RECORDING_S} s",
            n_samples as f64 / fs
        )));
    }
    let usable_end = total - discard;
    Ok((0..)
        .map(|k| discard + k * len)
        .take_while(|s| s + len <= usable_end)
        .map(|start| EpochWindow {
            start,
            end: start + len,
        })
        .collect())
}

/// Twenty non-overlapping 2.5 s epochs from a one-minute resting run
/// after discarding 5 s at each end. Longer recordings use their first
/// minute.
pub fn extract_resting_epochs(rec: &Recording) -> Result<Vec<Epoch>> {
    let windows = resting_windows(rec.n_samples(), rec.sample_rate_hz())?;
    windows
        .into_iter()
        .map(|w| {
            Epoch::new(
                slice_epoch(rec, w),
                rec.n_channels(),
                w.end - w.start,
                None,
                rec.subject_id.clone(),
                EpochKind::Resting,
            )
        })
        .collect()
}
