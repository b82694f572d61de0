//! Sliding-window multitaper power estimates.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::dpss::{dpss, TaperSet};
use crate::error::{Error, Result};

/// Window, step and band of the time-frequency grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramParams {
    pub win_s: f64,
    pub step_s: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Time of the first epoch sample relative to the cue is `-cue_offset_s`.
    pub cue_offset_s: f64,
    pub time_bandwidth: f64,
    pub n_tapers: usize,
}

impl Default for SpectrogramParams {
    fn default() -> Self {
        SpectrogramParams {
            win_s: 0.5,
            step_s: 0.05,
            fmin_hz: 4.0,
            fmax_hz: 30.0,
            cue_offset_s: 0.5,
            time_bandwidth: 1.5,
            n_tapers: 2,
        }
    }
}

/// Power per frequency bin and frame for one channel: `power[f][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerGrid {
    pub freqs_hz: Vec<f64>,
    pub frame_times_s: Vec<f64>,
    pub power: Vec<Vec<f64>>,
}

fn whole(seconds: f64, fs: f64, what: &str) -> Result<usize> {
    let n = seconds * fs;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-9 * n.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "{what} of {seconds} s is {n} samples at {fs} Hz; need a positive integer"
        )));
    }
    Ok(r as usize)
}

/// Reusable multitaper estimator for one sample rate and parameter set.
///
/// Each segment is mean-removed, multiplied by every taper, zero-padded to
/// `fs` points (1 Hz bins) and transformed; power is the mean of the
/// squared magnitudes over tapers.
#[derive(Clone)]
pub struct Multitaper {
    params: SpectrogramParams,
    fs: f64,
    win: usize,
    step: usize,
    nfft: usize,
    bins: Vec<usize>,
    tapers: TaperSet,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Multitaper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Multitaper")
            .field("params", &self.params)
            .field("fs", &self.fs)
            .field("nfft", &self.nfft)
            .finish()
    }
}

impl Multitaper {
    pub fn new(fs: f64, params: SpectrogramParams) -> Result<Self> {
        let win = whole(params.win_s, fs, "window")?;
        let tapers = dpss(win, params.time_bandwidth, params.n_tapers)?;
        Self::with_tapers(fs, params, tapers)
    }

    pub fn with_tapers(fs: f64, params: SpectrogramParams, tapers: TaperSet) -> Result<Self> {
        let win = whole(params.win_s, fs, "window")?;
        let step = whole(params.step_s, fs, "step")?;
        if tapers.window_len() != win {
            return Err(Error::invalid(format!(
                "tapers have length {}, window is {win} samples",
                tapers.window_len()
            )));
        }
        // 1 Hz bins need an FFT length of fs points
        let nfft = whole(1.0, fs, "1 Hz FFT length")?.max(win);
        let resolution = fs / nfft as f64;
        if !(params.fmin_hz >= 0.0 && params.fmin_hz <= params.fmax_hz && params.fmax_hz <= fs / 2.0) {
            return Err(Error::invalid(format!(
                "frequency range {}-{} Hz outside [0, {}]",
                params.fmin_hz,
                params.fmax_hz,
                fs / 2.0
            )));
        }
        let first = (params.fmin_hz / resolution).ceil() as usize;
        let last = (params.fmax_hz / resolution + 1e-9).floor() as usize;
        let bins: Vec<usize> = (first..=last).collect();
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Multitaper {
            params,
            fs,
            win,
            step,
            nfft,
            bins,
            tapers,
            fft,
        })
    }

    pub fn params(&self) -> &SpectrogramParams {
        &self.params
    }

    pub fn tapers(&self) -> &TaperSet {
        &self.tapers
    }

    pub fn window_samples(&self) -> usize {
        self.win
    }

    pub fn step_samples(&self) -> usize {
        self.step
    }

    pub fn freqs_hz(&self) -> Vec<f64> {
        let res = self.fs / self.nfft as f64;
        self.bins.iter().map(|&b| b as f64 * res).collect()
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.win {
            0
        } else {
            (n_samples - self.win) / self.step + 1
        }
    }

    /// Window-centre times relative to the cue.
    pub fn frame_times_s(&self, n_samples: usize) -> Vec<f64> {
        (0..self.n_frames(n_samples))
            .map(|k| (k * self.step) as f64 / self.fs + self.params.win_s / 2.0 - self.params.cue_offset_s)
            .collect()
    }

    /// Power grid for one channel.
    pub fn power(&self, x: &[f64]) -> Result<PowerGrid> {
        if x.len() < self.win {
            return Err(Error::invalid(format!(
                "window of {} samples exceeds signal of {}",
                self.win,
                x.len()
            )));
        }
        let n_frames = self.n_frames(x.len());
        let mut power = vec![vec![0.0; n_frames]; self.bins.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let n_tapers = self.tapers.len() as f64;
        for frame in 0..n_frames {
            let seg = &x[frame * self.step..frame * self.step + self.win];
            let mean = seg.iter().sum::<f64>() / self.win as f64;
            for taper in self.tapers.tapers() {
                buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(taper) {
                    *b = Complex64::new((v - mean) * w, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                for (row, &bin) in power.iter_mut().zip(&self.bins) {
                    row[frame] += buf[bin].norm_sqr() / n_tapers;
                }
            }
        }
        Ok(PowerGrid {
            freqs_hz: self.freqs_hz(),
            frame_times_s: self.frame_times_s(x.len()),
            power,
        })
    }
}

/// One [`PowerGrid`] per channel of `epoch`.
pub fn multitaper_spectrogram(
    epoch: &crate::data::Epoch,
    fs: f64,
    tapers: &TaperSet,
    params: SpectrogramParams,
) -> Result<Vec<PowerGrid>> {
    let mt = Multitaper::with_tapers(fs, params, tapers.clone())?;
    (0..epoch.n_channels())
        .map(|c| {
            let x: Vec<f64> = epoch.channel(c).iter().map(|&v| f64::from(v)).collect();
            mt.power(&x)
        })
        .collect()
}
