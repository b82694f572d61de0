//! Recordings, epochs and epoch stores.

mod csv_io;
pub mod edf;
mod epoching;
mod store;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{read_csv_recording, read_events, CueEvent};
pub use epoching::{
    extract_cue_epochs, extract_resting_epochs, EpochWindow, POST_CUE_S, PRE_CUE_S,
    RESTING_DISCARD_S, RESTING_EPOCH_S, RESTING_RECORDING_S,
};
pub use store::{load_store, save_store, split_train_val, EpochStore, StoreManifest, STORE_VERSION};

/// Sample rate of the PhysioBank motor imagery recordings.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 160.0;
pub const EPOCH_CHANNELS: usize = 15;
pub const EPOCH_SAMPLES: usize = 400;

/// The 15 sensorimotor electrodes around Cz, row by row (FC, C, CP).
pub const SENSORIMOTOR_CHANNELS: [&str; EPOCH_CHANNELS] = [
    "FC3", "FC1", "FCz", "FC2", "FC4", //
    "C3", "C1", "Cz", "C2", "C4", //
    "CP3", "CP1", "CPz", "CP2", "CP4",
];

/// Motor imagery class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassLabel {
    Right,
    Left,
    Feet,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Right, ClassLabel::Left, ClassLabel::Feet];

    /// Position of the hot entry in the condition vector.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Right => 0,
            ClassLabel::Left => 1,
            ClassLabel::Feet => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Right => "RIGHT",
            ClassLabel::Left => "LEFT",
            ClassLabel::Feet => "FEET",
        }
    }

    pub fn condition(self) -> ConditionVector {
        let mut entries = [0.0; 3];
        entries[self.index()] = 1.0;
        ConditionVector { entries }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RIGHT" => Ok(ClassLabel::Right),
            "LEFT" => Ok(ClassLabel::Left),
            "FEET" => Ok(ClassLabel::Feet),
            other => Err(Error::invalid(format!(
                "unknown condition `{other}`; expected one of RIGHT, LEFT, FEET"
            ))),
        }
    }
}

/// Condition vector fed to the decoder.
///
/// Vectors built through [`ConditionVector::one_hot`] or
/// [`ClassLabel::condition`] are always one-hot; [`ConditionVector::soft`]
/// admits arbitrary entries for exploratory generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    entries: [f64; 3],
}

impl ConditionVector {
    pub const LEN: usize = 3;

    pub fn one_hot(entries: [f64; 3]) -> Result<Self> {
        let v = ConditionVector { entries };
        if !v.is_one_hot() {
            return Err(Error::invalid(format!(
                "condition vector {entries:?} is not one-hot"
            )));
        }
        Ok(v)
    }

    /// Non-one-hot condition for exploration. Not part of the trained regime.
    pub fn soft(entries: [f64; 3]) -> Result<Self> {
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("condition vector entries must be finite"));
        }
        Ok(ConditionVector { entries })
    }

    pub fn entries(&self) -> [f64; 3] {
        self.entries
    }

    pub fn is_one_hot(&self) -> bool {
        let ones = self.entries.iter().filter(|&&e| e == 1.0).count();
        let zeros = self.entries.iter().filter(|&&e| e == 0.0).count();
        ones == 1 && zeros == 2
    }

    pub fn label(&self) -> Option<ClassLabel> {
        if !self.is_one_hot() {
            return None;
        }
        self.entries
            .iter()
            .position(|&e| e == 1.0)
            .and_then(ClassLabel::from_index)
    }
}

/// Continuous multichannel recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    sample_rate_hz: f64,
    channels: Vec<String>,
    samples: Vec<Vec<f64>>,
    pub subject_id: String,
}

impl Recording {
    pub fn new(
        sample_rate_hz: f64,
        channels: Vec<String>,
        samples: Vec<Vec<f64>>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if channels.len() != samples.len() {
            return Err(Error::shape(format!(
                "{} channel names for {} sample sequences",
                channels.len(),
                samples.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &channels {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate channel name `{name}`")));
            }
        }
        if let Some(first) = samples.first() {
            if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != first.len()) {
                return Err(Error::shape(format!(
                    "channel `{}` has {} samples, expected {}",
                    channels[i],
                    s.len(),
                    first.len()
                )));
            }
        }
        Ok(Recording {
            sample_rate_hz,
            channels,
            samples,
            subject_id: subject_id.into(),
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    /// A recording with no samples cannot be epoched.
    pub fn is_usable_for_epoching(&self) -> bool {
        self.n_samples() > 0
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .or_else(|| {
                let wanted = normalize_channel_name(name);
                self.channels
                    .iter()
                    .position(|c| normalize_channel_name(c) == wanted)
            })
    }

    /// Keep only `names`, in the requested order.
    pub fn select_channels<S: AsRef<str>>(&self, names: &[S]) -> Result<Recording> {
        let mut channels = Vec::with_capacity(names.len());
        let mut samples = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let idx = self
                .channel_index(name)
                .ok_or_else(|| Error::MissingChannel(name.to_string()))?;
            channels.push(name.to_string());
            samples.push(self.samples[idx].clone());
        }
        Recording::new(self.sample_rate_hz, channels, samples, self.subject_id.clone())
    }

    /// First `n` samples of every channel.
    pub fn truncated(&self, n: usize) -> Recording {
        let samples = self
            .samples
            .iter()
            .map(|s| s[..n.min(s.len())].to_vec())
            .collect();
        Recording {
            sample_rate_hz: self.sample_rate_hz,
            channels: self.channels.clone(),
            samples,
            subject_id: self.subject_id.clone(),
        }
    }
}

/// PhysioBank labels look like `Fc3.` or `Cz..`; compare without the
/// padding dots and case.
fn normalize_channel_name(name: &str) -> String {
    name.trim().trim_end_matches('.').to_ascii_lowercase()
}

/// Free-function form of [`Recording::select_channels`].
pub fn select_channels<S: AsRef<str>>(rec: &Recording, names: &[S]) -> Result<Recording> {
    rec.select_channels(names)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochKind {
    CueAligned,
    Resting,
    /// Decoder output for a chosen condition.
    Artificial,
}

/// Channel-major epoch matrix with metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    data: Vec<f32>,
    n_channels: usize,
    n_samples: usize,
    label: Option<ClassLabel>,
    pub subject_id: String,
    kind: EpochKind,
}

impl Epoch {
    pub fn new(
        data: Vec<f32>,
        n_channels: usize,
        n_samples: usize,
        label: Option<ClassLabel>,
        subject_id: impl Into<String>,
        kind: EpochKind,
    ) -> Result<Self> {
        if data.len() != n_channels * n_samples {
            return Err(Error::shape(format!(
                "epoch payload has {} values, expected {n_channels}x{n_samples}",
                data.len()
            )));
        }
        match (kind, label) {
            (EpochKind::Resting, Some(_)) => {
                return Err(Error::invalid("resting epochs carry no label"))
            }
            (EpochKind::CueAligned | EpochKind::Artificial, None) => {
                return Err(Error::invalid("cue-aligned and artificial epochs need a label"))
            }
            _ => {}
        }
        Ok(Epoch {
            data,
            n_channels,
            n_samples,
            label,
            subject_id: subject_id.into(),
            kind,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn label(&self) -> Option<ClassLabel> {
        self.label
    }

    pub fn kind(&self) -> EpochKind {
        self.kind
    }

    pub fn is_standard_shape(&self) -> bool {
        self.n_channels == EPOCH_CHANNELS && self.n_samples == EPOCH_SAMPLES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(names: &[&str]) -> Recording {
        let samples = (0..names.len()).map(|i| vec![i as f64; 4]).collect();
        Recording::new(
            160.0,
            names.iter().map(|s| s.to_string()).collect(),
            samples,
            "S001",
        )
        .unwrap()
    }

    #[test]
    fn select_fifteen_of_sixty_four_keeps_request_order() {
        let mut names: Vec<String> = (0..49).map(|i| format!("X{i}")).collect();
        names.extend(SENSORIMOTOR_CHANNELS.iter().rev().map(|s| s.to_string()));
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let r = rec(&refs);
        assert_eq!(r.n_channels(), 64);
        let sel = r.select_channels(&SENSORIMOTOR_CHANNELS).unwrap();
        assert_eq!(sel.n_channels(), 15);
        assert_eq!(sel.channels(), SENSORIMOTOR_CHANNELS.map(String::from));
        // CP4 was stored right after the 49 fillers
        assert_eq!(sel.samples()[14][0], 49.0);
    }

    #[test]
    fn select_permuted_and_unknown() {
        let r = rec(&["C3", "Cz", "C4"]);
        let sel = r.select_channels(&["C4", "C3"]).unwrap();
        assert_eq!(sel.samples()[0][0], 2.0);
        assert_eq!(sel.samples()[1][0], 0.0);
        match r.select_channels(&["XX"]) {
            Err(Error::MissingChannel(n)) => assert_eq!(n, "XX"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn physiobank_dotted_labels_match() {
        let r = rec(&["Fc3.", "Cz..", "Cp4."]);
        let sel = r.select_channels(&["CZ", "FC3"]).unwrap();
        assert_eq!(sel.samples()[0][0], 1.0);
    }

    #[test]
    fn recording_invariants() {
        assert!(Recording::new(0.0, vec![], vec![], "s").is_err());
        assert!(Recording::new(
            160.0,
            vec!["a".into(), "a".into()],
            vec![vec![0.0], vec![0.0]],
            "s"
        )
        .is_err());
        assert!(Recording::new(
            160.0,
            vec!["a".into(), "b".into()],
            vec![vec![0.0], vec![0.0, 1.0]],
            "s"
        )
        .is_err());
    }

    #[test]
    fn condition_vectors() {
        assert_eq!(ClassLabel::Right.condition().entries(), [1.0, 0.0, 0.0]);
        assert_eq!(ClassLabel::Left.condition().entries(), [0.0, 1.0, 0.0]);
        assert!(ConditionVector::one_hot([0.5, 0.5, 0.0]).is_err());
        assert!(ConditionVector::one_hot([1.0, 1.0, 0.0]).is_err());
        let soft = ConditionVector::soft([0.5, 0.5, 0.0]).unwrap();
        assert!(!soft.is_one_hot());
        assert_eq!(soft.label(), None);
        assert_eq!("left".parse::<ClassLabel>().unwrap(), ClassLabel::Left);
        let err = "UP".parse::<ClassLabel>().unwrap_err().to_string();
        assert!(err.contains("RIGHT, LEFT, FEET"));
    }

    #[test]
    fn epoch_label_iff_not_resting() {
        let d = vec![0.0; 6];
        assert!(Epoch::new(d.clone(), 2, 3, None, "s", EpochKind::Resting).is_ok());
        assert!(Epoch::new(d.clone(), 2, 3, Some(ClassLabel::Feet), "s", EpochKind::Resting).is_err());
        assert!(Epoch::new(d.clone(), 2, 3, None, "s", EpochKind::CueAligned).is_err());
        assert!(Epoch::new(d, 3, 3, None, "s", EpochKind::Resting).is_err());
    }
}
