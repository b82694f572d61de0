//! Ground-truth synthetic motor-imagery data and a separability score.
//!
//! Every synthetic epoch is coloured background noise plus an alpha and a
//! beta rhythm shared by all channels, with per-trial phases drawn from a
//! configurable spread (partially phase-locked to the epoch start by
//! default).
//! For cue-aligned trials, the class's modulation rules scale the chosen
//! rhythm on the chosen channels by a fixed ratio from the cue sample on,
//! producing a known event-related desynchronisation. Resting epochs carry
//! the same rhythms without modulation.
//!
//! [`evaluate_separability`] measures how well per-channel alpha and beta
//! ERD/ERS values identify the condition of a set of epochs.

mod classify;

pub use classify::{evaluate_features, RidgeOneVsRest, SeparabilityReport};

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, Epoch, EpochKind, EpochStore, DEFAULT_SAMPLE_RATE_HZ, SENSORIMOTOR_CHANNELS};
use crate::dsp::{bandpower_change, epoch_tfr, Multitaper, SpectrogramParams, ALPHA_HZ, BETA_HZ, POST_CUE_INTERVAL_S};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rhythm {
    Alpha,
    Beta,
}

impl Rhythm {
    pub fn name(self) -> &'static str {
        match self {
            Rhythm::Alpha => "alpha",
            Rhythm::Beta => "beta",
        }
    }
}

/// Scale `rhythm` on `channels` by `ratio` from the cue on, for trials of
/// class `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationRule {
    pub label: ClassLabel,
    pub rhythm: Rhythm,
    pub channels: Vec<String>,
    pub ratio: f64,
}

/// Background: AR(1) "1/f-like" noise with the given standard deviation
/// plus white noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ar_coefficient: f64,
    pub coloured_sd: f64,
    pub white_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects: usize,
    pub trials_per_class: usize,
    pub resting_per_subject: usize,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    pub n_samples: usize,
    /// Sample index of the cue within each epoch.
    pub cue_sample: usize,
    /// Each subject's rhythm frequencies are drawn uniformly from these.
    pub alpha_hz: [f64; 2],
    pub beta_hz: [f64; 2],
    pub alpha_amplitude: f64,
    pub beta_amplitude: f64,
    /// Relative per-trial amplitude jitter (uniform in `1 ± jitter`).
    pub amplitude_jitter: f64,
    /// Per-trial rhythm phases are uniform in `[0, phase_spread)` radians;
    /// `2π` gives fully random phases, `0` phase-locks every epoch.
    pub phase_spread: f64,
    pub noise: NoiseSpec,
    pub rules: Vec<ModulationRule>,
    pub seed: u64,
}

fn rule(label: ClassLabel, rhythm: Rhythm, channels: &[&str], ratio: f64) -> ModulationRule {
    ModulationRule {
        label,
        rhythm,
        channels: channels.iter().map(|s| s.to_string()).collect(),
        ratio,
    }
}

impl Default for SynthSpec {
    /// Five subjects, 20 trials per class, phases spread over a quarter
    /// cycle: RIGHT suppresses beta over the
    /// left hemisphere (C3, C1), LEFT suppresses alpha over the right
    /// hemisphere (C4, C2), FEET suppresses alpha at Cz.
    fn default() -> Self {
        SynthSpec {
            subjects: 5,
            trials_per_class: 20,
            resting_per_subject: 20,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            channels: SENSORIMOTOR_CHANNELS.iter().map(|s| s.to_string()).collect(),
            n_samples: 400,
            cue_sample: 80,
            alpha_hz: [10.0, 11.0],
            beta_hz: [22.0, 24.0],
            alpha_amplitude: 2.0,
            beta_amplitude: 1.5,
            amplitude_jitter: 0.2,
            phase_spread: PI / 2.0,
            noise: NoiseSpec {
                ar_coefficient: 0.9,
                coloured_sd: 1.0,
                white_sd: 0.3,
            },
            rules: vec![
                rule(ClassLabel::Right, Rhythm::Beta, &["C3", "C1"], 0.3),
                rule(ClassLabel::Left, Rhythm::Alpha, &["C4", "C2"], 0.3),
                rule(ClassLabel::Feet, Rhythm::Alpha, &["Cz"], 0.3),
            ],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz <= 0.0 || self.n_samples == 0 || self.cue_sample >= self.n_samples {
            return Err(Error::invalid("need a positive rate and a cue inside the epoch"));
        }
        for (name, band) in [("alpha", self.alpha_hz), ("beta", self.beta_hz)] {
            if !(band[0] >= 4.0 && band[0] <= band[1] && band[1] <= 30.0) {
                return Err(Error::invalid(format!("{name} range {band:?} Hz outside 4-30 Hz")));
            }
        }
        if !(0.0..1.0).contains(&self.noise.ar_coefficient) || self.noise.coloured_sd < 0.0 || self.noise.white_sd < 0.0 {
            return Err(Error::invalid("noise needs an AR coefficient in [0, 1) and non-negative levels"));
        }
        if !(0.0..=2.0 * PI).contains(&self.phase_spread) {
            return Err(Error::invalid("phase spread must be in [0, 2π]"));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::invalid("amplitude jitter must be in [0, 1)"));
        }
        for r in &self.rules {
            if !(r.ratio > 0.0 && r.ratio <= 1.0) {
                return Err(Error::invalid(format!("amplitude ratio {} outside (0, 1]", r.ratio)));
            }
            for c in &r.channels {
                if !self.channels.contains(c) {
                    return Err(Error::MissingChannel(c.clone()));
                }
            }
        }
        Ok(())
    }
}

/// What was injected into one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub index: usize,
    pub subject_id: String,
    pub kind: EpochKind,
    pub label: Option<ClassLabel>,
    pub alpha_hz: f64,
    pub beta_hz: f64,
    pub alpha_phase: f64,
    pub beta_phase: f64,
    /// `(channel, rhythm, ratio)` for every modulated channel.
    pub modulated: Vec<(String, Rhythm, f64)>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    /// Cue-aligned, labelled trials.
    pub trials: EpochStore,
    pub trial_truth: Vec<TrialTruth>,
    pub resting: EpochStore,
    pub resting_truth: Vec<TrialTruth>,
}

pub const TRUTH_CSV_HEADER: &str = "index,subject,kind,label,alpha_hz,beta_hz,alpha_phase,beta_phase,modulation";

/// Ground truth as CSV; `modulation` lists `channel:rhythm:ratio` entries
/// separated by `;`.
pub fn truth_csv(truth: &[TrialTruth]) -> String {
    let mut s = format!("{TRUTH_CSV_HEADER}\n");
    for t in truth {
        let kind = match t.kind {
            EpochKind::CueAligned => "cue_aligned",
            EpochKind::Resting => "resting",
            EpochKind::Artificial => "artificial",
        };
        let modulation: Vec<String> = t
            .modulated
            .iter()
            .map(|(c, r, k)| format!("{c}:{}:{k}", r.name()))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            t.index,
            t.subject_id,
            kind,
            t.label.map_or("", |l| l.name()),
            t.alpha_hz,
            t.beta_hz,
            t.alpha_phase,
            t.beta_phase,
            modulation.join(";")
        );
    }
    s
}

struct SubjectRhythms {
    alpha_hz: f64,
    beta_hz: f64,
}

fn synth_epoch(
    spec: &SynthSpec,
    rhythms: &SubjectRhythms,
    label: Option<ClassLabel>,
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, f64, f64, Vec<(String, Rhythm, f64)>) {
    let n = spec.n_samples;
    let fs = spec.sample_rate_hz;
    let alpha_phase = spec.phase_spread * rng.random::<f64>();
    let beta_phase = spec.phase_spread * rng.random::<f64>();
    let j = spec.amplitude_jitter;
    let alpha_amp = spec.alpha_amplitude * rng.random_range(1.0 - j..=1.0 + j);
    let beta_amp = spec.beta_amplitude * rng.random_range(1.0 - j..=1.0 + j);
    let mut modulated = Vec::new();
    let mut data = Vec::with_capacity(spec.channels.len() * n);
    let a = spec.noise.ar_coefficient;
    // innovation scale giving the requested stationary deviation
    let innovation = spec.noise.coloured_sd * (1.0 - a * a).sqrt();
    let burn_in = 200;
    for ch in &spec.channels {
        let (mut ra, mut rb) = (1.0, 1.0);
        if let Some(l) = label {
            for r in spec.rules.iter().filter(|r| r.label == l && r.channels.contains(ch)) {
                match r.rhythm {
                    Rhythm::Alpha => ra *= r.ratio,
                    Rhythm::Beta => rb *= r.ratio,
                }
                modulated.push((ch.clone(), r.rhythm, r.ratio));
            }
        }
        let mut ar = 0.0;
        for _ in 0..burn_in {
            ar = a * ar + innovation * rng.sample::<f64, _>(StandardNormal);
        }
        for t in 0..n {
            ar = a * ar + innovation * rng.sample::<f64, _>(StandardNormal);
            let white = spec.noise.white_sd * rng.sample::<f64, _>(StandardNormal);
            let time = t as f64 / fs;
            let post = t >= spec.cue_sample;
            let ka = if post { ra } else { 1.0 };
            let kb = if post { rb } else { 1.0 };
            let v = ar
                + white
                + ka * alpha_amp * (2.0 * PI * rhythms.alpha_hz * time + alpha_phase).sin()
                + kb * beta_amp * (2.0 * PI * rhythms.beta_hz * time + beta_phase).sin();
            data.push(v as f32);
        }
    }
    (data, alpha_phase, beta_phase, modulated)
}

/// Generates the labelled trials (subject-major, then class, then trial)
/// and the resting epochs of every subject.
pub fn make_synthetic_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trials = Vec::new();
    let mut trial_truth = Vec::new();
    let mut resting = Vec::new();
    let mut resting_truth = Vec::new();
    for s in 0..spec.subjects {
        let subject = format!("S{:03}", s + 1);
        let rhythms = SubjectRhythms {
            alpha_hz: rng.random_range(spec.alpha_hz[0]..=spec.alpha_hz[1]),
            beta_hz: rng.random_range(spec.beta_hz[0]..=spec.beta_hz[1]),
        };
        for label in ClassLabel::ALL {
            for _ in 0..spec.trials_per_class {
                let (data, ap, bp, modulated) = synth_epoch(spec, &rhythms, Some(label), &mut rng);
                trial_truth.push(TrialTruth {
                    index: trials.len(),
                    subject_id: subject.clone(),
                    kind: EpochKind::CueAligned,
                    label: Some(label),
                    alpha_hz: rhythms.alpha_hz,
                    beta_hz: rhythms.beta_hz,
                    alpha_phase: ap,
                    beta_phase: bp,
                    modulated,
                });
                trials.push(Epoch::new(data, spec.channels.len(), spec.n_samples, Some(label), subject.clone(), EpochKind::CueAligned)?);
            }
        }
        for _ in 0..spec.resting_per_subject {
            let (data, ap, bp, _) = synth_epoch(spec, &rhythms, None, &mut rng);
            resting_truth.push(TrialTruth {
                index: resting.len(),
                subject_id: subject.clone(),
                kind: EpochKind::Resting,
                label: None,
                alpha_hz: rhythms.alpha_hz,
                beta_hz: rhythms.beta_hz,
                alpha_phase: ap,
                beta_phase: bp,
                modulated: Vec::new(),
            });
            resting.push(Epoch::new(data, spec.channels.len(), spec.n_samples, None, subject.clone(), EpochKind::Resting)?);
        }
    }
    let store = |epochs| EpochStore::new(spec.sample_rate_hz, spec.channels.clone(), spec.n_samples, epochs);
    Ok(SynthDataset {
        trials: store(trials)?,
        trial_truth,
        resting: store(resting)?,
        resting_truth,
    })
}

/// Feature names in [`erd_features`] order: alpha for every channel, then
/// beta for every channel.
pub fn feature_names(channel_names: &[String]) -> Vec<String> {
    [Rhythm::Alpha, Rhythm::Beta]
        .iter()
        .flat_map(|r| channel_names.iter().map(move |c| format!("{c}.{}", r.name())))
        .collect()
}

/// Per-epoch alpha and beta ERD/ERS (percent) over the post-cue interval
/// for every channel; undefined values (zero baseline power) become NaN.
pub fn erd_features(epochs: &[Epoch], channel_names: &[String], sample_rate_hz: f64) -> Result<Vec<Vec<f64>>> {
    let mt = Multitaper::new(sample_rate_hz, SpectrogramParams::default())?;
    epochs
        .iter()
        .map(|e| {
            let maps = epoch_tfr(&mt, e, channel_names)?;
            let mut f = Vec::with_capacity(2 * maps.len());
            for band in [ALPHA_HZ, BETA_HZ] {
                for m in &maps {
                    f.push(bandpower_change(m, band, POST_CUE_INTERVAL_S)?);
                }
            }
            Ok(f)
        })
        .collect()
}

/// Minimum epochs per condition for a meaningful cross-validated score.
pub const MIN_EPOCHS_PER_CONDITION: usize = 10;

/// Cross-validated accuracy of identifying which set each epoch came from,
/// with set `k` standing for condition `k`.
pub fn evaluate_separability(
    sets: &[&[Epoch]],
    channel_names: &[String],
    sample_rate_hz: f64,
) -> Result<SeparabilityReport> {
    if sets.len() < 2 {
        return Err(Error::invalid("separability needs at least two condition sets"));
    }
    if let Some((k, s)) = sets.iter().enumerate().find(|(_, s)| s.len() < MIN_EPOCHS_PER_CONDITION) {
        return Err(Error::invalid(format!(
            "condition set {k} has {} epochs, need at least {MIN_EPOCHS_PER_CONDITION}",
            s.len()
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, s) in sets.iter().enumerate() {
        features.extend(erd_features(s, channel_names, sample_rate_hz)?);
        labels.extend(std::iter::repeat_n(k, s.len()));
    }
    evaluate_features(&features, &labels, sets.len(), &feature_names(channel_names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::average_tfr;

    fn target_map(ds: &SynthDataset, label: ClassLabel, channel: &str) -> crate::dsp::TfrMap {
        let mt = Multitaper::new(160.0, SpectrogramParams::default()).unwrap();
        let c = ds.trials.channel_names().iter().position(|n| n == channel).unwrap();
        let maps: Vec<_> = ds
            .trials
            .epochs()
            .iter()
            .filter(|e| e.label() == Some(label))
            .map(|e| epoch_tfr(&mt, e, ds.trials.channel_names()).unwrap().swap_remove(c))
            .collect();
        average_tfr(&maps).unwrap()
    }

    /// Quiet background and a single fixed 10 Hz rhythm.
    fn ten_hz_spec(ratio: f64) -> SynthSpec {
        SynthSpec {
            subjects: 2,
            trials_per_class: 10,
            resting_per_subject: 2,
            alpha_hz: [10.0, 10.0],
            beta_amplitude: 0.0,
            amplitude_jitter: 0.0,
            noise: NoiseSpec {
                ar_coefficient: 0.9,
                coloured_sd: 0.05,
                white_sd: 0.05,
            },
            rules: vec![rule(ClassLabel::Feet, Rhythm::Alpha, &["Cz"], ratio)],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn default_counts() {
        let ds = make_synthetic_dataset(&SynthSpec::default()).unwrap();
        assert_eq!(ds.trials.len(), 5 * 3 * 20);
        assert_eq!(ds.resting.len(), 5 * 20);
        assert!(ds.trials.epochs().iter().all(|e| e.is_standard_shape()));
        assert_eq!(ds.trial_truth.len(), 300);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_synthetic_dataset(&SynthSpec::default()).unwrap();
        let b = make_synthetic_dataset(&SynthSpec::default()).unwrap();
        assert_eq!(a.trials.epochs(), b.trials.epochs());
        assert_eq!(truth_csv(&a.trial_truth), truth_csv(&b.trial_truth));
        let c = make_synthetic_dataset(&SynthSpec { seed: 1, ..SynthSpec::default() }).unwrap();
        assert_ne!(a.trials.epochs()[0], c.trials.epochs()[0]);
    }

    #[test]
    fn truth_matches_rules() {
        let spec = SynthSpec::default();
        let ds = make_synthetic_dataset(&spec).unwrap();
        for t in &ds.trial_truth {
            let label = t.label.unwrap();
            let expected: Vec<(String, Rhythm, f64)> = spec
                .rules
                .iter()
                .filter(|r| r.label == label)
                .flat_map(|r| r.channels.iter().map(move |c| (c.clone(), r.rhythm, r.ratio)))
                .collect();
            let mut got = t.modulated.clone();
            let mut exp = expected;
            got.sort_by(|a, b| a.0.cmp(&b.0));
            exp.sort_by(|a, b| a.0.cmp(&b.0));
            assert_eq!(got, exp);
        }
        assert!(ds.resting_truth.iter().all(|t| t.modulated.is_empty() && t.label.is_none()));
        let csv = truth_csv(&ds.trial_truth);
        assert_eq!(csv.lines().count(), 301);
        assert!(csv.lines().nth(1).unwrap().contains("C3:beta:0.3;C1:beta:0.3"));
    }

    #[test]
    fn half_amplitude_gives_minus_75() {
        let ds = make_synthetic_dataset(&ten_hz_spec(0.5)).unwrap();
        let m = target_map(&ds, ClassLabel::Feet, "Cz");
        let v = bandpower_change(&m, [10.0, 10.0], POST_CUE_INTERVAL_S).unwrap();
        // power scales with amplitude squared: 0.5^2 - 1 = -75 %
        assert!((v + 75.0).abs() <= 10.0, "{v}");
        let untouched = target_map(&ds, ClassLabel::Right, "Cz");
        let u = bandpower_change(&untouched, [10.0, 10.0], POST_CUE_INTERVAL_S).unwrap();
        assert!(u.abs() <= 10.0, "{u}");
    }

    #[test]
    fn unit_ratio_gives_no_change() {
        let spec = SynthSpec {
            beta_amplitude: 1.5,
            beta_hz: [23.0, 23.0],
            ..ten_hz_spec(1.0)
        };
        let ds = make_synthetic_dataset(&spec).unwrap();
        let m = target_map(&ds, ClassLabel::Feet, "Cz");
        for band in [ALPHA_HZ, BETA_HZ] {
            let v = bandpower_change(&m, band, POST_CUE_INTERVAL_S).unwrap();
            assert!(v.abs() <= 10.0, "{band:?}: {v}");
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec::default();
        s.rules[0].ratio = 1.5;
        assert!(make_synthetic_dataset(&s).is_err());
        let s = SynthSpec { beta_hz: [25.0, 35.0], ..SynthSpec::default() };
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.rules[0].channels.push("XX".into());
        assert!(matches!(s.validate(), Err(Error::MissingChannel(_))));
    }

    fn by_label(ds: &SynthDataset) -> Vec<Vec<Epoch>> {
        ClassLabel::ALL
            .iter()
            .map(|&l| ds.trials.epochs().iter().filter(|e| e.label() == Some(l)).cloned().collect())
            .collect()
    }

    #[test]
    fn feature_dimension() {
        let ds = make_synthetic_dataset(&ten_hz_spec(0.5)).unwrap();
        let f = erd_features(&ds.trials.epochs()[..2], ds.trials.channel_names(), 160.0).unwrap();
        assert_eq!(f[0].len(), 30);
        assert_eq!(feature_names(ds.trials.channel_names())[15], "FC3.beta");
    }

    #[test]
    fn identical_sets_are_chance() {
        let ds = make_synthetic_dataset(&SynthSpec { subjects: 1, ..SynthSpec::default() }).unwrap();
        let set: Vec<Epoch> = ds.trials.epochs()[..20].to_vec();
        let r = evaluate_separability(&[&set, &set, &set], ds.trials.channel_names(), 160.0).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() <= 0.1, "{r:?}");
    }

    #[test]
    fn strong_disjoint_erds_separate() {
        let spec = SynthSpec {
            subjects: 2,
            noise: NoiseSpec {
                ar_coefficient: 0.9,
                coloured_sd: 0.3,
                white_sd: 0.1,
            },
            rules: vec![
                rule(ClassLabel::Right, Rhythm::Alpha, &["C3"], 0.1),
                rule(ClassLabel::Left, Rhythm::Alpha, &["C4"], 0.1),
                rule(ClassLabel::Feet, Rhythm::Alpha, &["Cz"], 0.1),
            ],
            ..SynthSpec::default()
        };
        let ds = make_synthetic_dataset(&spec).unwrap();
        let sets = by_label(&ds);
        let refs: Vec<&[Epoch]> = sets.iter().map(|s| s.as_slice()).collect();
        let r = evaluate_separability(&refs, ds.trials.channel_names(), 160.0).unwrap();
        assert!(r.accuracy > 0.95, "{r:?}");
    }

    #[test]
    fn shuffled_labels_are_chance() {
        use rand::seq::SliceRandom;
        let ds = make_synthetic_dataset(&SynthSpec::default()).unwrap();
        let sets = by_label(&ds);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (k, s) in sets.iter().enumerate() {
            features.extend(erd_features(s, ds.trials.channel_names(), 160.0).unwrap());
            labels.extend(std::iter::repeat_n(k, s.len()));
        }
        let names = feature_names(ds.trials.channel_names());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut mean = 0.0;
        for _ in 0..20 {
            labels.shuffle(&mut rng);
            mean += evaluate_features(&features, &labels, 3, &names).unwrap().accuracy / 20.0;
        }
        assert!((mean - 1.0 / 3.0).abs() <= 0.1, "{mean}");
    }

    #[test]
    fn too_few_epochs_rejected() {
        let ds = make_synthetic_dataset(&ten_hz_spec(0.5)).unwrap();
        let few = &ds.trials.epochs()[..5];
        assert!(evaluate_separability(&[few, few, few], ds.trials.channel_names(), 160.0).is_err());
    }
}
