//! Library-level runs through the public API, from recording to
//! generated epochs and their ERD summaries.

use eegsynth::cvae::{self, load_checkpoint, save_checkpoint, CvaeConfig, TrainConfig};
use eegsynth::data::{
    extract_cue_epochs, extract_resting_epochs, load_store, save_store, split_train_val, ClassLabel, EpochKind,
    EpochStore, Recording, SENSORIMOTOR_CHANNELS,
};
use eegsynth::dsp::{
    average_tfr, bandpower_change, common_average_reference, design_butterworth_bandpass, epoch_tfr,
    filter_recording, Multitaper, SpectrogramParams, ALPHA_HZ, POST_CUE_INTERVAL_S,
};
use eegsynth::generate::{generate_all_conditions, generate_conditioned, GenerationRequest};
use eegsynth::synthbench::{make_synthetic_dataset, SynthSpec};

const FS: f64 = 160.0;

/// Sensorimotor channels plus one extra, each a sinusoid at its own
/// frequency with a channel-specific offset.
fn recording(seconds: f64) -> Recording {
    let mut names: Vec<String> = SENSORIMOTOR_CHANNELS.iter().map(|s| s.to_string()).collect();
    names.push("Oz".into());
    let n = (seconds * FS) as usize;
    let samples = (0..names.len())
        .map(|c| {
            (0..n)
                .map(|i| 5.0 * c as f64 + (2.0 * std::f64::consts::PI * (8.0 + c as f64) * i as f64 / FS).sin())
                .collect()
        })
        .collect();
    Recording::new(FS, names, samples, "S042").unwrap()
}

fn preprocess(rec: &Recording) -> Recording {
    let car = common_average_reference(rec).unwrap();
    let filter = design_butterworth_bandpass(3, 4.0, 30.0, FS).unwrap();
    filter_recording(&filter, &car).unwrap().select_channels(&SENSORIMOTOR_CHANNELS).unwrap()
}

#[test]
fn preprocessing_chain_to_store_round_trip() {
    let rec = preprocess(&recording(60.0));
    assert_eq!(rec.n_channels(), 15);
    let resting = extract_resting_epochs(&rec).unwrap();
    assert_eq!(resting.len(), 20);
    let cues = extract_cue_epochs(&rec, &[5.0, 20.0, 40.0], ClassLabel::Feet).unwrap();
    assert!(cues.iter().all(|e| e.label() == Some(ClassLabel::Feet) && e.n_samples() == 400));

    let names: Vec<String> = rec.channels().to_vec();
    let mut epochs = resting;
    epochs.extend(cues);
    let store = EpochStore::new(FS, names, 400, epochs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_store(&store, dir.path()).unwrap();
    let back = load_store(dir.path()).unwrap();
    assert_eq!(back.len(), 23);
    for (a, b) in store.epochs().iter().zip(back.epochs()) {
        assert_eq!(a.data(), b.data());
        assert_eq!(a.label(), b.label());
        assert_eq!(a.subject_id, b.subject_id);
    }
}

#[test]
fn train_generate_and_summarise_small_synthetic_set() {
    let spec = SynthSpec {
        subjects: 1,
        trials_per_class: 8,
        resting_per_subject: 3,
        seed: 11,
        ..SynthSpec::default()
    };
    let ds = make_synthetic_dataset(&spec).unwrap();
    let (tr, va) = split_train_val(&ds.trials, 0.25, 4).unwrap();
    assert_eq!(tr.len() + va.len(), 24);
    let cfg = TrainConfig {
        batch_size: 9,
        max_epochs: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let ckpt = cvae::train(&tr, &va, &CvaeConfig::default(), &cfg, None).unwrap();
    assert!(ckpt.history.epochs.len() <= 2);
    assert!(ckpt.model.input_scale > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();

    let sets = generate_all_conditions(&ckpt, &ds.resting, 8).unwrap();
    assert_eq!(sets.len(), 3);
    for (set, label) in sets.iter().zip(ClassLabel::ALL) {
        assert_eq!(set.store.len(), 3);
        assert!(set.store.epochs().iter().all(|e| e.kind() == EpochKind::Artificial && e.label() == Some(label)));
        assert!(set.store.epochs().iter().all(|e| e.data().iter().all(|v| v.is_finite())));
        assert_eq!(set.metadata.condition, label.condition().entries());
    }
    // a single request reproduces the matching set of the batch call
    let left = generate_conditioned(&GenerationRequest::new(&ckpt, &ds.resting, ClassLabel::Left, 8)).unwrap();
    for (a, b) in left.store.epochs().iter().zip(sets[1].store.epochs()) {
        assert_eq!(a.data(), b.data());
    }

    let mt = Multitaper::new(FS, SpectrogramParams::default()).unwrap();
    let names = left.store.channel_names();
    let maps: Vec<_> = left.store.epochs().iter().map(|e| epoch_tfr(&mt, e, names).unwrap()).collect();
    let c4: Vec<_> = maps.iter().map(|m| m[names.iter().position(|n| n == "C4").unwrap()].clone()).collect();
    let avg = average_tfr(&c4).unwrap();
    assert_eq!((avg.n_freqs(), avg.n_frames()), (27, 41));
    assert!(bandpower_change(&avg, ALPHA_HZ, POST_CUE_INTERVAL_S).unwrap().is_finite());
}
