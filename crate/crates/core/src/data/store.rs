//! On-disk epoch collections: `manifest.json` plus a little-endian
//! `epochs.f32` payload (trial-major, channel-major within a trial).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, Epoch, EpochKind};
use crate::error::{Error, Result};

pub const STORE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "epochs.f32";

/// Immutable collection of equally shaped epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStore {
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    n_samples: usize,
    epochs: Vec<Epoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
    pub count: usize,
    pub label_names: Vec<String>,
    pub class_counts: BTreeMap<String, usize>,
    pub subjects: Vec<String>,
    pub labels: Vec<Option<ClassLabel>>,
    pub subject_ids: Vec<String>,
    pub kinds: Vec<EpochKind>,
}

impl EpochStore {
    pub fn new(
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        n_samples: usize,
        epochs: Vec<Epoch>,
    ) -> Result<Self> {
        for (i, e) in epochs.iter().enumerate() {
            if e.n_channels() != channel_names.len() || e.n_samples() != n_samples {
                return Err(Error::shape(format!(
                    "epoch {i} is {}x{}, store expects {}x{n_samples}",
                    e.n_channels(),
                    e.n_samples(),
                    channel_names.len()
                )));
            }
        }
        Ok(EpochStore {
            sample_rate_hz,
            channel_names,
            n_samples,
            epochs,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Same layout, different epochs.
    pub fn with_epochs(&self, epochs: Vec<Epoch>) -> Result<Self> {
        EpochStore::new(
            self.sample_rate_hz,
            self.channel_names.clone(),
            self.n_samples,
            epochs,
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        self.with_epochs(indices.iter().map(|&i| self.epochs[i].clone()).collect())
    }

    /// Subjects in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.epochs {
            if !out.contains(&e.subject_id) {
                out.push(e.subject_id.clone());
            }
        }
        out
    }

    pub fn manifest(&self) -> StoreManifest {
        let mut class_counts = BTreeMap::new();
        for e in &self.epochs {
            if let Some(l) = e.label() {
                *class_counts.entry(l.name().to_string()).or_insert(0) += 1;
            }
        }
        StoreManifest {
            version: STORE_VERSION,
            sample_rate_hz: self.sample_rate_hz,
            channel_names: self.channel_names.clone(),
            n_samples: self.n_samples,
            count: self.epochs.len(),
            label_names: ClassLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
            class_counts,
            subjects: self.subjects(),
            labels: self.epochs.iter().map(Epoch::label).collect(),
            subject_ids: self.epochs.iter().map(|e| e.subject_id.clone()).collect(),
            kinds: self.epochs.iter().map(Epoch::kind).collect(),
        }
    }

    /// Expected payload size for a manifest, in bytes.
    pub fn payload_bytes(count: usize, n_channels: usize, n_samples: usize) -> usize {
        count * n_channels * n_samples * 4
    }
}

pub fn save_store(store: &EpochStore, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&store.manifest())?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;

    let mut payload = Vec::with_capacity(EpochStore::payload_bytes(
        store.len(),
        store.n_channels(),
        store.n_samples(),
    ));
    for e in store.epochs() {
        for v in e.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let ppath = dir.join(PAYLOAD_FILE);
    fs::write(&ppath, payload).map_err(|e| Error::io(&ppath, e))
}

pub fn load_store(dir: impl AsRef<Path>) -> Result<EpochStore> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: StoreManifest = serde_json::from_str(&text)?;
    if m.version != STORE_VERSION {
        return Err(Error::Integrity(format!(
            "store version {} is not supported (expected {STORE_VERSION})",
            m.version
        )));
    }
    if m.labels.len() != m.count || m.subject_ids.len() != m.count || m.kinds.len() != m.count {
        return Err(Error::Integrity(format!(
            "manifest count {} disagrees with per-epoch metadata",
            m.count
        )));
    }
    let ppath = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let n_channels = m.channel_names.len();
    let expected = EpochStore::payload_bytes(m.count, n_channels, m.n_samples);
    if payload.len() != expected {
        return Err(Error::Integrity(format!(
            "payload has {} bytes, manifest implies {expected}",
            payload.len()
        )));
    }
    let per_epoch = n_channels * m.n_samples;
    let mut epochs = Vec::with_capacity(m.count);
    for (i, chunk) in payload.chunks_exact(per_epoch * 4).enumerate() {
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        epochs.push(Epoch::new(
            data,
            n_channels,
            m.n_samples,
            m.labels[i],
            m.subject_ids[i].clone(),
            m.kinds[i],
        )?);
    }
    EpochStore::new(m.sample_rate_hz, m.channel_names, m.n_samples, epochs)
}

/// Stratified train/validation split.
///
/// Each class contributes `round(n_class * val_fraction)` validation
/// epochs, taken round-robin across that class's subjects so every subject
/// is represented. Deterministic given `seed`.
pub fn split_train_val(store: &EpochStore, val_fraction: f64, seed: u64) -> Result<(EpochStore, EpochStore)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must be in (0,1), got {val_fraction}"
        )));
    }
    let mut by_class: BTreeMap<ClassLabel, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, e) in store.epochs().iter().enumerate() {
        let label = e
            .label()
            .ok_or_else(|| Error::invalid(format!("epoch {i} has no label")))?;
        by_class
            .entry(label)
            .or_default()
            .entry(e.subject_id.as_str())
            .or_default()
            .push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = Vec::new();
    for (label, subjects) in by_class {
        let n: usize = subjects.values().map(Vec::len).sum();
        if n < 2 {
            return Err(Error::invalid(format!(
                "class {label} has {n} epoch(s); need at least 2 to split"
            )));
        }
        let k = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        let mut groups: Vec<Vec<usize>> = subjects.into_values().collect();
        groups.shuffle(&mut rng);
        for g in &mut groups {
            g.shuffle(&mut rng);
        }
        let depth = groups.iter().map(Vec::len).max().unwrap_or(0);
        let interleaved = (0..depth).flat_map(|d| groups.iter().filter_map(move |g| g.get(d).copied()));
        val.extend(interleaved.take(k));
    }
    val.sort_unstable();
    let mut is_val = vec![false; store.len()];
    for &i in &val {
        is_val[i] = true;
    }
    let train: Vec<usize> = (0..store.len()).filter(|&i| !is_val[i]).collect();
    Ok((store.subset(&train)?, store.subset(&val)?))
}
