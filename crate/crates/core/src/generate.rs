//! Condition-specific synthesis: resting epochs are encoded, a latent
//! sample is drawn from the posterior, and the decoder renders it under the
//! requested condition vector.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::{condition_tensor, reparameterize, sample_noise, CvaeCheckpoint};
use crate::data::{ClassLabel, ConditionVector, Epoch, EpochKind, EpochStore};
use crate::error::{Error, Result};
use crate::nn::{Mode, Tensor};

/// Source epochs pushed through the model at once.
const CHUNK: usize = 64;

/// How the decoder's latent input is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// `z = mu + sigma * eps` with fresh noise per sample.
    #[default]
    Sample,
    /// `z = mu`; a diagnostic that bypasses sampling.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(ClassLabel),
    /// Any vector; non-one-hot vectors require `exploratory`.
    Vector(ConditionVector),
}

impl Target {
    pub fn condition(self) -> ConditionVector {
        match self {
            Target::Class(l) => l.condition(),
            Target::Vector(c) => c,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GenerationRequest<'a> {
    pub checkpoint: &'a CvaeCheckpoint,
    pub resting: &'a EpochStore,
    pub target: Target,
    pub samples_per_epoch: usize,
    pub seed: u64,
    pub latent: LatentMode,
    /// Allows soft condition vectors.
    pub exploratory: bool,
}

impl<'a> GenerationRequest<'a> {
    /// One sampled epoch per resting epoch for `label`.
    pub fn new(checkpoint: &'a CvaeCheckpoint, resting: &'a EpochStore, label: ClassLabel, seed: u64) -> Self {
        GenerationRequest {
            checkpoint,
            resting,
            target: Target::Class(label),
            samples_per_epoch: 1,
            seed,
            latent: LatentMode::Sample,
            exploratory: false,
        }
    }
}

/// Where one artificial epoch came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub index: usize,
    pub source_subject: String,
    pub source_index: usize,
    pub sample: usize,
    pub condition: [f64; 3],
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetadata {
    pub condition: [f64; 3],
    pub samples_per_epoch: usize,
    pub latent: LatentMode,
    pub seed: u64,
    pub n_sources: usize,
}

#[derive(Clone, Debug)]
pub struct ArtificialEpochSet {
    pub store: EpochStore,
    pub provenance: Vec<Provenance>,
    pub metadata: GenerationMetadata,
}

pub const PROVENANCE_CSV_HEADER: &str = "index,source_subject,source_index,sample,c_right,c_left,c_feet,seed";

impl ArtificialEpochSet {
    pub fn provenance_csv(&self) -> String {
        let mut s = format!("{PROVENANCE_CSV_HEADER}\n");
        for p in &self.provenance {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                p.index, p.source_subject, p.source_index, p.sample, p.condition[0], p.condition[1], p.condition[2], p.seed
            );
        }
        s
    }
}

/// Label stored on generated epochs: the class of a one-hot vector, or the
/// dominant entry (first on ties) of a soft one.
fn dominant_label(c: &ConditionVector) -> ClassLabel {
    c.label().unwrap_or_else(|| {
        let e = c.entries();
        let mut best = 0;
        for k in 1..e.len() {
            if e[k] > e[best] {
                best = k;
            }
        }
        ClassLabel::from_index(best).expect("three entries")
    })
}

/// Encodes every resting epoch (batch norm in inference mode), draws
/// `samples_per_epoch` latents from its posterior and decodes them under
/// the target condition. The noise stream depends only on the seed and the
/// source order, so equal seeds give equal noise across targets.
pub fn generate_conditioned(req: &GenerationRequest<'_>) -> Result<ArtificialEpochSet> {
    if req.samples_per_epoch == 0 {
        return Err(Error::invalid("samples per epoch must be at least 1"));
    }
    let cond = req.target.condition();
    if !req.exploratory && !cond.is_one_hot() {
        return Err(Error::invalid(format!(
            "condition {:?} is not one-hot; soft conditions need the exploratory path",
            cond.entries()
        )));
    }
    let mut model = req.checkpoint.to_model()?;
    let cfg = model.config().clone();
    let (c, t, d) = (cfg.n_channels, cfg.n_samples, cfg.latent_dim);
    if req.resting.n_channels() != c || req.resting.n_samples() != t {
        return Err(Error::shape(format!(
            "resting store is {}x{}, model expects {c}x{t}",
            req.resting.n_channels(),
            req.resting.n_samples()
        )));
    }
    let label = dominant_label(&cond);
    let k = req.samples_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut epochs = Vec::with_capacity(req.resting.len() * k);
    let mut provenance = Vec::with_capacity(req.resting.len() * k);
    for (chunk_no, chunk) in req.resting.epochs().chunks(CHUNK).enumerate() {
        let refs: Vec<&Epoch> = chunk.iter().collect();
        let x = model.input_tensor(&refs)?;
        let latent = model.encode(&x, Mode::Infer)?;
        let n = chunk.len();
        // noise drawn source-major: all samples of source i, then i + 1
        let all_eps: Tensor<f32> = sample_noise(&mut rng, n * k, d);
        let conds = condition_tensor::<f32>(&vec![cond; n], !req.exploratory)?;
        let mut outputs = Vec::with_capacity(k);
        for s in 0..k {
            let z = match req.latent {
                LatentMode::Mean => latent.mu.clone(),
                LatentMode::Sample => {
                    let mut eps = Tensor::zeros([n, d, 1, 1]);
                    for i in 0..n {
                        eps.item_mut(i).copy_from_slice(all_eps.item(i * k + s));
                    }
                    reparameterize(&latent, &eps)?
                }
            };
            let y = model.decode(&z, &conds, Mode::Infer)?;
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("decoder output for source chunk {chunk_no}")));
            }
            outputs.push(y);
        }
        for (i, src) in chunk.iter().enumerate() {
            let source_index = chunk_no * CHUNK + i;
            for (s, y) in outputs.iter().enumerate() {
                provenance.push(Provenance {
                    index: epochs.len(),
                    source_subject: src.subject_id.clone(),
                    source_index,
                    sample: s,
                    condition: cond.entries(),
                    seed: req.seed,
                });
                epochs.push(Epoch::new(
                    model.output_item(y, i),
                    c,
                    t,
                    Some(label),
                    src.subject_id.clone(),
                    EpochKind::Artificial,
                )?);
            }
        }
    }
    Ok(ArtificialEpochSet {
        store: req.resting.with_epochs(epochs)?,
        provenance,
        metadata: GenerationMetadata {
            condition: cond.entries(),
            samples_per_epoch: k,
            latent: req.latent,
            seed: req.seed,
            n_sources: req.resting.len(),
        },
    })
}

/// One set per class (RIGHT, LEFT, FEET) from the same resting epochs and
/// the same noise, so the sets differ only through the condition vector.
pub fn generate_all_conditions(
    checkpoint: &CvaeCheckpoint,
    resting: &EpochStore,
    seed: u64,
) -> Result<Vec<ArtificialEpochSet>> {
    ClassLabel::ALL
        .iter()
        .map(|&l| generate_conditioned(&GenerationRequest::new(checkpoint, resting, l, seed)))
        .collect()
}
