//! Mini-batch training with validation-based early stopping.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::checkpoint::{Block, CvaeCheckpoint, CHECKPOINT_VERSION};
use crate::cvae::{condition_tensor, sample_noise, Cvae, CvaeConfig, LossParts};
use crate::data::{ClassLabel, Epoch, EpochStore};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Mode, Param, Real};

/// Independent random streams derived from the one training seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_VALIDATION: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Noise draws averaged per validation evaluation.
    pub val_passes: usize,
    pub adam: AdamConfig,
    /// Fixed input scale; `None` uses the RMS amplitude of the training set.
    pub input_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            val_passes: 4,
            adam: AdamConfig::default(),
            input_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2 for batch statistics"));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.val_passes == 0 {
            return Err(Error::invalid("max_epochs, patience and val_passes must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.adam.eps > 0.0) {
            return Err(Error::invalid("Adam needs positive learning rate and epsilon"));
        }
        if let Some(s) = self.input_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("input scale {s} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
    /// Not part of the reproducible record.
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the freshly initialised model.
    pub initial_val: LossParts,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch improved on the initial model.
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl,wall_s";

    /// One CSV row; the initial evaluation is epoch 0 with empty training
    /// columns.
    pub fn csv_row(r: &EpochRecord) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:.3}",
            r.epoch, r.train.total, r.train.recon, r.train.kl, r.val.total, r.val.recon, r.val.kl, r.wall_s
        )
    }

    fn initial_row(v: &LossParts) -> String {
        format!("0,,,,{:e},{:e},{:e},0.000", v.total, v.recon, v.kl)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n{}\n", Self::CSV_HEADER, Self::initial_row(&self.initial_val));
        for r in &self.epochs {
            s.push_str(&Self::csv_row(r));
            s.push('\n');
        }
        s
    }
}

fn labels(store: &EpochStore, what: &str) -> Result<Vec<ClassLabel>> {
    store
        .epochs()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.label()
                .ok_or_else(|| Error::invalid(format!("{what} epoch {i} has no class label")))
        })
        .collect()
}

/// Root-mean-square amplitude over every value in the store.
pub fn rms_amplitude(store: &EpochStore) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for e in store.epochs() {
        s += e.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
        n += e.data().len();
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

fn snapshot<T: Real>(ps: Vec<&Param<T>>) -> Vec<Vec<T>> {
    ps.into_iter().map(|p| p.value.clone()).collect()
}

fn restore<T: Real>(ps: Vec<&mut Param<T>>, values: &[Vec<T>]) {
    for (p, v) in ps.into_iter().zip(values) {
        p.value.clone_from(v);
    }
}

fn param_norms<T: Real>(model: &Cvae<T>) -> String {
    model
        .params()
        .iter()
        .map(|p| {
            let n: f64 = p.value.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            format!("{}={n:.3e}", p.name)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Average loss over a store in inference mode, averaging `passes` noise
/// draws taken from `rng`.
pub(crate) fn evaluate(
    model: &mut Cvae<f32>,
    epochs: &[Epoch],
    labels: &[ClassLabel],
    batch: usize,
    passes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossParts> {
    let d = model.config().latent_dim;
    let mut acc = LossParts::default();
    let mut count = 0.0;
    for _ in 0..passes {
        for (chunk, labs) in epochs.chunks(batch).zip(labels.chunks(batch)) {
            let refs: Vec<&Epoch> = chunk.iter().collect();
            let x = model.input_tensor(&refs)?;
            let conds: Vec<_> = labs.iter().map(|l| l.condition()).collect();
            let c = condition_tensor(&conds, true)?;
            let eps = sample_noise(rng, chunk.len(), d);
            let p = model.forward_loss(&x, &c, &eps, Mode::Infer, false)?.loss;
            let n = chunk.len() as f64;
            acc.total += p.total * n;
            acc.recon += p.recon * n;
            acc.kl += p.kl * n;
            count += n;
        }
    }
    if count == 0.0 {
        return Err(Error::invalid("validation store is empty"));
    }
    let parts = LossParts {
        total: acc.total / count,
        recon: acc.recon / count,
        kl: acc.kl / count,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "validation loss is {}; parameter norms: {}",
            parts.total,
            param_norms(model)
        )));
    }
    Ok(parts)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains a fresh model and returns the best-validation checkpoint.
///
/// Each epoch shuffles the training set, takes one Adam step per
/// mini-batch (a trailing batch of one trial is skipped, since batch
/// statistics need two), then evaluates the validation loss. Training stops
/// after `patience` epochs without improvement or at `max_epochs`; the
/// returned parameters are those of the best validation epoch.
///
/// With `log`, one CSV row per epoch is written as training proceeds.
pub fn train(
    train_store: &EpochStore,
    val_store: &EpochStore,
    model_config: &CvaeConfig,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<CvaeCheckpoint> {
    cfg.validate()?;
    if train_store.len() < 2 || val_store.is_empty() {
        return Err(Error::invalid(format!(
            "need at least 2 training and 1 validation epochs, got {} and {}",
            train_store.len(),
            val_store.len()
        )));
    }
    let train_labels = labels(train_store, "training")?;
    let val_labels = labels(val_store, "validation")?;
    let scale = match cfg.input_scale {
        Some(s) => s,
        None => rms_amplitude(train_store),
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("training data has input scale {scale}")));
    }
    let model_config = CvaeConfig {
        input_scale: scale,
        ..model_config.clone()
    };
    let init_seed = {
        use rand::Rng;
        stream(cfg.seed, STREAM_INIT).random::<u64>()
    };
    let mut model = Cvae::<f32>::new(model_config.clone(), init_seed)?;
    let mut adam = Adam::new(cfg.adam);
    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE);
    let mut noise_rng = stream(cfg.seed, STREAM_NOISE);
    let mut val_rng = stream(cfg.seed, STREAM_VALIDATION);
    let d = model_config.latent_dim;

    let mut history = TrainHistory {
        initial_val: evaluate(
            &mut model,
            val_store.epochs(),
            &val_labels,
            cfg.batch_size,
            cfg.val_passes,
            &mut val_rng,
        )?,
        ..TrainHistory::default()
    };
    history.best_val = history.initial_val.total;
    if let Some(w) = log.as_mut() {
        writeln!(w, "{}", TrainHistory::CSV_HEADER).map_err(|e| Error::io("training log", e))?;
        writeln!(w, "{}", TrainHistory::initial_row(&history.initial_val)).map_err(|e| Error::io("training log", e))?;
    }
    let mut best_params = snapshot(model.params());
    let mut best_buffers = snapshot(model.buffers());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_store.len()).collect();
    let epochs = train_store.epochs();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossParts::default();
        let mut seen = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let refs: Vec<&Epoch> = idx.iter().map(|&i| &epochs[i]).collect();
            let x = model.input_tensor(&refs)?;
            let conds: Vec<_> = idx.iter().map(|&i| train_labels[i].condition()).collect();
            let c = condition_tensor(&conds, true)?;
            let eps = sample_noise(&mut noise_rng, idx.len(), d);
            model.zero_grad();
            let p = model.forward_loss(&x, &c, &eps, Mode::Train, true)?.loss;
            if !p.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {} at epoch {epoch}, batch {b}; parameter norms: {}",
                    p.total,
                    param_norms(&model)
                )));
            }
            adam.step(&mut model.params_mut())
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            let n = idx.len() as f64;
            acc.total += p.total * n;
            acc.recon += p.recon * n;
            acc.kl += p.kl * n;
            seen += n;
        }
        let train_loss = LossParts {
            total: acc.total / seen,
            recon: acc.recon / seen,
            kl: acc.kl / seen,
        };
        let val = evaluate(
            &mut model,
            val_store.epochs(),
            &val_labels,
            cfg.batch_size,
            cfg.val_passes,
            &mut val_rng,
        )?;
        let record = EpochRecord {
            epoch,
            train: train_loss,
            val,
            wall_s: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", TrainHistory::csv_row(&record)).map_err(|e| Error::io("training log", e))?;
        }
        history.epochs.push(record);
        if val.total < history.best_val {
            history.best_val = val.total;
            history.best_epoch = epoch;
            best_params = snapshot(model.params());
            best_buffers = snapshot(model.buffers());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    restore(model.params_mut(), &best_params);
    restore(model.buffers_mut(), &best_buffers);
    let blocks = |ps: Vec<&Param<f32>>| ps.into_iter().map(Block::from_param).collect::<Vec<_>>();
    Ok(CvaeCheckpoint {
        version: CHECKPOINT_VERSION,
        model: model_config,
        train: cfg.clone(),
        history,
        params: blocks(model.params()),
        buffers: blocks(model.buffers()),
        adam_t: adam.t,
        adam_m: adam.m,
        adam_v: adam.v,
    })
}
