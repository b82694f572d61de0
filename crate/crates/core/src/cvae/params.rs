//! Trainable-parameter accounting with an itemised breakdown and the
//! totals under alternative bias / batch-norm conventions.

use std::fmt;

use serde::Serialize;

use crate::cvae::{Cvae, CvaeConfig, OutputHead};
use crate::error::Result;

/// Total reported for the reference architecture.
pub const REFERENCE_PARAMETER_COUNT: usize = 34_214;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub layer: String,
    pub weights: usize,
    pub biases: usize,
    /// Batch-norm scale and shift.
    pub affine: usize,
    /// Batch-norm running mean and variance (not trainable).
    pub running_stats: usize,
}

impl LayerCount {
    pub fn trainable(&self) -> usize {
        self.weights + self.biases + self.affine
    }
}

/// Total under one convention and its difference from the reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantCount {
    pub convention: String,
    pub total: usize,
    pub delta: i64,
    pub relative_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterCount {
    pub layers: Vec<LayerCount>,
    pub trainable: usize,
    pub non_trainable: usize,
    pub reference: usize,
    pub delta: i64,
    pub relative_delta: f64,
    pub variants: Vec<VariantCount>,
}

fn itemise(config: &CvaeConfig) -> Result<Vec<LayerCount>> {
    let model = Cvae::<f32>::new(config.clone(), 0)?;
    let mut layers: Vec<LayerCount> = Vec::new();
    let mut entry = |name: &str| -> usize {
        let layer = name.rsplit_once('.').map_or(name, |(l, _)| l).to_string();
        match layers.iter().position(|l| l.layer == layer) {
            Some(i) => i,
            None => {
                layers.push(LayerCount {
                    layer,
                    weights: 0,
                    biases: 0,
                    affine: 0,
                    running_stats: 0,
                });
                layers.len() - 1
            }
        }
    };
    let mut rows = Vec::new();
    for p in model.params() {
        rows.push((entry(&p.name), p.name.clone(), p.len(), true));
    }
    for p in model.buffers() {
        rows.push((entry(&p.name), p.name.clone(), p.len(), false));
    }
    for (i, name, n, trainable) in rows {
        let l = &mut layers[i];
        match (trainable, name.rsplit('.').next()) {
            (false, _) => l.running_stats += n,
            (true, Some("weight")) => l.weights += n,
            (true, Some("bias")) => l.biases += n,
            _ => l.affine += n,
        }
    }
    Ok(layers)
}

fn variant(description: &str, config: CvaeConfig) -> Result<VariantCount> {
    let total: usize = itemise(&config)?.iter().map(LayerCount::trainable).sum();
    let delta = total as i64 - REFERENCE_PARAMETER_COUNT as i64;
    Ok(VariantCount {
        convention: description.to_string(),
        total,
        delta,
        relative_delta: delta as f64 / REFERENCE_PARAMETER_COUNT as f64,
    })
}

/// Counts the model described by `config` and the same architecture under
/// the alternative conventions.
pub fn count_parameters(config: &CvaeConfig) -> Result<ParameterCount> {
    let layers = itemise(config)?;
    let trainable = layers.iter().map(LayerCount::trainable).sum();
    let non_trainable = layers.iter().map(|l| l.running_stats).sum();
    let delta = trainable as i64 - REFERENCE_PARAMETER_COUNT as i64;
    let base = CvaeConfig {
        conv_bias: true,
        decoder_dense_bias: true,
        head: OutputHead::BnElu,
        ..config.clone()
    };
    let variants = vec![
        variant("all biases, batch norm after every (de)convolution", base.clone())?,
        variant(
            "no decoder dense bias",
            CvaeConfig {
                decoder_dense_bias: false,
                ..base.clone()
            },
        )?,
        variant(
            "no (de)convolution biases",
            CvaeConfig {
                conv_bias: false,
                ..base.clone()
            },
        )?,
        variant(
            "no batch norm on the output deconvolution",
            CvaeConfig {
                head: OutputHead::Linear,
                ..base.clone()
            },
        )?,
        variant(
            "no decoder dense bias, no batch norm on the output",
            CvaeConfig {
                decoder_dense_bias: false,
                head: OutputHead::Linear,
                ..base.clone()
            },
        )?,
        variant(
            "no decoder dense bias, no (de)convolution biases",
            CvaeConfig {
                decoder_dense_bias: false,
                conv_bias: false,
                ..base
            },
        )?,
    ];
    Ok(ParameterCount {
        layers,
        trainable,
        non_trainable,
        reference: REFERENCE_PARAMETER_COUNT,
        delta,
        relative_delta: delta as f64 / REFERENCE_PARAMETER_COUNT as f64,
        variants,
    })
}

impl fmt::Display for ParameterCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>8} {:>7} {:>7} {:>10} {:>9}",
            "layer", "weights", "biases", "bn", "trainable", "running"
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<22} {:>8} {:>7} {:>7} {:>10} {:>9}",
                l.layer,
                l.weights,
                l.biases,
                l.affine,
                l.trainable(),
                l.running_stats
            )?;
        }
        writeln!(f, "trainable total: {}", self.trainable)?;
        writeln!(f, "non-trainable (running statistics): {}", self.non_trainable)?;
        writeln!(
            f,
            "reference total: {}  delta: {:+} ({:+.2}%)",
            self.reference,
            self.delta,
            100.0 * self.relative_delta
        )?;
        writeln!(f, "by convention:")?;
        for v in &self.variants {
            writeln!(
                f,
                "  {:>6}  {:+6} ({:+.2}%)  {}",
                v.total,
                v.delta,
                100.0 * v.relative_delta,
                v.convention
            )?;
        }
        Ok(())
    }
}
