//! The conditional VAE: a convolutional encoder producing a diagonal
//! Gaussian posterior over `z`, and a decoder mapping `z` concatenated with
//! a one-hot condition vector back to an epoch.
//!
//! The model operates on epochs divided by [`CvaeConfig::input_scale`];
//! callers pass raw amplitudes and receive raw amplitudes.

mod checkpoint;
pub mod diagnostics;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Block, CvaeCheckpoint, CHECKPOINT_VERSION};
pub use params::{count_parameters, LayerCount, ParameterCount, VariantCount, REFERENCE_PARAMETER_COUNT};
pub use train::{rms_amplitude, train, EpochRecord, TrainConfig, TrainHistory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ConditionVector, Epoch, EPOCH_CHANNELS, EPOCH_SAMPLES};
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Elu, MeanPoolWidth, Mode, Module, Padding, Param, Real, Reshape,
    Sequential, Tensor, UpsampleWidth,
};

/// Final decoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Deconvolution followed by batch norm and ELU, as in the reference
    /// architecture.
    BnElu,
    /// Deconvolution only, so outputs are unbounded below.
    Linear,
}

/// How the squared reconstruction error is reduced over one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconReduction {
    /// Sum over all channel-sample elements.
    Sum,
    /// Mean over all channel-sample elements.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub kernels: usize,
    pub temporal_kernel: usize,
    pub pool: usize,
    pub conv_bias: bool,
    pub decoder_dense_bias: bool,
    pub head: OutputHead,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Raw amplitudes are divided by this before entering the encoder and
    /// decoder outputs are multiplied by it.
    pub input_scale: f64,
    pub recon_reduction: ReconReduction,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig {
            n_channels: EPOCH_CHANNELS,
            n_samples: EPOCH_SAMPLES,
            n_classes: ConditionVector::LEN,
            latent_dim: 10,
            kernels: 5,
            temporal_kernel: 40,
            pool: 2,
            conv_bias: true,
            decoder_dense_bias: true,
            head: OutputHead::BnElu,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
            input_scale: 1.0,
            recon_reduction: ReconReduction::Sum,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
            ("n_classes", self.n_classes),
            ("latent_dim", self.latent_dim),
            ("kernels", self.kernels),
            ("temporal_kernel", self.temporal_kernel),
            ("pool", self.pool),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.n_samples % self.pool != 0 {
            return Err(Error::invalid(format!(
                "{} samples not divisible by pool factor {}",
                self.n_samples, self.pool
            )));
        }
        if self.temporal_kernel > self.n_samples {
            return Err(Error::invalid("temporal kernel longer than the epoch"));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::invalid(format!("input scale {} must be positive", self.input_scale)));
        }
        if !(self.bn_eps > 0.0 && (0.0..1.0).contains(&self.bn_momentum)) {
            return Err(Error::invalid("batch norm needs eps > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }

    /// Width of the flattened encoder features.
    pub fn feature_width(&self) -> usize {
        self.kernels * self.n_samples / self.pool
    }

    pub fn elements_per_trial(&self) -> usize {
        self.n_channels * self.n_samples
    }
}

fn bn<T: Real>(name: &str, channels: usize, cfg: &CvaeConfig) -> Box<dyn Module<T>> {
    let mut b = BatchNorm2d::new(name, channels, cfg.bn_momentum, cfg.bn_eps);
    b.init_running_stats();
    Box::new(b)
}

/// Convolutional stack plus the parallel mean and log-variance heads.
///
/// As a [`Module`] it maps `(N, 1, C, T)` to `(N, 2d, 1, 1)` with the mean
/// in the first `d` maps and the log-variance in the rest.
pub struct Encoder<T> {
    pub body: Sequential<T>,
    pub mu: Dense<T>,
    pub log_var: Dense<T>,
    latent_dim: usize,
}

impl<T: Real> Encoder<T> {
    fn new<R: Rng>(cfg: &CvaeConfig, rng: &mut R) -> Self {
        let k = cfg.kernels;
        let layers: Vec<Box<dyn Module<T>>> = vec![
            Box::new(Conv2d::new(
                "enc.conv_temporal",
                1,
                k,
                (1, cfg.temporal_kernel),
                Padding::same(1, cfg.temporal_kernel),
                cfg.conv_bias,
                rng,
            )),
            bn("enc.bn_temporal", k, cfg),
            Box::new(Elu::new("enc.elu_temporal")),
            Box::new(Conv2d::new(
                "enc.conv_spatial",
                k,
                k,
                (cfg.n_channels, 1),
                Padding::valid(),
                cfg.conv_bias,
                rng,
            )),
            bn("enc.bn_spatial", k, cfg),
            Box::new(Elu::new("enc.elu_spatial")),
            Box::new(MeanPoolWidth::new("enc.pool", cfg.pool)),
        ];
        let width = cfg.feature_width();
        Encoder {
            body: Sequential::new("encoder", layers),
            mu: Dense::new("enc.mu", width, cfg.latent_dim, true, rng),
            log_var: Dense::new("enc.log_var", width, cfg.latent_dim, true, rng),
            latent_dim: cfg.latent_dim,
        }
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.body.forward(x, mode)?;
        let mu = self.mu.forward(&h, mode)?;
        let lv = self.log_var.forward(&h, mode)?;
        let d = self.latent_dim;
        let mut out = Tensor::zeros([x.batch(), 2 * d, 1, 1]);
        for n in 0..x.batch() {
            let o = out.item_mut(n);
            o[..d].copy_from_slice(mu.item(n));
            o[d..].copy_from_slice(lv.item(n));
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.latent_dim;
        let n = grad.batch();
        grad.expect_shape([n, 2 * d, 1, 1], "encoder output gradient")?;
        let mut g_mu = Tensor::zeros([n, d, 1, 1]);
        let mut g_lv = Tensor::zeros([n, d, 1, 1]);
        for i in 0..n {
            g_mu.item_mut(i).copy_from_slice(&grad.item(i)[..d]);
            g_lv.item_mut(i).copy_from_slice(&grad.item(i)[d..]);
        }
        let mut gh = self.mu.backward(&g_mu)?;
        let gh2 = self.log_var.backward(&g_lv)?;
        gh.data_mut().iter_mut().zip(gh2.data()).for_each(|(a, &b)| *a += b);
        self.body.backward(&gh)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.body.params();
        p.extend(self.mu.params());
        p.extend(self.log_var.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.body.params_mut();
        p.extend(self.mu.params_mut());
        p.extend(self.log_var.params_mut());
        p
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        self.body.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.body.buffers_mut()
    }

    fn name(&self) -> &str {
        "encoder"
    }
}

/// Maps `(N, d + L, 1, 1)` (latent sample then condition) to
/// `(N, 1, C, T)`.
pub struct Decoder<T> {
    pub body: Sequential<T>,
}

impl<T: Real> Decoder<T> {
    fn new<R: Rng>(cfg: &CvaeConfig, rng: &mut R) -> Self {
        let k = cfg.kernels;
        let half = cfg.n_samples / cfg.pool;
        let mut layers: Vec<Box<dyn Module<T>>> = vec![
            Box::new(Dense::new(
                "dec.dense",
                cfg.latent_dim + cfg.n_classes,
                cfg.feature_width(),
                cfg.decoder_dense_bias,
                rng,
            )),
            Box::new(Reshape::new("dec.reshape", [k, 1, half])),
            Box::new(UpsampleWidth::new("dec.upsample", cfg.pool)),
            Box::new(ConvTranspose2d::new(
                "dec.deconv_spatial",
                k,
                k,
                (cfg.n_channels, 1),
                Padding::valid(),
                cfg.conv_bias,
                rng,
            )),
            bn("dec.bn_spatial", k, cfg),
            Box::new(Elu::new("dec.elu_spatial")),
            Box::new(ConvTranspose2d::new(
                "dec.deconv_temporal",
                k,
                1,
                (1, cfg.temporal_kernel),
                Padding::same(1, cfg.temporal_kernel),
                cfg.conv_bias,
                rng,
            )),
        ];
        if cfg.head == OutputHead::BnElu {
            layers.push(bn("dec.bn_temporal", 1, cfg));
            layers.push(Box::new(Elu::new("dec.elu_temporal")));
        }
        Decoder {
            body: Sequential::new("decoder", layers),
        }
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.body.forward(x, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.body.backward(grad)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.body.params_mut()
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        self.body.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.body.buffers_mut()
    }

    fn name(&self) -> &str {
        "decoder"
    }
}

/// Posterior parameters, each `(N, d, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent<T> {
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
}

/// Loss values averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Output of a full forward pass through the model.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub latent: Latent<T>,
    pub z: Tensor<T>,
    pub reconstruction: Tensor<T>,
    pub loss: LossParts,
}

/// Mean over the batch of `0.5 * sum_j (mu^2 + exp(lv) - lv - 1)`.
pub fn kl_term<T: Real>(mu: &Tensor<T>, log_var: &Tensor<T>) -> Result<f64> {
    mu.expect_shape(log_var.shape(), "log-variance")?;
    let n = mu.batch().max(1) as f64;
    let s: f64 = mu
        .data()
        .iter()
        .zip(log_var.data())
        .map(|(&m, &l)| {
            let (m, l) = (m.as_f64(), l.as_f64());
            // exp_m1 keeps the q = p case exactly zero
            0.5 * (m * m + (l.exp_m1() - l))
        })
        .sum();
    Ok(s / n)
}

/// Squared error reduced per trial by `reduction`, averaged over the batch.
pub fn recon_term<T: Real>(x: &Tensor<T>, x_hat: &Tensor<T>, reduction: ReconReduction) -> Result<f64> {
    x_hat.expect_shape(x.shape(), "reconstruction")?;
    let n = x.batch().max(1) as f64;
    let s: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(match reduction {
        ReconReduction::Sum => s / n,
        ReconReduction::Mean => s / n / x.item_len().max(1) as f64,
    })
}

/// `z = mu + exp(log_var / 2) * eps`.
pub fn reparameterize<T: Real>(latent: &Latent<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    latent.mu.expect_shape(latent.log_var.shape(), "log-variance")?;
    eps.expect_shape(latent.mu.shape(), "noise")?;
    let half = T::from_f64(0.5);
    let data = latent
        .mu
        .data()
        .iter()
        .zip(latent.log_var.data())
        .zip(eps.data())
        .map(|((&m, &l), &e)| m + (l * half).exp() * e)
        .collect();
    Tensor::from_vec(latent.mu.shape(), data)
}

/// Standard normal draws shaped `(n, d, 1, 1)`.
pub fn sample_noise<T: Real, R: Rng>(rng: &mut R, n: usize, d: usize) -> Tensor<T> {
    let data = (0..n * d)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec([n, d, 1, 1], data).expect("length matches shape")
}

/// Stacks condition vectors into `(N, L, 1, 1)`; `strict` rejects any
/// vector that is not one-hot.
pub fn condition_tensor<T: Real>(conds: &[ConditionVector], strict: bool) -> Result<Tensor<T>> {
    if strict {
        if let Some(i) = conds.iter().position(|c| !c.is_one_hot()) {
            return Err(Error::invalid(format!(
                "condition {i} ({:?}) is not one-hot; soft conditions need the exploratory path",
                conds[i].entries()
            )));
        }
    }
    let data = conds
        .iter()
        .flat_map(|c| c.entries().map(T::from_f64))
        .collect();
    Tensor::from_vec([conds.len(), ConditionVector::LEN, 1, 1], data)
}

/// The assembled model.
pub struct Cvae<T> {
    config: CvaeConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> Cvae<T> {
    /// Fresh model with Glorot-initialised weights drawn from `seed`.
    pub fn new(config: CvaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.n_classes != ConditionVector::LEN {
            return Err(Error::invalid(format!(
                "conditions have {} classes, config says {}",
                ConditionVector::LEN,
                config.n_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&config, &mut rng);
        let decoder = Decoder::new(&config, &mut rng);
        Ok(Cvae {
            config,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }


    /// Scaled model input `(N, 1, C, T)` from epochs.
    pub fn input_tensor(&self, epochs: &[&Epoch]) -> Result<Tensor<T>> {
        let (c, t) = (self.config.n_channels, self.config.n_samples);
        let inv = 1.0 / self.config.input_scale;
        let mut data = Vec::with_capacity(epochs.len() * c * t);
        for (i, e) in epochs.iter().enumerate() {
            if e.n_channels() != c || e.n_samples() != t {
                return Err(Error::shape(format!(
                    "epoch {i} is {}x{}, model expects {c}x{t}",
                    e.n_channels(),
                    e.n_samples()
                )));
            }
            data.extend(e.data().iter().map(|&v| T::from_f64(f64::from(v) * inv)));
        }
        Tensor::from_vec([epochs.len(), 1, c, t], data)
    }

    /// Raw-amplitude matrix of item `n` of a decoder output.
    pub fn output_item(&self, x_hat: &Tensor<T>, n: usize) -> Vec<f32> {
        let s = self.config.input_scale;
        x_hat.item(n).iter().map(|&v| (v.as_f64() * s) as f32).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_shape([x.batch(), 1, self.config.n_channels, self.config.n_samples], "encoder input")
    }

    pub fn encode(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Latent<T>> {
        self.check_input(x)?;
        let out = self.encoder.forward(x, mode)?;
        Ok(self.split_latent(&out))
    }

    fn split_latent(&self, out: &Tensor<T>) -> Latent<T> {
        let d = self.config.latent_dim;
        let n = out.batch();
        let mut mu = Tensor::zeros([n, d, 1, 1]);
        let mut log_var = Tensor::zeros([n, d, 1, 1]);
        for i in 0..n {
            mu.item_mut(i).copy_from_slice(&out.item(i)[..d]);
            log_var.item_mut(i).copy_from_slice(&out.item(i)[d..]);
        }
        Latent { mu, log_var }
    }

    fn decoder_input(&self, z: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
        let (d, l) = (self.config.latent_dim, self.config.n_classes);
        let n = z.batch();
        z.expect_shape([n, d, 1, 1], "latent sample")?;
        c.expect_shape([n, l, 1, 1], "condition")?;
        let mut zc = Tensor::zeros([n, d + l, 1, 1]);
        for i in 0..n {
            let o = zc.item_mut(i);
            o[..d].copy_from_slice(z.item(i));
            o[d..].copy_from_slice(c.item(i));
        }
        Ok(zc)
    }

    /// Decoder output for latent samples and a condition tensor from
    /// [`condition_tensor`].
    pub fn decode(&mut self, z: &Tensor<T>, c: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let zc = self.decoder_input(z, c)?;
        self.decoder.forward(&zc, mode)
    }

    /// Forward pass with fixed noise; with `backward`, also accumulates the
    /// gradient of the total loss into every trainable parameter.
    pub fn forward_loss(
        &mut self,
        x: &Tensor<T>,
        c: &Tensor<T>,
        eps: &Tensor<T>,
        mode: Mode,
        backward: bool,
    ) -> Result<ForwardPass<T>> {
        self.check_input(x)?;
        let out = self.encoder.forward(x, mode)?;
        let latent = self.split_latent(&out);
        let z = reparameterize(&latent, eps)?;
        let x_hat = self.decode(&z, c, mode)?;
        let recon = recon_term(x, &x_hat, self.config.recon_reduction)?;
        let kl = kl_term(&latent.mu, &latent.log_var)?;
        let loss = LossParts {
            total: recon + kl,
            recon,
            kl,
        };
        if backward {
            let n = x.batch() as f64;
            let per = match self.config.recon_reduction {
                ReconReduction::Sum => 1.0,
                ReconReduction::Mean => 1.0 / x.item_len() as f64,
            };
            let k = T::from_f64(2.0 * per / n);
            let mut g_hat = x_hat.clone();
            g_hat.data_mut().iter_mut().zip(x.data()).for_each(|(g, &xv)| *g = k * (*g - xv));
            let g_zc = self.decoder.backward(&g_hat)?;
            let d = self.config.latent_dim;
            let inv_n = T::from_f64(1.0 / n);
            let half = T::from_f64(0.5);
            let mut g_out = Tensor::zeros(out.shape());
            for i in 0..x.batch() {
                let gz = &g_zc.item(i)[..d];
                let (m, l, e) = (latent.mu.item(i), latent.log_var.item(i), eps.item(i));
                let o = g_out.item_mut(i);
                for j in 0..d {
                    let sigma = (l[j] * half).exp();
                    o[j] = gz[j] + m[j] * inv_n;
                    o[d + j] = gz[j] * e[j] * half * sigma + half * (l[j].exp() - T::one()) * inv_n;
                }
            }
            self.encoder.backward(&g_out)?;
        }
        Ok(ForwardPass {
            latent,
            z,
            reconstruction: x_hat,
            loss,
        })
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Trainable parameters, encoder first, in declaration order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    /// Batch-norm running statistics in declaration order.
    pub fn buffers(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.buffers();
        p.extend(self.decoder.buffers());
        p
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.buffers_mut();
        p.extend(self.decoder.buffers_mut());
        p
    }

    /// Every layer's output shape, excluding the batch axis, for a probe
    /// batch of two zero epochs in inference mode.
    pub fn trace_shapes(&mut self) -> Result<Vec<(String, [usize; 3])>> {
        let (c, t, d) = (self.config.n_channels, self.config.n_samples, self.config.latent_dim);
        let x = Tensor::zeros([2, 1, c, t]);
        let strip = |s: [usize; 4]| [s[1], s[2], s[3]];
        let mut out = vec![("input".to_string(), [1, c, t])];
        let (h, trace) = self.encoder.body.forward_traced(&x, Mode::Infer)?;
        out.extend(trace.into_iter().map(|(n, s)| (n, strip(s))));
        let flat = h.clone().reshape([2, self.config.feature_width(), 1, 1])?;
        out.push(("enc.flatten".into(), strip(flat.shape())));
        let mu = self.encoder.mu.forward(&h, Mode::Infer)?;
        let lv = self.encoder.log_var.forward(&h, Mode::Infer)?;
        out.push(("enc.mu".into(), strip(mu.shape())));
        out.push(("enc.log_var".into(), strip(lv.shape())));
        let c_t = Tensor::zeros([2, self.config.n_classes, 1, 1]);
        let zc = self.decoder_input(&Tensor::zeros([2, d, 1, 1]), &c_t)?;
        out.push(("dec.concat".into(), strip(zc.shape())));
        let (_, trace) = self.decoder.body.forward_traced(&zc, Mode::Infer)?;
        out.extend(trace.into_iter().map(|(n, s)| (n, strip(s))));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassLabel;

    fn small_config() -> CvaeConfig {
        CvaeConfig {
            n_channels: 3,
            n_samples: 16,
            latent_dim: 2,
            kernels: 2,
            temporal_kernel: 4,
            ..CvaeConfig::default()
        }
    }

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_noise::<f64, _>(&mut rng, shape.iter().product(), 1).reshape(shape).unwrap()
    }

    #[test]
    fn table_shapes() {
        let mut m = Cvae::<f32>::new(CvaeConfig::default(), 1).unwrap();
        let trace = m.trace_shapes().unwrap();
        let get = |name: &str| trace.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(get("enc.bn_temporal"), [5, 15, 400]);
        assert_eq!(get("enc.elu_spatial"), [5, 1, 400]);
        assert_eq!(get("enc.pool"), [5, 1, 200]);
        assert_eq!(get("enc.flatten"), [1000, 1, 1]);
        assert_eq!(get("enc.mu"), [10, 1, 1]);
        assert_eq!(get("enc.log_var"), [10, 1, 1]);
        assert_eq!(get("dec.concat"), [13, 1, 1]);
        assert_eq!(get("dec.dense"), [1000, 1, 1]);
        assert_eq!(get("dec.upsample"), [5, 1, 400]);
        assert_eq!(get("dec.elu_spatial"), [5, 15, 400]);
        assert_eq!(trace.last().unwrap().1, [1, 15, 400]);
    }

    #[test]
    fn kl_values() {
        let z = Tensor::<f64>::zeros([3, 10, 1, 1]);
        assert_eq!(kl_term(&z, &z).unwrap(), 0.0);
        let ones = Tensor::from_vec([1, 10, 1, 1], vec![1.0; 10]).unwrap();
        assert!((kl_term(&ones, &Tensor::zeros([1, 10, 1, 1])).unwrap() - 5.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mu = sample_noise::<f64, _>(&mut rng, 1, 10);
            let lv = sample_noise::<f64, _>(&mut rng, 1, 10);
            assert!(kl_term(&mu, &lv).unwrap() >= 0.0);
        }
    }

    #[test]
    fn recon_values() {
        let x = random_tensor([2, 1, 15, 400], 1);
        assert_eq!(recon_term(&x, &x, ReconReduction::Sum).unwrap(), 0.0);
        let mut shifted = x.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 1.0);
        let r = recon_term(&x, &shifted, ReconReduction::Sum).unwrap();
        assert!((r - 6000.0).abs() < 1e-6);
        assert!((recon_term(&x, &shifted, ReconReduction::Mean).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r, recon_term(&shifted, &x, ReconReduction::Sum).unwrap());
    }

    #[test]
    fn reparameterize_degenerate_and_seeded() {
        let mu = Tensor::from_vec([1, 3, 1, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let lat = Latent {
            mu: mu.clone(),
            log_var: Tensor::from_vec([1, 3, 1, 1], vec![-1e4; 3]).unwrap(),
        };
        let eps = Tensor::from_vec([1, 3, 1, 1], vec![3.0, -2.0, 1.0]).unwrap();
        assert_eq!(reparameterize(&lat, &eps).unwrap(), mu);
        let a = sample_noise::<f32, _>(&mut ChaCha8Rng::seed_from_u64(9), 4, 10);
        let b = sample_noise::<f32, _>(&mut ChaCha8Rng::seed_from_u64(9), 4, 10);
        assert_eq!(a, b);
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let lat = Latent {
            mu: Tensor::from_vec([1, 1, 1, 1], vec![0.7f64]).unwrap(),
            log_var: Tensor::from_vec([1, 1, 1, 1], vec![(1.5f64).ln() * 2.0]).unwrap(),
        };
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sum = 0.0;
        for _ in 0..n {
            let e = sample_noise::<f64, _>(&mut rng, 1, 1);
            sum += reparameterize(&lat, &e).unwrap().data()[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 0.7).abs() < 4.0 * 1.5 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn encoder_is_deterministic_and_condition_blind() {
        let mut m = Cvae::<f32>::new(CvaeConfig::default(), 2).unwrap();
        let item: Vec<f32> = (0..6000).map(|i| (i as f32 * 0.01).sin()).collect();
        let mut data = item.clone();
        data.extend(&item);
        let x = Tensor::from_vec([2, 1, 15, 400], data).unwrap();
        let lat = m.encode(&x, Mode::Infer).unwrap();
        assert_eq!(lat.mu.item(0), lat.mu.item(1));
        assert_eq!(lat.log_var.item(0), lat.log_var.item(1));
        let zero = m.encode(&Tensor::zeros([2, 1, 15, 400]), Mode::Train).unwrap();
        assert!(zero.mu.is_finite() && zero.log_var.is_finite());
    }

    #[test]
    fn strict_conditions() {
        let soft = ConditionVector::soft([0.5, 0.5, 0.0]).unwrap();
        assert!(condition_tensor::<f32>(&[soft], true).is_err());
        assert!(condition_tensor::<f32>(&[soft], false).is_ok());
        let c = condition_tensor::<f32>(&[ClassLabel::Left.condition()], true).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn decode_shape_for_every_condition() {
        let mut m = Cvae::<f32>::new(CvaeConfig::default(), 3).unwrap();
        let conds: Vec<_> = ClassLabel::ALL.iter().map(|l| l.condition()).collect();
        let c = condition_tensor(&conds, true).unwrap();
        let z = sample_noise(&mut ChaCha8Rng::seed_from_u64(1), 3, 10);
        let y = m.decode(&z, &c, Mode::Infer).unwrap();
        assert_eq!(y.shape(), [3, 1, 15, 400]);
        assert!(y.is_finite());
    }

    #[test]
    fn total_is_recon_plus_kl() {
        let mut m = Cvae::<f64>::new(small_config(), 4).unwrap();
        let x = random_tensor([3, 1, 3, 16], 2);
        let c = condition_tensor(&[ClassLabel::Right.condition(); 3], true).unwrap();
        let eps = random_tensor([3, 2, 1, 1], 3);
        let p = m.forward_loss(&x, &c, &eps, Mode::Train, false).unwrap();
        assert_eq!(p.loss.total, p.loss.recon + p.loss.kl);
        assert!(p.loss.total >= p.loss.kl && p.loss.kl >= 0.0);
    }

    #[test]
    fn frozen_model_isolates_recon() {
        // Zero every weight: the encoder yields mu = log_var = 0 and the
        // linear-head decoder yields zeros, so the loss is |x|^2 per trial.
        let cfg = CvaeConfig {
            head: OutputHead::Linear,
            ..small_config()
        };
        let mut m = Cvae::<f64>::new(cfg, 5).unwrap();
        for p in m.params_mut() {
            if p.name.ends_with("weight") || p.name.ends_with("bias") {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = random_tensor([2, 1, 3, 16], 6);
        let c = condition_tensor(&[ClassLabel::Feet.condition(); 2], true).unwrap();
        let eps = Tensor::zeros([2, 2, 1, 1]);
        let p = m.forward_loss(&x, &c, &eps, Mode::Train, false).unwrap();
        let expected = x.dot(&x) / 2.0;
        assert_eq!(p.loss.kl, 0.0);
        assert!((p.loss.total - expected).abs() < 1e-12 * expected);
    }
}
