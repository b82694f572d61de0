//! Finite-difference verification of every layer type, the composed
//! encoder and decoder, and the full training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cvae::{condition_tensor, sample_noise, Cvae, CvaeConfig, OutputHead};
use crate::data::ClassLabel;
use crate::error::Result;
use crate::nn::gradcheck::{grad_check, Differentiable, GradCheckOptions, GradCheckReport, ModuleProbe};
use crate::nn::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Elu, MeanPoolWidth, Mode, Module, Padding, Reshape, Tensor,
    UpsampleWidth,
};

/// The full loss as a function of every trainable parameter, with frozen
/// input, condition and reparameterisation noise.
pub struct LossProbe {
    pub model: Cvae<f64>,
    pub x: Tensor<f64>,
    pub c: Tensor<f64>,
    pub eps: Tensor<f64>,
}

impl Differentiable for LossProbe {
    fn block_names(&self) -> Vec<String> {
        self.model.params().iter().map(|p| p.name.clone()).collect()
    }

    fn block_len(&self, b: usize) -> usize {
        self.model.params()[b].len()
    }

    fn get(&self, b: usize, i: usize) -> f64 {
        self.model.params()[b].value[i]
    }

    fn set(&mut self, b: usize, i: usize, v: f64) {
        self.model.params_mut()[b].value[i] = v;
    }

    fn loss(&mut self) -> Result<(f64, f64)> {
        let p = self.model.forward_loss(&self.x, &self.c, &self.eps, Mode::Train, false)?;
        Ok((p.loss.total, p.loss.total.abs()))
    }

    fn gradient(&mut self) -> Result<Vec<Vec<f64>>> {
        self.model.zero_grad();
        self.model.forward_loss(&self.x, &self.c, &self.eps, Mode::Train, true)?;
        Ok(self.model.params().iter().map(|p| p.grad.clone()).collect())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Fault injection that negates every analytic gradient; a correct
    /// checker must then fail.
    pub flip_sign: bool,
    /// Also check the full-size model's loss on a random subset of
    /// coordinates per parameter block.
    pub full_size: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            flip_sign: false,
            full_size: true,
        }
    }
}

/// Reduced architecture: same layer sequence, small enough to check
/// exhaustively.
pub fn small_config() -> CvaeConfig {
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
    sample_noise::<f64, _>(&mut rng, shape.iter().product(), 1)
        .reshape(shape)
        .expect("same length")
}

fn conditions(n: usize) -> Result<Tensor<f64>> {
    let conds: Vec<_> = (0..n).map(|i| ClassLabel::ALL[i % 3].condition()).collect();
    condition_tensor(&conds, true)
}

/// Runs every check with `h = 1e-5` in 64-bit arithmetic.
pub fn gradient_check_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    let s = opts.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let exhaustive = GradCheckOptions {
        flip_sign: opts.flip_sign,
        seed: s,
        ..GradCheckOptions::exhaustive()
    };
    let mut out = Vec::new();
    let mut run = |name: &str, probe: &mut dyn Differentiable, o: &GradCheckOptions| -> Result<()> {
        out.push(SuiteEntry {
            name: name.to_string(),
            report: grad_check(probe, o)?,
        });
        Ok(())
    };
    let module = |m: Box<dyn Module<f64>>, shape: [usize; 4], mode: Mode, k: u64| {
        ModuleProbe::new(m, random_tensor(shape, s.wrapping_add(k)), mode, s.wrapping_add(100 + k))
    };

    let conv = Conv2d::new("conv_same", 2, 3, (1, 5), Padding::same(1, 5), true, &mut rng);
    run("conv2d (same padding)", &mut module(Box::new(conv), [2, 2, 3, 12], Mode::Train, 1), &exhaustive)?;
    let conv = Conv2d::new("conv_valid", 2, 3, (3, 1), Padding::valid(), true, &mut rng);
    run("conv2d (valid)", &mut module(Box::new(conv), [2, 2, 3, 6], Mode::Train, 2), &exhaustive)?;
    let de = ConvTranspose2d::new("deconv_valid", 3, 2, (3, 1), Padding::valid(), true, &mut rng);
    run("conv-transpose2d (valid)", &mut module(Box::new(de), [2, 3, 1, 6], Mode::Train, 3), &exhaustive)?;
    let de = ConvTranspose2d::new("deconv_same", 2, 1, (1, 4), Padding::same(1, 4), true, &mut rng);
    run("conv-transpose2d (same padding)", &mut module(Box::new(de), [2, 2, 3, 10], Mode::Train, 4), &exhaustive)?;
    let dense = Dense::new("dense", 12, 5, true, &mut rng);
    run("dense", &mut module(Box::new(dense), [3, 2, 1, 6], Mode::Train, 5), &exhaustive)?;

    let mut bn = BatchNorm2d::<f64>::new("bn_train", 3, 0.99, 1e-3);
    bn.gamma.value = vec![0.7, 1.3, -0.4];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    run("batch norm (batch statistics)", &mut module(Box::new(bn), [2, 3, 4, 5], Mode::Train, 6), &exhaustive)?;
    let mut bn = BatchNorm2d::<f64>::new("bn_infer", 3, 0.99, 1e-3);
    bn.gamma.value = vec![0.7, 1.3, -0.4];
    bn.running_mean.value = vec![0.1, 0.2, 0.3];
    bn.running_var.value = vec![0.5, 2.0, 1.0];
    bn.mark_stats_initialized();
    run("batch norm (running statistics)", &mut module(Box::new(bn), [2, 3, 4, 5], Mode::Infer, 7), &exhaustive)?;

    let mut elu = module(Box::new(Elu::<f64>::new("elu")), [2, 3, 2, 5], Mode::Train, 8).with_kink_guard(1e-3);
    run("elu", &mut elu, &exhaustive)?;
    run("mean pool (width)", &mut module(Box::new(MeanPoolWidth::new("pool", 2)), [2, 3, 1, 8], Mode::Train, 9), &exhaustive)?;
    run("upsample (width)", &mut module(Box::new(UpsampleWidth::new("up", 2)), [2, 3, 1, 4], Mode::Train, 10), &exhaustive)?;
    run("reshape", &mut module(Box::new(Reshape::new("reshape", [2, 1, 6])), [2, 12, 1, 1], Mode::Train, 11), &exhaustive)?;

    let cfg = small_config();
    let m = Cvae::<f64>::new(cfg.clone(), s.wrapping_add(12))?;
    let enc_in = [2, 1, cfg.n_channels, cfg.n_samples];
    let mut enc = module(Box::new(m.encoder), enc_in, Mode::Train, 13).with_kink_guard(1e-3);
    run("encoder", &mut enc, &exhaustive)?;
    let dec_in = [2, cfg.latent_dim + cfg.n_classes, 1, 1];
    let mut dec = module(Box::new(m.decoder), dec_in, Mode::Train, 14).with_kink_guard(1e-3);
    run("decoder", &mut dec, &exhaustive)?;

    for head in [OutputHead::BnElu, OutputHead::Linear] {
        let cfg = CvaeConfig { head, ..small_config() };
        let mut probe = LossProbe {
            model: Cvae::new(cfg.clone(), s.wrapping_add(15))?,
            x: random_tensor([3, 1, cfg.n_channels, cfg.n_samples], s.wrapping_add(16)),
            c: conditions(3)?,
            eps: random_tensor([3, cfg.latent_dim, 1, 1], s.wrapping_add(17)),
        };
        let name = match head {
            OutputHead::BnElu => "full loss (batch-norm + ELU output)",
            OutputHead::Linear => "full loss (linear output)",
        };
        run(name, &mut probe, &exhaustive)?;
    }

    if opts.full_size {
        let cfg = CvaeConfig::default();
        let mut probe = LossProbe {
            model: Cvae::new(cfg.clone(), s.wrapping_add(18))?,
            x: random_tensor([2, 1, cfg.n_channels, cfg.n_samples], s.wrapping_add(19)),
            c: conditions(2)?,
            eps: random_tensor([2, cfg.latent_dim, 1, 1], s.wrapping_add(20)),
        };
        let sub = GradCheckOptions {
            flip_sign: opts.flip_sign,
            ..GradCheckOptions::subsample(8, s)
        };
        run("full loss, full-size model (8 coordinates per block)", &mut probe, &sub)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_detects_wrong_sign() {
        let opts = SuiteOptions {
            full_size: false,
            ..SuiteOptions::default()
        };
        let good = gradient_check_suite(&opts).unwrap();
        assert_eq!(good.len(), 15);
        for e in &good {
            assert!(e.report.passed(1e-4), "{}: {:?}", e.name, e.report);
            assert!(e.report.checked > 0, "{}", e.name);
        }
        let bad = gradient_check_suite(&SuiteOptions { flip_sign: true, ..opts }).unwrap();
        assert!(bad.iter().all(|e| !e.report.passed(1e-4)));
    }
}
