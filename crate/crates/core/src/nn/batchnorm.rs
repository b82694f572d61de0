use crate::error::{Error, Result};
use crate::nn::tensor::{Param, Real, Tensor};
use crate::nn::{Mode, Module};

/// Per-map batch normalisation over `(batch, height, width)`.
///
/// Running statistics follow `r <- momentum * r + (1 - momentum) * batch`
/// using the biased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    stats_initialized: bool,
    channels: usize,
    name: String,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
enum Cache<T> {
    Train { x_hat: Tensor<T>, inv_std: Vec<T> },
    Infer { x_hat: Tensor<T>, scale: Vec<T> },
}

impl<T: Real> BatchNorm2d<T> {
    /// Running statistics start unset; inference fails until a training
    /// step or [`BatchNorm2d::init_running_stats`].
    pub fn new(name: &str, channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm2d {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], T::one()),
            beta: Param::filled(format!("{name}.beta"), vec![channels], T::zero()),
            running_mean: Param::filled(format!("{name}.running_mean"), vec![channels], T::zero()),
            running_var: Param::filled(format!("{name}.running_var"), vec![channels], T::one()),
            momentum,
            eps,
            stats_initialized: false,
            channels,
            name: name.to_string(),
            cache: None,
        }
    }

    /// Mean 0, variance 1.
    pub fn init_running_stats(&mut self) {
        self.running_mean.value.iter_mut().for_each(|v| *v = T::zero());
        self.running_var.value.iter_mut().for_each(|v| *v = T::one());
        self.stats_initialized = true;
    }

    pub fn mark_stats_initialized(&mut self) {
        self.stats_initialized = true;
    }

    pub fn stats_initialized(&self) -> bool {
        self.stats_initialized
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape()[1] != self.channels {
            return Err(Error::shape(format!(
                "{}: input has {} maps, layer expects {}",
                self.name,
                x.shape()[1],
                self.channels
            )));
        }
        Ok(())
    }
}

/// Iterates the `(item, channel)` planes of channel `c`.
fn planes<T>(data: &[T], shape: [usize; 4], c: usize) -> impl Iterator<Item = &[T]> {
    let [n, ch, h, w] = shape;
    let plane = h * w;
    (0..n).map(move |i| &data[(i * ch + c) * plane..(i * ch + c + 1) * plane])
}

fn planes_mut<T>(data: &mut [T], shape: [usize; 4], c: usize) -> impl Iterator<Item = &mut [T]> {
    let [_, ch, h, w] = shape;
    let plane = h * w;
    data.chunks_exact_mut(plane).skip(c).step_by(ch)
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        let shape = x.shape();
        let m = shape[0] * shape[2] * shape[3];
        let eps = T::from_f64(self.eps);
        let mut y = x.clone();
        match mode {
            Mode::Train => {
                if shape[0] < 2 {
                    return Err(Error::invalid(format!(
                        "{}: training-mode batch norm needs a batch of at least 2",
                        self.name
                    )));
                }
                let mom = T::from_f64(self.momentum);
                let mut inv_std = Vec::with_capacity(self.channels);
                let mut x_hat = x.clone();
                for c in 0..self.channels {
                    let mean = planes(x.data(), shape, c).flatten().copied().sum::<T>() / T::from_f64(m as f64);
                    let var = planes(x.data(), shape, c)
                        .flatten()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>()
                        / T::from_f64(m as f64);
                    let is = T::one() / (var + eps).sqrt();
                    let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                    for (xh, yv) in planes_mut(x_hat.data_mut(), shape, c).zip(planes_mut(y.data_mut(), shape, c)) {
                        for (h, o) in xh.iter_mut().zip(yv.iter_mut()) {
                            *h = (*h - mean) * is;
                            *o = g * *h + b;
                        }
                    }
                    inv_std.push(is);
                    let rm = &mut self.running_mean.value[c];
                    *rm = mom * *rm + (T::one() - mom) * mean;
                    let rv = &mut self.running_var.value[c];
                    *rv = mom * *rv + (T::one() - mom) * var;
                }
                self.stats_initialized = true;
                self.cache = Some(Cache::Train { x_hat, inv_std });
            }
            Mode::Infer => {
                if !self.stats_initialized {
                    return Err(Error::invalid(format!(
                        "{}: inference before running statistics exist",
                        self.name
                    )));
                }
                let mut scale = Vec::with_capacity(self.channels);
                let mut x_hat = x.clone();
                for c in 0..self.channels {
                    let is = T::one() / (self.running_var.value[c] + eps).sqrt();
                    let mean = self.running_mean.value[c];
                    let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                    for (xh, yv) in planes_mut(x_hat.data_mut(), shape, c).zip(planes_mut(y.data_mut(), shape, c)) {
                        for (h, o) in xh.iter_mut().zip(yv.iter_mut()) {
                            *h = (*h - mean) * is;
                            *o = g * *h + b;
                        }
                    }
                    scale.push(g * is);
                }
                self.cache = Some(Cache::Infer { x_hat, scale });
            }
        }
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::invalid("backward before forward"))?;
        let shape = gy.shape();
        let mut gx = gy.clone();
        match cache {
            Cache::Train { x_hat, inv_std } => {
                x_hat.expect_shape(shape, &self.name)?;
                let m = T::from_f64((shape[0] * shape[2] * shape[3]) as f64);
                for c in 0..self.channels {
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for (gp, hp) in planes(gy.data(), shape, c).zip(planes(x_hat.data(), shape, c)) {
                        for (&g, &h) in gp.iter().zip(hp) {
                            sum_g += g;
                            sum_gx += g * h;
                        }
                    }
                    self.beta.grad[c] += sum_g;
                    self.gamma.grad[c] += sum_gx;
                    // dx = gamma * inv_std / m * (m*g - sum(g) - x_hat * sum(g*x_hat))
                    let k = self.gamma.value[c] * inv_std[c] / m;
                    for (op, hp) in planes_mut(gx.data_mut(), shape, c).zip(planes(x_hat.data(), shape, c)) {
                        for (o, &h) in op.iter_mut().zip(hp) {
                            *o = k * (m * *o - sum_g - h * sum_gx);
                        }
                    }
                }
            }
            Cache::Infer { x_hat, scale } => {
                x_hat.expect_shape(shape, &self.name)?;
                for c in 0..self.channels {
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for (gp, hp) in planes(gy.data(), shape, c).zip(planes(x_hat.data(), shape, c)) {
                        for (&g, &h) in gp.iter().zip(hp) {
                            sum_g += g;
                            sum_gx += g * h;
                        }
                    }
                    self.beta.grad[c] += sum_g;
                    self.gamma.grad[c] += sum_gx;
                    for p in planes_mut(gx.data_mut(), shape, c) {
                        p.iter_mut().for_each(|v| *v *= scale[c]);
                    }
                }
            }
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn name(&self) -> &str {
        &self.name
    }
}
