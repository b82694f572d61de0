//! Numerical kernels with hand-written backward passes.
//!
//! Every layer implements [`Module`]: `forward` caches what `backward`
//! needs, and `backward` accumulates parameter gradients and returns the
//! gradient with respect to the layer input.

pub mod adam;
mod batchnorm;
mod conv;
mod dense;
mod elu;
pub mod gradcheck;
mod init;
mod reshape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvTranspose2d, Padding};
pub use dense::Dense;
pub use elu::{elu, Elu};
pub use init::glorot_uniform;
pub use reshape::{MeanPoolWidth, Reshape, UpsampleWidth};
pub use tensor::{Param, Real, Tensor};

use crate::error::Result;

/// Batch-norm behaviour: batch statistics (and running-stat updates) in
/// `Train`, frozen running statistics in `Infer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub trait Module<T: Real>: Send {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Must follow a `forward` call; accumulates into parameter grads.
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-trainable state such as running statistics.
    fn buffers(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    fn name(&self) -> &str;
}

/// Layers applied in order.
pub struct Sequential<T> {
    layers: Vec<Box<dyn Module<T>>>,
    name: String,
}

impl<T: Real> Sequential<T> {
    pub fn new(name: &str, layers: Vec<Box<dyn Module<T>>>) -> Self {
        Sequential {
            layers,
            name: name.to_string(),
        }
    }

    pub fn layers(&self) -> &[Box<dyn Module<T>>] {
        &self.layers
    }

    /// Forward pass that also returns every intermediate output shape.
    pub fn forward_traced(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<(String, [usize; 4])>)> {
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
            trace.push((l.name().to_string(), h.shape()));
        }
        Ok((h, trace))
    }
}

impl<T: Real> Module<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode)?;
        for l in layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn buffers(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    fn name(&self) -> &str {
        &self.name
    }
}
