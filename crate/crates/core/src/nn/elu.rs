use crate::error::{Error, Result};
use crate::nn::tensor::{Real, Tensor};
use crate::nn::{Mode, Module};

/// `x` for `x > 0`, `exp(x) - 1` otherwise (alpha = 1).
pub fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[derive(Clone, Debug)]
pub struct Elu<T> {
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Elu<T> {
    pub fn new(name: &str) -> Self {
        Elu {
            name: name.to_string(),
            cache: None,
        }
    }
}

impl<T: Real> Module<T> for Elu<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = elu(*v));
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.as_ref().ok_or_else(|| Error::invalid("backward before forward"))?;
        y.expect_shape(grad.shape(), &self.name)?;
        let mut gx = grad.clone();
        // derivative is 1 on the positive side and exp(x) = y + 1 otherwise
        for (g, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
            if yv <= T::zero() {
                *g *= yv + T::one();
            }
        }
        Ok(gx)
    }

    fn name(&self) -> &str {
        &self.name
    }
}
