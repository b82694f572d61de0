use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::glorot_uniform;
use crate::nn::tensor::{Param, Real, Tensor};
use crate::nn::{Mode, Module};

/// Affine map `x W + b` on each flattened batch item; output is
/// `(batch, out, 1, 1)`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    /// Row-major `[in, out]`.
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    n_in: usize,
    n_out: usize,
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng>(name: &str, n_in: usize, n_out: usize, bias: bool, rng: &mut R) -> Self {
        Dense {
            weight: Param::new(
                format!("{name}.weight"),
                vec![n_in, n_out],
                glorot_uniform(n_in * n_out, n_in, n_out, rng),
            ),
            bias: bias.then(|| Param::filled(format!("{name}.bias"), vec![n_out], T::zero())),
            n_in,
            n_out,
            name: name.to_string(),
            cache: None,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }
}

impl<T: Real> Module<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        if x.item_len() != self.n_in {
            return Err(Error::shape(format!(
                "{}: input width {} (shape {:?}), layer expects {}",
                self.name,
                x.item_len(),
                x.shape(),
                self.n_in
            )));
        }
        let mut y = Tensor::zeros([x.batch(), self.n_out, 1, 1]);
        let w = &self.weight.value;
        for n in 0..x.batch() {
            let out = y.item_mut(n);
            if let Some(b) = &self.bias {
                out.copy_from_slice(&b.value);
            }
            for (i, &xi) in x.item(n).iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                for (o, &wv) in out.iter_mut().zip(&w[i * self.n_out..(i + 1) * self.n_out]) {
                    *o += xi * wv;
                }
            }
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| Error::invalid("backward before forward"))?;
        gy.expect_shape([x.batch(), self.n_out, 1, 1], &self.name)?;
        let mut gx = Tensor::zeros(x.shape());
        for n in 0..x.batch() {
            let g = gy.item(n);
            if let Some(b) = &mut self.bias {
                for (bg, &gv) in b.grad.iter_mut().zip(g) {
                    *bg += gv;
                }
            }
            let xn = x.item(n);
            let gxn = gx.item_mut(n);
            for i in 0..self.n_in {
                let row = i * self.n_out..(i + 1) * self.n_out;
                let mut acc = T::zero();
                for ((wg, &wv), &gv) in self.weight.grad[row.clone()].iter_mut().zip(&self.weight.value[row]).zip(g) {
                    *wg += xn[i] * gv;
                    acc += wv * gv;
                }
                gxn[i] = acc;
            }
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = vec![&self.weight];
        p.extend(self.bias.as_ref());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = vec![&mut self.weight];
        p.extend(self.bias.as_mut());
        p
    }

    fn name(&self) -> &str {
        &self.name
    }
}
