//! Width pooling, width upsampling and per-item reshaping.

use crate::error::{Error, Result};
use crate::nn::tensor::{Real, Tensor};
use crate::nn::{Mode, Module};

/// Averages non-overlapping runs of `factor` samples along the width axis.
#[derive(Clone, Debug)]
pub struct MeanPoolWidth {
    factor: usize,
    name: String,
    in_shape: Option<[usize; 4]>,
}

impl MeanPoolWidth {
    pub fn new(name: &str, factor: usize) -> Self {
        MeanPoolWidth {
            factor: factor.max(1),
            name: name.to_string(),
            in_shape: None,
        }
    }
}

impl<T: Real> Module<T> for MeanPoolWidth {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if w % self.factor != 0 {
            return Err(Error::shape(format!(
                "{}: width {w} not divisible by pool factor {}",
                self.name, self.factor
            )));
        }
        let inv = T::one() / T::from_f64(self.factor as f64);
        let data: Vec<T> = x
            .data()
            .chunks_exact(self.factor)
            .map(|run| run.iter().copied().sum::<T>() * inv)
            .collect();
        self.in_shape = Some(x.shape());
        Tensor::from_vec([n, c, h, w / self.factor], data)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.in_shape.ok_or_else(|| Error::invalid("backward before forward"))?;
        gy.expect_shape([s[0], s[1], s[2], s[3] / self.factor], &self.name)?;
        let inv = T::one() / T::from_f64(self.factor as f64);
        let data = gy
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, self.factor))
            .collect();
        Tensor::from_vec(s, data)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Repeats every width sample `factor` times (nearest neighbour).
#[derive(Clone, Debug)]
pub struct UpsampleWidth {
    factor: usize,
    name: String,
    in_shape: Option<[usize; 4]>,
}

impl UpsampleWidth {
    pub fn new(name: &str, factor: usize) -> Self {
        UpsampleWidth {
            factor: factor.max(1),
            name: name.to_string(),
            in_shape: None,
        }
    }
}

impl<T: Real> Module<T> for UpsampleWidth {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        let data = x
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, self.factor))
            .collect();
        self.in_shape = Some(x.shape());
        Tensor::from_vec([n, c, h, w * self.factor], data)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.in_shape.ok_or_else(|| Error::invalid("backward before forward"))?;
        gy.expect_shape([s[0], s[1], s[2], s[3] * self.factor], &self.name)?;
        let data = gy
            .data()
            .chunks_exact(self.factor)
            .map(|run| run.iter().copied().sum::<T>())
            .collect();
        Tensor::from_vec(s, data)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Reinterprets each batch item as `(maps, height, width)`.
#[derive(Clone, Debug)]
pub struct Reshape {
    item_shape: [usize; 3],
    name: String,
    in_shape: Option<[usize; 4]>,
}

impl Reshape {
    pub fn new(name: &str, item_shape: [usize; 3]) -> Self {
        Reshape {
            item_shape,
            name: name.to_string(),
            in_shape: None,
        }
    }
}

impl<T: Real> Module<T> for Reshape {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [c, h, w] = self.item_shape;
        if x.item_len() != c * h * w {
            return Err(Error::shape(format!(
                "{}: cannot view item of {} values as {:?}",
                self.name,
                x.item_len(),
                self.item_shape
            )));
        }
        self.in_shape = Some(x.shape());
        x.clone().reshape([x.batch(), c, h, w])
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.in_shape.ok_or_else(|| Error::invalid("backward before forward"))?;
        let [c, h, w] = self.item_shape;
        gy.expect_shape([s[0], c, h, w], &self.name)?;
        gy.clone().reshape(s)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions, ModuleProbe};

    fn row(v: Vec<f64>) -> Tensor<f64> {
        let w = v.len();
        Tensor::from_vec([1, 1, 1, w], v).unwrap()
    }

    #[test]
    fn pool_pairs() {
        let mut p = MeanPoolWidth::new("pool", 2);
        let y = Module::<f64>::forward(&mut p, &row(vec![1.0, 3.0, 5.0, 7.0]), Mode::Train).unwrap();
        assert_eq!(y.data(), &[2.0, 6.0]);
        assert!(Module::<f64>::forward(&mut p, &row(vec![1.0, 2.0, 3.0]), Mode::Train).is_err());
    }

    #[test]
    fn upsample_repeats() {
        let mut u = UpsampleWidth::new("up", 2);
        let y = Module::<f64>::forward(&mut u, &row(vec![2.0, 6.0]), Mode::Train).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 6.0, 6.0]);
    }

    #[test]
    fn pool_inverts_upsample() {
        let x = Tensor::from_vec([2, 5, 1, 200], (0..2000).map(|i| (i as f32 * 0.013).cos()).collect()).unwrap();
        let mut u = UpsampleWidth::new("up", 2);
        let mut p = MeanPoolWidth::new("pool", 2);
        let up = u.forward(&x, Mode::Train).unwrap();
        assert_eq!(up.shape(), [2, 5, 1, 400]);
        assert_eq!(p.forward(&up, Mode::Train).unwrap(), x);
    }

    #[test]
    fn reshape_round_trip() {
        let mut r = Reshape::new("r", [5, 1, 200]);
        let x = Tensor::<f32>::zeros([3, 1000, 1, 1]);
        let y = r.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), [3, 5, 1, 200]);
        assert_eq!(r.backward(&y).unwrap().shape(), [3, 1000, 1, 1]);
        assert!(Reshape::new("bad", [5, 1, 199]).forward(&x, Mode::Train).is_err());
    }

    #[test]
    fn gradients() {
        let x = Tensor::from_vec([2, 2, 3, 4], (0..48).map(|i| (i as f64 * 0.71).sin()).collect()).unwrap();
        for m in [
            Box::new(MeanPoolWidth::new("pool", 2)) as Box<dyn Module<f64>>,
            Box::new(UpsampleWidth::new("up", 2)),
            Box::new(Reshape::new("r", [1, 4, 6])),
        ] {
            let mut probe = ModuleProbe::new(m, x.clone(), Mode::Train, 9);
            let rep = grad_check(&mut probe, &GradCheckOptions::exhaustive()).unwrap();
            assert!(rep.max_rel_error < 1e-8, "{rep:?}");
        }
    }
}
