//! Central finite-difference verification of analytic gradients.
//!
//! A [`Differentiable`] exposes its perturbable coordinates in named blocks
//! (inputs, parameters), a scalar loss, and the analytic gradient of that
//! loss. [`grad_check`] compares the two coordinate by coordinate.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::{Mode, Module};

/// Something whose scalar loss can be evaluated and differentiated in f64.
pub trait Differentiable {
    fn block_names(&self) -> Vec<String>;

    fn block_len(&self, block: usize) -> usize;

    fn get(&self, block: usize, index: usize) -> f64;

    fn set(&mut self, block: usize, index: usize, value: f64);

    /// Loss at the current coordinates, plus a magnitude scale used to set
    /// the round-off noise floor (typically the sum of absolute terms).
    fn loss(&mut self) -> Result<(f64, f64)>;

    /// Analytic gradient, one vector per block.
    fn gradient(&mut self) -> Result<Vec<Vec<f64>>>;

    /// Coordinates excluded from checking (non-differentiable points).
    fn excluded(&self, _block: usize, _index: usize) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many randomly chosen coordinates per block.
    pub max_per_block: Option<usize>,
    pub seed: u64,
    /// The noise floor is `noise_factor * eps_f64 * scale / h`.
    pub noise_factor: f64,
    /// Fault injection: negate the analytic gradient before comparing.
    pub flip_sign: bool,
}

impl GradCheckOptions {
    pub fn exhaustive() -> Self {
        GradCheckOptions {
            h: 1e-5,
            max_per_block: None,
            seed: 0,
            noise_factor: 1e5,
            flip_sign: false,
        }
    }

    pub fn subsample(max_per_block: usize, seed: u64) -> Self {
        GradCheckOptions {
            max_per_block: Some(max_per_block),
            seed,
            ..Self::exhaustive()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    pub noise_floor: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn grad_check<D: Differentiable + ?Sized>(f: &mut D, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (l0, scale) = f.loss()?;
    let (l1, _) = f.loss()?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::Nondeterministic(format!(
            "two evaluations at the same point gave {l0:e} and {l1:e}"
        )));
    }
    if !l0.is_finite() {
        return Err(Error::NonFinite(format!("loss is {l0}")));
    }
    let mut analytic = f.gradient()?;
    if opts.flip_sign {
        analytic.iter_mut().flatten().for_each(|g| *g = -*g);
    }
    let floor = (opts.noise_factor * f64::EPSILON * scale.abs().max(l0.abs()) / opts.h).max(1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names = f.block_names();
    let mut blocks = Vec::with_capacity(names.len());
    let (mut checked, mut excluded) = (0, 0);
    for (b, name) in names.into_iter().enumerate() {
        let len = f.block_len(b);
        if analytic[b].len() != len {
            return Err(Error::shape(format!(
                "block {name}: analytic gradient has {} entries, block has {len}",
                analytic[b].len()
            )));
        }
        let mut idx: Vec<usize> = match opts.max_per_block {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        idx.sort_unstable();
        let mut rep = BlockReport {
            name,
            len,
            checked: 0,
            max_rel_error: 0.0,
            worst_index: None,
        };
        for i in idx {
            if f.excluded(b, i) {
                excluded += 1;
                continue;
            }
            let v = f.get(b, i);
            f.set(b, i, v + opts.h);
            let (lp, _) = f.loss()?;
            f.set(b, i, v - opts.h);
            let (lm, _) = f.loss()?;
            f.set(b, i, v);
            let numeric = (lp - lm) / (2.0 * opts.h);
            let e = relative_error(analytic[b][i], numeric, floor);
            if !e.is_finite() {
                return Err(Error::NonFinite(format!("block {} index {i}: error {e}", rep.name)));
            }
            if e > rep.max_rel_error || rep.worst_index.is_none() {
                rep.max_rel_error = rep.max_rel_error.max(e);
                rep.worst_index = Some(i);
            }
            rep.checked += 1;
        }
        checked += rep.checked;
        blocks.push(rep);
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        checked,
        excluded,
        max_rel_error,
        noise_floor: floor,
    })
}

/// Checks one module under the probe loss `sum(r * module(x))` with a
/// fixed random `r`, over the input and every trainable parameter.
pub struct ModuleProbe {
    module: Box<dyn Module<f64>>,
    x: Tensor<f64>,
    mode: Mode,
    seed: u64,
    r: Option<Tensor<f64>>,
    kink_guard: Option<f64>,
}

impl ModuleProbe {
    pub fn new(module: Box<dyn Module<f64>>, x: Tensor<f64>, mode: Mode, seed: u64) -> Self {
        ModuleProbe {
            module,
            x,
            mode,
            seed,
            r: None,
            kink_guard: None,
        }
    }

    /// Skips input coordinates within `guard` of zero, where an activation
    /// may be non-differentiable.
    pub fn with_kink_guard(mut self, guard: f64) -> Self {
        self.kink_guard = Some(guard);
        self
    }

    pub fn module(&self) -> &dyn Module<f64> {
        self.module.as_ref()
    }

    fn projection(&mut self, shape: [usize; 4]) -> &Tensor<f64> {
        let seed = self.seed;
        self.r.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .expect("length matches shape")
        })
    }
}

impl Differentiable for ModuleProbe {
    fn block_names(&self) -> Vec<String> {
        std::iter::once("input".to_string())
            .chain(self.module.params().iter().map(|p| p.name.clone()))
            .collect()
    }

    fn block_len(&self, block: usize) -> usize {
        match block {
            0 => self.x.len(),
            b => self.module.params()[b - 1].len(),
        }
    }

    fn get(&self, block: usize, index: usize) -> f64 {
        match block {
            0 => self.x.data()[index],
            b => self.module.params()[b - 1].value[index],
        }
    }

    fn set(&mut self, block: usize, index: usize, value: f64) {
        match block {
            0 => self.x.data_mut()[index] = value,
            b => self.module.params_mut()[b - 1].value[index] = value,
        }
    }

    fn loss(&mut self) -> Result<(f64, f64)> {
        let y = self.module.forward(&self.x, self.mode)?;
        let r = self.projection(y.shape());
        y.expect_shape(r.shape(), "probe output")?;
        let loss = y.dot(r);
        let scale = y.data().iter().zip(r.data()).map(|(a, b)| (a * b).abs()).sum();
        Ok((loss, scale))
    }

    fn gradient(&mut self) -> Result<Vec<Vec<f64>>> {
        self.module.params_mut().into_iter().for_each(|p| p.zero_grad());
        let y = self.module.forward(&self.x, self.mode)?;
        let r = self.projection(y.shape()).clone();
        let gx = self.module.backward(&r)?;
        Ok(std::iter::once(gx.into_vec())
            .chain(self.module.params().iter().map(|p| p.grad.clone()))
            .collect())
    }

    fn excluded(&self, block: usize, index: usize) -> bool {
        match self.kink_guard {
            Some(g) if block == 0 => self.x.data()[index].abs() < g,
            _ => false,
        }
    }
}
