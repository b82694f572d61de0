//! Stride-1 2-D convolution (cross-correlation) and its transpose.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::glorot_uniform;
use crate::nn::tensor::{Param, Real, Tensor};
use crate::nn::{Mode, Module};

/// Zero padding on each side of the spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn valid() -> Self {
        Padding {
            top: 0,
            bottom: 0,
            left: 0,
            right: 0,
        }
    }

    /// Output extent equals input extent; for even kernels the extra zero
    /// goes after the signal.
    pub fn same(kh: usize, kw: usize) -> Self {
        let top = (kh - 1) / 2;
        let left = (kw - 1) / 2;
        Padding {
            top,
            bottom: kh - 1 - top,
            left,
            right: kw - 1 - left,
        }
    }
}

/// Geometry of one convolution `(N, C, H, W) -> (N, O, Ho, Wo)`.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    o: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    pad: Padding,
}

impl ConvGeom {
    fn new(c: usize, o: usize, kh: usize, kw: usize, h: usize, w: usize, pad: Padding) -> Result<Self> {
        let ph = h + pad.top + pad.bottom;
        let pw = w + pad.left + pad.right;
        if kh > ph || kw > pw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(ConvGeom {
            c,
            o,
            kh,
            kw,
            h,
            w,
            ho: ph - kh + 1,
            wo: pw - kw + 1,
            pad,
        })
    }

    /// Output columns `j` for which input column `j + b - left` exists.
    fn col_range(&self, b: usize) -> (usize, usize) {
        let lo = self.pad.left.saturating_sub(b);
        let hi = (self.w + self.pad.left).saturating_sub(b).min(self.wo);
        (lo, hi.max(lo))
    }

    fn src_row(&self, i: usize, a: usize) -> Option<usize> {
        (i + a).checked_sub(self.pad.top).filter(|&r| r < self.h)
    }
}

/// `y[n,o,i,j] = sum_{c,a,b} w[o,c,a,b] * x[n,c,i+a-top,j+b-left]`
fn correlate<T: Real>(x: &[T], w: &[T], y: &mut [T], g: &ConvGeom, batch: usize) {
    let (xs, ys) = (g.c * g.h * g.w, g.o * g.ho * g.wo);
    for n in 0..batch {
        let xn = &x[n * xs..(n + 1) * xs];
        let yn = &mut y[n * ys..(n + 1) * ys];
        for o in 0..g.o {
            for c in 0..g.c {
                for a in 0..g.kh {
                    for i in 0..g.ho {
                        let Some(r) = g.src_row(i, a) else { continue };
                        let xrow = &xn[(c * g.h + r) * g.w..(c * g.h + r + 1) * g.w];
                        let yrow = &mut yn[(o * g.ho + i) * g.wo..(o * g.ho + i + 1) * g.wo];
                        for b in 0..g.kw {
                            let wv = w[((o * g.c + c) * g.kh + a) * g.kw + b];
                            let (lo, hi) = g.col_range(b);
                            let shift = b as isize - g.pad.left as isize;
                            let xs = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (yv, &xv) in yrow[lo..hi].iter_mut().zip(xs) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`correlate`] with respect to `x`: scatters `gy` back.
fn correlate_adjoint<T: Real>(gy: &[T], w: &[T], gx: &mut [T], g: &ConvGeom, batch: usize) {
    let (xs, ys) = (g.c * g.h * g.w, g.o * g.ho * g.wo);
    for n in 0..batch {
        let gxn = &mut gx[n * xs..(n + 1) * xs];
        let gyn = &gy[n * ys..(n + 1) * ys];
        for o in 0..g.o {
            for c in 0..g.c {
                for a in 0..g.kh {
                    for i in 0..g.ho {
                        let Some(r) = g.src_row(i, a) else { continue };
                        let gyrow = &gyn[(o * g.ho + i) * g.wo..(o * g.ho + i + 1) * g.wo];
                        let gxrow = &mut gxn[(c * g.h + r) * g.w..(c * g.h + r + 1) * g.w];
                        for b in 0..g.kw {
                            let wv = w[((o * g.c + c) * g.kh + a) * g.kw + b];
                            let (lo, hi) = g.col_range(b);
                            let shift = b as isize - g.pad.left as isize;
                            let dst = &mut gxrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (xv, &yv) in dst.iter_mut().zip(&gyrow[lo..hi]) {
                                *xv += wv * yv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Weight gradient of [`correlate`]: `gw[o,c,a,b] += sum x * gy`.
fn correlate_weight_grad<T: Real>(x: &[T], gy: &[T], gw: &mut [T], g: &ConvGeom, batch: usize) {
    let (xs, ys) = (g.c * g.h * g.w, g.o * g.ho * g.wo);
    for n in 0..batch {
        let xn = &x[n * xs..(n + 1) * xs];
        let gyn = &gy[n * ys..(n + 1) * ys];
        for o in 0..g.o {
            for c in 0..g.c {
                for a in 0..g.kh {
                    for i in 0..g.ho {
                        let Some(r) = g.src_row(i, a) else { continue };
                        let xrow = &xn[(c * g.h + r) * g.w..(c * g.h + r + 1) * g.w];
                        let gyrow = &gyn[(o * g.ho + i) * g.wo..(o * g.ho + i + 1) * g.wo];
                        for b in 0..g.kw {
                            let (lo, hi) = g.col_range(b);
                            let shift = b as isize - g.pad.left as isize;
                            let xs = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            let mut acc = T::zero();
                            for (&yv, &xv) in gyrow[lo..hi].iter().zip(xs) {
                                acc += yv * xv;
                            }
                            gw[((o * g.c + c) * g.kh + a) * g.kw + b] += acc;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(y: &mut Tensor<T>, bias: &[T]) {
    let [n, o, h, w] = y.shape();
    let plane = h * w;
    for item in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(o) {
            let start = (item * o + ch) * plane;
            y.data_mut()[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<T: Real>(gy: &Tensor<T>, gb: &mut [T]) {
    let [n, o, h, w] = gy.shape();
    let plane = h * w;
    for item in 0..n {
        for (ch, g) in gb.iter_mut().enumerate().take(o) {
            let start = (item * o + ch) * plane;
            *g += gy.data()[start..start + plane].iter().copied().sum::<T>();
        }
    }
}

/// Convolution with `out_ch` kernels of size `kh x kw`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    pad: Padding,
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        (kh, kw): (usize, usize),
        pad: Padding,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kh * kw;
        let fan_out = out_ch * kh * kw;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kh, kw],
            glorot_uniform(out_ch * in_ch * kh * kw, fan_in, fan_out, rng),
        );
        Conv2d {
            weight,
            bias: bias.then(|| Param::filled(format!("{name}.bias"), vec![out_ch], T::zero())),
            in_ch,
            out_ch,
            kh,
            kw,
            pad,
            name: name.to_string(),
            cache: None,
        }
    }

    fn geom(&self, x: &Tensor<T>) -> Result<ConvGeom> {
        let [_, c, h, w] = x.shape();
        if c != self.in_ch {
            return Err(Error::shape(format!(
                "{}: input has {c} maps, layer expects {}",
                self.name, self.in_ch
            )));
        }
        ConvGeom::new(self.in_ch, self.out_ch, self.kh, self.kw, h, w, self.pad)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let g = self.geom(x)?;
        let mut y = Tensor::zeros([x.batch(), g.o, g.ho, g.wo]);
        correlate(x.data(), &self.weight.value, y.data_mut(), &g, x.batch());
        if let Some(b) = &self.bias {
            add_bias(&mut y, &b.value);
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| Error::invalid("backward before forward"))?;
        let g = self.geom(x)?;
        gy.expect_shape([x.batch(), g.o, g.ho, g.wo], &self.name)?;
        correlate_weight_grad(x.data(), gy.data(), &mut self.weight.grad, &g, x.batch());
        if let Some(b) = &mut self.bias {
            bias_grad(gy, &mut b.grad);
        }
        let mut gx = Tensor::zeros(x.shape());
        correlate_adjoint(gy.data(), &self.weight.value, gx.data_mut(), &g, x.batch());
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Transposed convolution: the adjoint of a [`Conv2d`] mapping
/// `out_ch` maps to `in_ch` maps with the same kernel and padding.
///
/// Weight layout is `[in_ch, out_ch, kh, kw]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    pad: Padding,
    name: String,
    cache: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        (kh, kw): (usize, usize),
        pad: Padding,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            vec![in_ch, out_ch, kh, kw],
            glorot_uniform(in_ch * out_ch * kh * kw, out_ch * kh * kw, in_ch * kh * kw, rng),
        );
        ConvTranspose2d {
            weight,
            bias: bias.then(|| Param::filled(format!("{name}.bias"), vec![out_ch], T::zero())),
            in_ch,
            out_ch,
            kh,
            kw,
            pad,
            name: name.to_string(),
            cache: None,
        }
    }

    /// Geometry of the underlying forward convolution (output -> input).
    fn geom(&self, x: &Tensor<T>) -> Result<ConvGeom> {
        let [_, c, h, w] = x.shape();
        if c != self.in_ch {
            return Err(Error::shape(format!(
                "{}: input has {c} maps, layer expects {}",
                self.name, self.in_ch
            )));
        }
        let pad_h = self.pad.top + self.pad.bottom;
        let pad_w = self.pad.left + self.pad.right;
        let (oh, ow) = ((h + self.kh - 1).checked_sub(pad_h), (w + self.kw - 1).checked_sub(pad_w));
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(format!("{}: padding exceeds output extent", self.name)));
        };
        let g = ConvGeom::new(self.out_ch, self.in_ch, self.kh, self.kw, oh, ow, self.pad)?;
        if g.ho != h || g.wo != w {
            return Err(Error::shape(format!(
                "{}: no output shape maps back onto {h}x{w}",
                self.name
            )));
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let g = self.geom(x)?;
        let mut y = Tensor::zeros([x.batch(), self.out_ch, g.h, g.w]);
        correlate_adjoint(x.data(), &self.weight.value, y.data_mut(), &g, x.batch());
        if let Some(b) = &self.bias {
            add_bias(&mut y, &b.value);
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or_else(|| Error::invalid("backward before forward"))?;
        let g = self.geom(x)?;
        gy.expect_shape([x.batch(), self.out_ch, g.h, g.w], &self.name)?;
        // <gy, A^T x> = <A gy, x>: the weight gradient is that of a forward
        // convolution with input gy and output gradient x.
        correlate_weight_grad(gy.data(), x.data(), &mut self.weight.grad, &g, x.batch());
        if let Some(b) = &mut self.bias {
            bias_grad(gy, &mut b.grad);
        }
        let mut gx = Tensor::zeros(x.shape());
        correlate(gy.data(), &self.weight.value, gx.data_mut(), &g, x.batch());
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions, ModuleProbe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut r = rng();
        let mut conv = Conv2d::<f64>::new("c", 1, 1, (1, 1), Padding::valid(), true, &mut r);
        conv.weight.value[0] = 1.0;
        let x = random([2, 1, 3, 5], &mut r);
        assert_eq!(conv.forward(&x, Mode::Train).unwrap(), x);
        let mut de = ConvTranspose2d::<f64>::new("d", 1, 1, (1, 1), Padding::valid(), true, &mut r);
        de.weight.value[0] = 1.0;
        assert_eq!(de.forward(&x, Mode::Train).unwrap(), x);
    }

    #[test]
    fn table_shapes() {
        let mut r = rng();
        let x = Tensor::<f32>::zeros([2, 1, 15, 400]);
        let mut temporal = Conv2d::new("t", 1, 5, (1, 40), Padding::same(1, 40), true, &mut r);
        let y = temporal.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 5, 15, 400]);
        let mut spatial = Conv2d::new("s", 5, 5, (15, 1), Padding::valid(), true, &mut r);
        let y = spatial.forward(&y, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 5, 1, 400]);
        let mut de_s = ConvTranspose2d::new("ds", 5, 5, (15, 1), Padding::valid(), true, &mut r);
        let y = de_s.forward(&y, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 5, 15, 400]);
        let mut de_t = ConvTranspose2d::new("dt", 5, 1, (1, 40), Padding::same(1, 40), true, &mut r);
        let y = de_t.forward(&y, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 1, 15, 400]);
    }

    #[test]
    fn kernel_larger_than_input() {
        let mut r = rng();
        let mut conv = Conv2d::<f32>::new("c", 1, 1, (15, 1), Padding::valid(), true, &mut r);
        assert!(conv.forward(&Tensor::zeros([1, 1, 14, 4]), Mode::Train).is_err());
        assert!(conv.forward(&Tensor::zeros([1, 2, 15, 4]), Mode::Train).is_err());
    }

    #[test]
    fn adjoint_identity() {
        // <conv(x), y> = <x, deconv(y)> with shared kernels
        let mut r = rng();
        for (kh, kw, pad, h, w) in [
            (1, 40, Padding::same(1, 40), 15, 400),
            (15, 1, Padding::valid(), 15, 400),
            (3, 4, Padding::same(3, 4), 8, 10),
            (2, 3, Padding::valid(), 6, 7),
        ] {
            let mut conv = Conv2d::<f64>::new("c", 3, 2, (kh, kw), pad, false, &mut r);
            let mut de = ConvTranspose2d::<f64>::new("d", 2, 3, (kh, kw), pad, false, &mut r);
            de.weight.value = conv.weight.value.clone();
            let x = random([2, 3, h, w], &mut r);
            let cx = conv.forward(&x, Mode::Train).unwrap();
            let y = random(cx.shape(), &mut r);
            let dy = de.forward(&y, Mode::Train).unwrap();
            let (lhs, rhs) = (cx.dot(&y), x.dot(&dy));
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_gradients() {
        let mut r = rng();
        for pad in [Padding::same(3, 4), Padding::valid()] {
            let conv = Conv2d::<f64>::new("c", 3, 4, (3, 4), pad, true, &mut r);
            let x = random([2, 3, 8, 10], &mut r);
            let mut probe = ModuleProbe::new(Box::new(conv), x, Mode::Train, 5);
            let rep = grad_check(&mut probe, &GradCheckOptions::exhaustive()).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn deconv_gradients() {
        let mut r = rng();
        for pad in [Padding::same(3, 4), Padding::valid()] {
            let de = ConvTranspose2d::<f64>::new("d", 3, 2, (3, 4), pad, true, &mut r);
            let x = random([2, 3, 8, 10], &mut r);
            let mut probe = ModuleProbe::new(Box::new(de), x, Mode::Train, 6);
            let rep = grad_check(&mut probe, &GradCheckOptions::exhaustive()).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }
}
