//! Minimal deterministic layer stack: 3×3 convolution, batch normalization,
//! ReLU, mean-absolute-error loss and momentum SGD, all in `f64`.
//!
//! Layers keep no hidden state between calls: `forward` takes `&self` and
//! returns whatever the matching `backward` needs. Parameter gradients
//! accumulate into [`Param::grad`].

pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod loss;
mod norm;
mod sgd;

pub use checkpoint::Checkpoint;
pub use conv::Conv2d;
pub use gradcheck::{gradcheck, GradcheckReport, Objective};
pub use loss::l1_loss;
pub use norm::{BatchNorm, NormCache};
pub use sgd::{sgd_step, SgdConfig};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// `batch x channels x height x width`, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("tensor dims must be positive, got {n}x{c}x{h}x{w}")));
        }
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!("{n}x{c}x{h}x{w} tensor needs {} values, got {}", n * c * h * w, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    /// Stacks single images into a batch.
    pub fn from_images(images: &[&crate::Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w, c) = first.shape();
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if img.shape() != (h, w, c) {
                return Err(Error::Shape(format!("batch members differ: {:?} vs {:?}", img.shape(), (h, w, c))));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Self { n: images.len(), c, h, w, data })
    }

    /// Sample `i` as an image.
    pub fn image(&self, i: usize) -> crate::Image {
        crate::Image::new(self.h, self.w, self.c, self.sample(i).to_vec()).expect("tensor samples are finite")
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.c * self.h * self.w;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.c * self.h * self.w;
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Channel plane `(i, ch)`.
    pub fn plane(&self, i: usize, ch: usize) -> &[f64] {
        let p = self.h * self.w;
        let off = (i * self.c + ch) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, i: usize, ch: usize) -> &mut [f64] {
        let p = self.h * self.w;
        let off = (i * self.c + ch) * p;
        &mut self.data[off..off + p]
    }

    /// Channel-wise concatenation `[self, other]`.
    pub fn concat_channels(&self, other: &Tensor4) -> Result<Tensor4> {
        if (self.n, self.h, self.w) != (other.n, other.h, other.w) {
            return Err(Error::Shape(format!("cannot concat {:?} and {:?}", self.shape(), other.shape())));
        }
        let mut out = Tensor4::zeros(self.n, self.c + other.c, self.h, self.w);
        for i in 0..self.n {
            let (a, b) = (self.sample(i), other.sample(i));
            let dst = out.sample_mut(i);
            dst[..a.len()].copy_from_slice(a);
            dst[a.len()..].copy_from_slice(b);
        }
        Ok(out)
    }

    /// Inverse of [`concat_channels`](Self::concat_channels): the first `c` channels and the rest.
    pub fn split_channels(&self, c: usize) -> Result<(Tensor4, Tensor4)> {
        if c == 0 || c >= self.c {
            return Err(Error::Shape(format!("cannot split {} channels at {c}", self.c)));
        }
        let p = self.h * self.w;
        let mut a = Tensor4::zeros(self.n, c, self.h, self.w);
        let mut b = Tensor4::zeros(self.n, self.c - c, self.h, self.w);
        for i in 0..self.n {
            let s = self.sample(i);
            a.sample_mut(i).copy_from_slice(&s[..c * p]);
            b.sample_mut(i).copy_from_slice(&s[c * p..]);
        }
        Ok((a, b))
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("cannot add {:?} to {:?}", other.shape(), self.shape())));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Whether weight decay applies (convolution kernels only).
    pub decay: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Vec<f64>, decay: bool) -> Self {
        let n = value.len();
        Self { name: name.into(), value, grad: vec![0.0; n], momentum: vec![0.0; n], decay }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `max(0, x)` elementwise.
pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes `dy` where the forward *input* was strictly positive.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!("relu backward: {:?} vs {:?}", x.shape(), dy.shape())));
    }
    let mut dx = dy.clone();
    for (d, &xv) in dx.data.iter_mut().zip(&x.data) {
        if xv <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

/// Zero-mean Gaussian draws with standard deviation `gain · sqrt(2 / fan_in)`.
pub fn init_weights<R: Rng>(len: usize, fan_in: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is finite and >= 0");
    (0..len).map(|_| normal.sample(rng)).collect()
}
