//! Image containers, discrete derivative operators, degradation, metrics and I/O.
//!
//! Samples are `f64` in the nominal range `[0, 255]`, stored planar: one
//! row-major plane per channel.

mod io;
mod metrics;
mod noise;
mod ops;
mod patches;
mod resample;

pub use io::{encode_image, load_image, save_image, ImageFormat};
pub use metrics::{bmp, psnr, ssim, MetricReport, SSIM_C1, SSIM_C2, SSIM_WINDOW};
pub use noise::{add_gaussian_noise, NoiseSpec};
pub use ops::{
    gradient, gradient_adjoint, gradient_adjoint_plane, gradient_periodic,
    gradient_periodic_adjoint, gradient_plane, inner,
};
pub use patches::{sample_patches, PatchSet};
pub use resample::{resample, Resample};

use crate::{Error, Result};

/// Dense multi-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image sample {i}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "image dimensions must be positive");
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Builds a single-channel image from `f(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(height, width, 1);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(y, x);
            }
        }
        img
    }

    /// Stacks single-channel planes into one multi-channel image.
    pub fn from_planes(height: usize, width: usize, planes: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * planes.len());
        for p in planes {
            if p.len() != height * width {
                return Err(Error::Shape("plane size mismatch".into()));
            }
            data.extend_from_slice(p);
        }
        Self::new(height, width, planes.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Crop of `size x size` pixels whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Image> {
        if y + height > self.height || x + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({y}, {x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image::zeros(height, width, self.channels);
        for c in 0..self.channels {
            for r in 0..height {
                let src = (c * self.height + y + r) * self.width + x;
                let dst = (c * height + r) * width;
                out.data[dst..dst + width].copy_from_slice(&self.data[src..src + width]);
            }
        }
        Ok(out)
    }

    /// Mean over all samples.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Forward-difference gradient of an image: one `dx`/`dy` plane per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    height: usize,
    width: usize,
    channels: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        let n = height * width * channels;
        Self { height, width, channels, dx: vec![0.0; n], dy: vec![0.0; n] }
    }

    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        dx: Vec<f64>,
        dy: Vec<f64>,
    ) -> Result<Self> {
        let n = height * width * channels;
        if n == 0 || dx.len() != n || dy.len() != n {
            return Err(Error::Shape(format!(
                "gradient field {height}x{width}x{channels} needs {n} samples per component"
            )));
        }
        Ok(Self { height, width, channels, dx, dy })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn dx_plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.dx[c * n..(c + 1) * n]
    }

    pub fn dy_plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.dy[c * n..(c + 1) * n]
    }

    /// Applies `f` to every `dx` and `dy` sample independently.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GradientField {
        GradientField {
            dx: self.dx.iter().map(|&v| f(v)).collect(),
            dy: self.dy.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// `Σ dx² + dy²`, square rooted.
    pub fn norm(&self) -> f64 {
        self.dx.iter().chain(&self.dy).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Per-pixel vector magnitude `sqrt(dx² + dy²)` as an image.
    pub fn magnitude(&self) -> Image {
        let data = self.dx.iter().zip(&self.dy).map(|(a, b)| a.hypot(*b)).collect();
        Image { height: self.height, width: self.width, channels: self.channels, data }
    }

    pub fn sub(&self, other: &GradientField) -> GradientField {
        assert_eq!(self.shape(), other.shape());
        GradientField {
            dx: self.dx.iter().zip(&other.dx).map(|(a, b)| a - b).collect(),
            dy: self.dy.iter().zip(&other.dy).map(|(a, b)| a - b).collect(),
            ..*self
        }
    }
}
