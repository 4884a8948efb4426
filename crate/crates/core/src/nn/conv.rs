use rand::Rng;

use super::{init_weights, Param, Tensor4};
use crate::{Error, Result};

/// 3×3 convolution, stride 1, zero padding 1.
///
/// Weights are laid out `[out][in][ky][kx]`. Each sample is lowered to a
/// `(in·9) x (h·w)` column matrix so forward and both backward products are
/// single GEMMs.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// He-normal weights scaled by `gain`, zero bias.
    pub fn new<R: Rng>(name: &str, in_channels: usize, out_channels: usize, gain: f64, rng: &mut R) -> Self {
        let k = in_channels * 9;
        let w = init_weights(out_channels * k, k, gain, rng);
        Self::from_parts(name, in_channels, out_channels, w, vec![0.0; out_channels])
    }

    pub fn from_parts(name: &str, in_channels: usize, out_channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weight.len(), out_channels * in_channels * 9);
        assert_eq!(bias.len(), out_channels);
        Self {
            in_channels,
            out_channels,
            weight: Param::new(format!("{name}.weight"), weight, true),
            bias: Param::new(format!("{name}.bias"), bias, false),
        }
    }

    fn check(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} input channels, got {}",
                self.weight.name,
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check(x)?;
        let (n, _, h, w) = x.shape();
        let hw = h * w;
        let k = self.in_channels * 9;
        let mut y = Tensor4::zeros(n, self.out_channels, h, w);
        let mut cols = vec![0.0; k * hw];
        for i in 0..n {
            im2col(x.sample(i), self.in_channels, h, w, &mut cols);
            let out = y.sample_mut(i);
            for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
                plane.fill(self.bias.value[o]);
            }
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels, k, hw,
                    1.0, self.weight.value.as_ptr(), k as isize, 1,
                    cols.as_ptr(), hw as isize, 1,
                    1.0, out.as_mut_ptr(), hw as isize, 1,
                );
            }
        }
        Ok(y)
    }

    /// Accumulates weight and bias gradients and returns `dL/dx` when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4, need_input_grad: bool) -> Result<Option<Tensor4>> {
        self.check(x)?;
        let (n, _, h, w) = x.shape();
        if dy.shape() != (n, self.out_channels, h, w) {
            return Err(Error::Shape(format!("{}: upstream gradient has shape {:?}", self.weight.name, dy.shape())));
        }
        let hw = h * w;
        let k = self.in_channels * 9;
        let mut cols = vec![0.0; k * hw];
        let mut dcols = vec![0.0; k * hw];
        let mut dx = need_input_grad.then(|| Tensor4::zeros(n, self.in_channels, h, w));
        for i in 0..n {
            let g = dy.sample(i);
            for (o, plane) in g.chunks_exact(hw).enumerate() {
                self.bias.grad[o] += plane.iter().sum::<f64>();
            }
            im2col(x.sample(i), self.in_channels, h, w, &mut cols);
            unsafe {
                // dW += dy · colsᵀ
                matrixmultiply::dgemm(
                    self.out_channels, hw, k,
                    1.0, g.as_ptr(), hw as isize, 1,
                    cols.as_ptr(), 1, hw as isize,
                    1.0, self.weight.grad.as_mut_ptr(), k as isize, 1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                unsafe {
                    // dcols = Wᵀ · dy
                    matrixmultiply::dgemm(
                        k, self.out_channels, hw,
                        1.0, self.weight.value.as_ptr(), 1, k as isize,
                        g.as_ptr(), hw as isize, 1,
                        0.0, dcols.as_mut_ptr(), hw as isize, 1,
                    );
                }
                col2im(&dcols, self.in_channels, h, w, dx.sample_mut(i));
            }
        }
        Ok(dx)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Row `(c·9 + ky·3 + kx)` holds `x[c, y + ky - 1, x + kx - 1]` (zero outside).
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column rows back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, x: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::new(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let conv = Conv2d::from_parts("id", 1, 1, k, vec![0.0]);
        let x = random_tensor(2, 1, 5, 7, 1);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn box_kernel_on_ones() {
        let conv = Conv2d::from_parts("box", 1, 1, vec![1.0; 9], vec![0.0]);
        let x = Tensor4::new(1, 1, 4, 4, vec![1.0; 16]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.plane(0, 0)[5], 9.0);
        assert_eq!(y.plane(0, 0)[0], 4.0);
        assert_eq!(y.plane(0, 0)[1], 6.0);
    }

    #[test]
    fn channel_mismatch() {
        let conv = Conv2d::new("c", 2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(conv.forward(&random_tensor(1, 1, 3, 3, 0)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut conv = Conv2d::new("c", 2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let x = random_tensor(2, 2, 4, 5, 2);
        let dx = conv.backward(&x, &Tensor4::zeros(2, 3, 4, 5), true).unwrap().unwrap();
        assert!(dx.data().iter().chain(&conv.weight.grad).chain(&conv.bias.grad).all(|&v| v == 0.0));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 5);
        let x = random_tensor(1, c, h, w, 3);
        let y: Vec<f64> = random_tensor(1, c * 9, h, w, 4).data().to_vec();
        let mut cols = vec![0.0; c * 9 * h * w];
        im2col(x.data(), c, h, w, &mut cols);
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
