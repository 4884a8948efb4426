use super::{Mode, Param, Tensor4};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub scale: Param,
    pub shift: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// What [`BatchNorm::backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    mode: Mode,
    xhat: Tensor4,
    inv_std: Vec<f64>,
    /// Batch statistics (train mode only), used to update running stats.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            scale: Param::new(format!("{name}.scale"), vec![1.0; channels], false),
            shift: Param::new(format!("{name}.shift"), vec![0.0; channels], false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, NormCache)> {
        let (n, c, h, w) = x.shape();
        if c != self.channels {
            return Err(Error::Shape(format!("{} expects {} channels, got {c}", self.scale.name, self.channels)));
        }
        let m = (n * h * w) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                if n * h * w < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "{}: batch statistics need more than one sample per channel",
                        self.scale.name
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mu = (0..n).map(|i| x.plane(i, ch).iter().sum::<f64>()).sum::<f64>() / m;
                    let v = (0..n)
                        .map(|i| x.plane(i, ch).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
                        .sum::<f64>()
                        / m;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for i in 0..n {
            for ch in 0..c {
                let (mu, is, g, b) = (mean[ch], inv_std[ch], self.scale.value[ch], self.shift.value[ch]);
                for (xh, yv) in xhat.plane_mut(i, ch).iter_mut().zip(y.plane_mut(i, ch)) {
                    *xh = (*xh - mu) * is;
                    *yv = g * *xh + b;
                }
            }
        }
        let (batch_mean, batch_var) = if mode == Mode::Train { (mean, var) } else { (vec![], vec![]) };
        Ok((y, NormCache { mode, xhat, inv_std, batch_mean, batch_var }))
    }

    pub fn backward(&mut self, cache: &NormCache, dy: &Tensor4) -> Result<Tensor4> {
        let (n, c, h, w) = dy.shape();
        if cache.xhat.shape() != dy.shape() {
            return Err(Error::Shape(format!("{}: upstream gradient has shape {:?}", self.scale.name, dy.shape())));
        }
        let m = (n * h * w) as f64;
        let mut dx = Tensor4::zeros(n, c, h, w);
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for i in 0..n {
                for (d, xh) in dy.plane(i, ch).iter().zip(cache.xhat.plane(i, ch)) {
                    sum_dy += d;
                    sum_dy_xhat += d * xh;
                }
            }
            self.shift.grad[ch] += sum_dy;
            self.scale.grad[ch] += sum_dy_xhat;
            let g = self.scale.value[ch] * cache.inv_std[ch];
            for i in 0..n {
                let out = dx.plane_mut(i, ch);
                let (dyp, xhp) = (dy.plane(i, ch), cache.xhat.plane(i, ch));
                match cache.mode {
                    Mode::Train => {
                        for ((o, d), xh) in out.iter_mut().zip(dyp).zip(xhp) {
                            *o = g * (d - sum_dy / m - xh * sum_dy_xhat / m);
                        }
                    }
                    Mode::Eval => {
                        for (o, d) in out.iter_mut().zip(dyp) {
                            *o = g * d;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    /// `running ← 0.9 · running + 0.1 · batch`.
    pub fn update_running(&mut self, cache: &NormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for ch in 0..self.channels {
            self.running_mean[ch] = BN_MOMENTUM * self.running_mean[ch] + (1.0 - BN_MOMENTUM) * cache.batch_mean[ch];
            self.running_var[ch] = BN_MOMENTUM * self.running_var[ch] + (1.0 - BN_MOMENTUM) * cache.batch_var[ch];
        }
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.scale, &self.shift]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.scale, &mut self.shift]
    }
}
