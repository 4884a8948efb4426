use super::Param;
use crate::{Error, Result};

/// Momentum SGD settings and a step-decay learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 1e-4, momentum: 0.9, weight_decay: 5e-4, batch_size: 16, epochs: 20, lr_decay: 0.5, lr_step: 5 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be >= 0".into()));
        }
        if self.batch_size == 0 || self.lr_step == 0 || !(self.lr_decay > 0.0) {
            return Err(Error::Config("batch size, lr step and lr decay must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }
}

/// `m ← μ m + grad + wd · param` (wd only where [`Param::decay`]), then
/// `param ← param - lr · m`. Fails without touching anything if a gradient
/// is not finite.
pub fn sgd_step(params: &mut [&mut Param], lr: f64, cfg: &SgdConfig) -> Result<()> {
    for p in params.iter() {
        if p.grad.len() != p.value.len() || p.momentum.len() != p.value.len() {
            return Err(Error::Shape(format!("{}: gradient/momentum length mismatch", p.name)));
        }
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {} at index {i}", p.name)));
        }
    }
    for p in params.iter_mut() {
        let wd = if p.decay { cfg.weight_decay } else { 0.0 };
        let Param { value, grad, momentum, .. } = &mut **p;
        for ((v, g), m) in value.iter_mut().zip(grad.iter()).zip(momentum.iter_mut()) {
            *m = cfg.momentum * *m + g + wd * *v;
            *v -= lr * *m;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> SgdConfig {
        SgdConfig { weight_decay: wd, ..SgdConfig::default() }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Param::new("p", vec![1.0, -2.0], true);
        sgd_step(&mut [&mut p], 0.1, &cfg(0.0)).unwrap();
        assert_eq!(p.value, vec![1.0, -2.0]);
    }

    #[test]
    fn single_step() {
        let mut p = Param::new("p", vec![1.0, -2.0], true);
        p.grad = vec![0.25, 0.5];
        sgd_step(&mut [&mut p], 1.0, &cfg(0.0)).unwrap();
        assert_eq!(p.value, vec![0.75, -2.5]);
    }

    #[test]
    fn two_momentum_steps() {
        let (g, lr) = (0.3, 0.01);
        let mut p = Param::new("p", vec![0.0], false);
        p.grad = vec![g];
        sgd_step(&mut [&mut p], lr, &cfg(0.0)).unwrap();
        sgd_step(&mut [&mut p], lr, &cfg(0.0)).unwrap();
        assert!((p.value[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only_where_enabled() {
        let mut w = Param::new("w", vec![2.0], true);
        let mut b = Param::new("b", vec![2.0], false);
        sgd_step(&mut [&mut w, &mut b], 1.0, &cfg(0.5)).unwrap();
        assert_eq!(w.value, vec![1.0]);
        assert_eq!(b.value, vec![2.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Param::new("conv3.weight", vec![1.0], true);
        p.grad = vec![f64::NAN];
        let err = sgd_step(&mut [&mut p], 1.0, &cfg(0.0)).unwrap_err();
        assert!(err.to_string().contains("conv3.weight"));
        assert_eq!(p.value, vec![1.0]);
    }

    #[test]
    fn lr_schedule() {
        let c = SgdConfig::default();
        assert_eq!(c.lr_at(4), 1e-4);
        assert_eq!(c.lr_at(5), 0.5e-4);
        assert_eq!(c.lr_at(19), 1e-4 / 8.0);
    }
}
