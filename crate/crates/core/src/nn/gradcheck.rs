//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{relu_backward, relu_forward, BatchNorm, Conv2d, Mode, NormCache, Param, Tensor4};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;

/// A scalar function of an input tensor and a set of parameters.
pub trait Objective {
    fn value(&self, input: &Tensor4) -> Result<f64>;

    /// Returns the value and `∂/∂input` (if the objective exposes it) and
    /// overwrites every [`Param::grad`] with the parameter gradient.
    fn gradient(&mut self, input: &Tensor4) -> Result<(f64, Option<Tensor4>)>;

    fn params_mut(&mut self) -> Vec<&mut Param>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub count: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradcheckEntry> {
        self.entries.iter().filter(move |e| e.max_rel_error > self.tolerance)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(f, "{:<28} n={:<5} max_rel={:.3e} max_abs={:.3e}", e.name, e.count, e.max_rel_error, e.max_abs_error)?;
        }
        write!(f, "max relative error {:.3e} (tolerance {:.1e}): {}", self.max_rel_error(), self.tolerance, if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Compares every parameter entry (and the input gradient, when provided)
/// with central differences of step [`FD_STEP`].
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, s)` where `s`
/// is `1e-3` times the largest analytic gradient magnitude. Entries whose
/// true gradient vanishes (e.g. a convolution bias feeding batch
/// normalization) would otherwise be scored on finite-difference roundoff
/// alone.
pub fn gradcheck<O: Objective>(obj: &mut O, input: &Tensor4, tolerance: f64) -> Result<GradcheckReport> {
    let (_, input_grad) = obj.gradient(input)?;
    let analytic: Vec<(String, Vec<f64>)> = obj.params_mut().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let scale = analytic
        .iter()
        .flat_map(|(_, g)| g.iter())
        .chain(input_grad.iter().flat_map(|g| g.data().iter()))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let compare = |a: f64, n: f64, e: &mut GradcheckEntry| {
        let abs = (a - n).abs();
        e.max_abs_error = e.max_abs_error.max(abs);
        e.max_rel_error = e.max_rel_error.max(abs / a.abs().max(n.abs()).max(floor));
    };
    let mut entries = Vec::new();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let mut e = GradcheckEntry { name: name.clone(), count: grad.len(), max_rel_error: 0.0, max_abs_error: 0.0 };
        for (j, &a) in grad.iter().enumerate() {
            let orig = obj.params_mut()[pi].value[j];
            obj.params_mut()[pi].value[j] = orig + FD_STEP;
            let plus = obj.value(input)?;
            obj.params_mut()[pi].value[j] = orig - FD_STEP;
            let minus = obj.value(input)?;
            obj.params_mut()[pi].value[j] = orig;
            compare(a, (plus - minus) / (2.0 * FD_STEP), &mut e);
        }
        entries.push(e);
    }
    if let Some(g) = input_grad {
        let mut e = GradcheckEntry { name: "input".into(), count: g.data().len(), max_rel_error: 0.0, max_abs_error: 0.0 };
        let mut x = input.clone();
        for (j, &a) in g.data().iter().enumerate() {
            let orig = x.data()[j];
            x.data_mut()[j] = orig + FD_STEP;
            let plus = obj.value(&x)?;
            x.data_mut()[j] = orig - FD_STEP;
            let minus = obj.value(&x)?;
            x.data_mut()[j] = orig;
            compare(a, (plus - minus) / (2.0 * FD_STEP), &mut e);
        }
        entries.push(e);
    }
    Ok(GradcheckReport { tolerance, entries })
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm),
    Relu,
}

enum LayerCache {
    Input(Tensor4),
    Norm(NormCache),
}

/// A plain feed-forward chain of layers scored by a fixed random linear
/// functional `Σ r ∘ y`. Used to exercise layer backward passes in isolation.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
    pub mode: Mode,
    projection_seed: u64,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, mode: Mode, projection_seed: u64) -> Self {
        Self { layers, mode, projection_seed }
    }

    /// `conv(in→width) → norm → relu → conv(width→out)`
    pub fn conv_norm_relu_conv(in_ch: usize, width: usize, out_ch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut norm = BatchNorm::new("norm1", width);
        // non-trivial scale/shift so their gradients are exercised
        for (i, (s, b)) in norm.scale.value.iter_mut().zip(norm.shift.value.iter_mut()).enumerate() {
            *s = 1.0 + 0.1 * i as f64;
            *b = 0.05 * i as f64 - 0.1;
        }
        let mut c1 = Conv2d::new("conv1", in_ch, width, 1.0, &mut rng);
        let mut c2 = Conv2d::new("conv2", width, out_ch, 1.0, &mut rng);
        for b in c1.bias.value.iter_mut().chain(c2.bias.value.iter_mut()) {
            *b = rng.random_range(-0.1..0.1);
        }
        Self::new(vec![Layer::Conv(c1), Layer::Norm(norm), Layer::Relu, Layer::Conv(c2)], Mode::Train, seed ^ 0x5eed)
    }

    fn projection(&self, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x)?,
                Layer::Norm(n) => n.forward(&x, self.mode)?.0,
                Layer::Relu => relu_forward(&x),
            };
        }
        Ok(x)
    }
}

impl Objective for LayerStack {
    fn value(&self, input: &Tensor4) -> Result<f64> {
        let y = self.forward(input)?;
        Ok(y.data().iter().zip(self.projection(y.data().len())).map(|(a, b)| a * b).sum())
    }

    fn gradient(&mut self, input: &Tensor4) -> Result<(f64, Option<Tensor4>)> {
        for p in self.params_mut() {
            p.zero_grad();
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Conv(c) => (c.forward(&x)?, LayerCache::Input(x)),
                Layer::Norm(n) => {
                    let (y, cache) = n.forward(&x, self.mode)?;
                    (y, LayerCache::Norm(cache))
                }
                Layer::Relu => (relu_forward(&x), LayerCache::Input(x)),
            };
            caches.push(cache);
            x = y;
        }
        let r = self.projection(x.data().len());
        let value = x.data().iter().zip(&r).map(|(a, b)| a * b).sum();
        let (n, c, h, w) = x.shape();
        let mut dy = Tensor4::new(n, c, h, w, r)?;
        for (layer, cache) in self.layers.iter_mut().zip(caches.iter()).rev() {
            dy = match (layer, cache) {
                (Layer::Conv(c), LayerCache::Input(x)) => c.backward(x, &dy, true)?.expect("input gradient requested"),
                (Layer::Norm(n), LayerCache::Norm(cache)) => n.backward(cache, &dy)?,
                (Layer::Relu, LayerCache::Input(x)) => relu_backward(x, &dy)?,
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
        Ok((value, Some(dy)))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params_mut()),
                Layer::Norm(n) => out.extend(n.params_mut()),
                Layer::Relu => {}
            }
        }
        out
    }
}

/// Wraps an objective and perturbs its reported gradients; the checker must
/// flag it.
pub struct Corrupted<O>(pub O);

impl<O: Objective> Objective for Corrupted<O> {
    fn value(&self, input: &Tensor4) -> Result<f64> {
        self.0.value(input)
    }

    fn gradient(&mut self, input: &Tensor4) -> Result<(f64, Option<Tensor4>)> {
        let out = self.0.gradient(input)?;
        if let Some(p) = self.0.params_mut().into_iter().next() {
            p.grad[0] = 1.5 * p.grad[0] + 1e-3;
        }
        Ok(out)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.params_mut()
    }
}

pub fn random_input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::new(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("random tensor is finite")
}
