use rand::Rng;

use crate::nn::{relu_backward, relu_forward, BatchNorm, Conv2d, Mode, NormCache, Param, Tensor4};
use crate::{Error, Result};

use super::{ArchConfig, Concat};

/// `conv → [norm → relu]`
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub conv: Conv2d,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Tensor4,
    norm: Option<(NormCache, Tensor4)>,
}

impl Block {
    fn new<R: Rng>(name: &str, cin: usize, cout: usize, hidden: bool, gain: f64, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, gain, rng),
            norm: hidden.then(|| BatchNorm::new(&format!("{name}.norm"), cout)),
        }
    }

    fn forward(&self, x: Tensor4, mode: Mode) -> Result<(Tensor4, BlockCache)> {
        let y = self.conv.forward(&x)?;
        match &self.norm {
            Some(norm) => {
                let (z, cache) = norm.forward(&y, mode)?;
                Ok((relu_forward(&z), BlockCache { input: x, norm: Some((cache, z)) }))
            }
            None => Ok((y, BlockCache { input: x, norm: None })),
        }
    }

    fn backward(&mut self, cache: &BlockCache, dy: Tensor4, need_input_grad: bool) -> Result<Option<Tensor4>> {
        let dconv = match (&mut self.norm, &cache.norm) {
            (Some(norm), Some((ncache, pre))) => norm.backward(ncache, &relu_backward(pre, &dy)?)?,
            (None, None) => dy,
            _ => unreachable!("cache matches block kind"),
        };
        self.conv.backward(&cache.input, &dconv, need_input_grad)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.conv.params_mut().into_iter().collect();
        if let Some(n) = &mut self.norm {
            out.extend(n.params_mut());
        }
        out
    }

    fn update_running(&mut self, cache: &BlockCache) {
        if let (Some(n), Some((c, _))) = (&mut self.norm, &cache.norm) {
            n.update_running(c);
        }
    }
}

/// One cascade stage: aggregation trunk emitting `v`, γ branch tapping a
/// hidden trunk layer, and an optional guidance branch.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationNet {
    pub trunk: Vec<Block>,
    pub gamma: Vec<Block>,
    pub guide: Vec<Block>,
    arch: ArchConfig,
}

#[derive(Debug, Clone)]
pub struct NetCache {
    trunk: Vec<BlockCache>,
    gamma: Vec<BlockCache>,
    guide: Vec<BlockCache>,
    /// γ before the final ReLU.
    pub gamma_pre: Tensor4,
}

impl IterationNet {
    pub fn new<R: Rng>(prefix: &str, arch: &ArchConfig, rng: &mut R) -> Self {
        let joint = arch.task.is_joint();
        let c = arch.channels;
        let mut guide = Vec::new();
        if joint && arch.concat == Concat::Halfway {
            let mut cin = arch.guide_channels;
            for l in 0..3 {
                guide.push(Block::new(&format!("{prefix}.guide{l}"), cin, arch.guide_width, true, 1.0, rng));
                cin = arch.guide_width;
            }
        }
        let mut trunk = Vec::with_capacity(arch.depth);
        let mut cin = if joint && arch.concat == Concat::Early { c + arch.guide_channels } else { c };
        for l in 0..arch.depth {
            if !guide.is_empty() && l == arch.concat_after() {
                cin += arch.guide_width;
            }
            let last = l + 1 == arch.depth;
            let (cout, gain) = if last { (2 * c, arch.head_gain) } else { (arch.width, 1.0) };
            trunk.push(Block::new(&format!("{prefix}.trunk{l}"), cin, cout, !last, gain, rng));
            cin = cout;
        }
        let mut gamma = vec![Block::new(&format!("{prefix}.gamma0"), arch.width, arch.gamma_width, true, 1.0, rng)];
        let mut head = Block::new(&format!("{prefix}.gamma1"), arch.gamma_width, 1, false, arch.head_gain, rng);
        head.conv.bias.value.fill(arch.gamma_bias);
        gamma.push(head);
        Self { trunk, gamma, guide, arch: arch.clone() }
    }

    /// Returns `v` (`2C` channels: all `dx` planes, then all `dy` planes),
    /// the rectified γ (1 channel), and the cache for [`backward`](Self::backward).
    pub fn forward(&self, u: &Tensor4, g: Option<&Tensor4>, mode: Mode) -> Result<(Tensor4, Tensor4, NetCache)> {
        let joint = self.arch.task.is_joint();
        if u.channels() != self.arch.channels {
            return Err(Error::Shape(format!("network expects {} channels, got {}", self.arch.channels, u.channels())));
        }
        let g = match (joint, g) {
            (true, Some(g)) => {
                let (n, c, h, w) = g.shape();
                if (n, h, w) != (u.batch(), u.height(), u.width()) || c != self.arch.guide_channels {
                    return Err(Error::Shape(format!("guidance {:?} does not match input {:?}", g.shape(), u.shape())));
                }
                Some(g)
            }
            (false, None) => None,
            (true, None) => return Err(Error::InvalidArgument("joint model needs a guidance image".into())),
            (false, Some(_)) => return Err(Error::InvalidArgument("denoising model takes no guidance image".into())),
        };
        let mut guide_caches = Vec::with_capacity(self.guide.len());
        let mut guide_feat = None;
        if let (Some(g), false) = (g, self.guide.is_empty()) {
            let mut x = g.clone();
            for b in &self.guide {
                let (y, c) = b.forward(x, mode)?;
                guide_caches.push(c);
                x = y;
            }
            guide_feat = Some(x);
        }
        let mut x = match (g, self.arch.concat) {
            (Some(g), Concat::Early) => u.concat_channels(g)?,
            _ => u.clone(),
        };
        let mut trunk_caches = Vec::with_capacity(self.trunk.len());
        let mut tap = None;
        for (l, b) in self.trunk.iter().enumerate() {
            if let (Some(feat), true) = (&guide_feat, l == self.arch.concat_after()) {
                x = x.concat_channels(feat)?;
            }
            let (y, c) = b.forward(x, mode)?;
            trunk_caches.push(c);
            x = y;
            if l + 1 == self.arch.gamma_tap() {
                tap = Some(x.clone());
            }
        }
        let mut t = tap.expect("tap layer lies inside the trunk");
        let mut gamma_caches = Vec::with_capacity(self.gamma.len());
        for b in &self.gamma {
            let (y, c) = b.forward(t, mode)?;
            gamma_caches.push(c);
            t = y;
        }
        let gamma = relu_forward(&t);
        Ok((x, gamma, NetCache { trunk: trunk_caches, gamma: gamma_caches, guide: guide_caches, gamma_pre: t }))
    }

    /// `dgamma_pre` is the gradient with respect to γ *before* its ReLU.
    /// Returns `dL/du` when requested.
    pub fn backward(
        &mut self,
        cache: &NetCache,
        dv: Tensor4,
        dgamma_pre: Tensor4,
        need_input_grad: bool,
    ) -> Result<Option<Tensor4>> {
        let mut dt = dgamma_pre;
        for (b, c) in self.gamma.iter_mut().zip(&cache.gamma).rev() {
            dt = b.backward(c, dt, true)?.expect("input gradient requested");
        }
        let mut dtap = Some(dt);
        let early = self.arch.task.is_joint() && self.arch.concat == Concat::Early;
        let mut dx = Some(dv);
        let mut dguide = None;
        for l in (0..self.trunk.len()).rev() {
            let mut d = dx.take().expect("set by the previous layer");
            if l + 1 == self.arch.gamma_tap() {
                d.add_assign(&dtap.take().expect("tap visited once"))?;
            }
            dx = self.trunk[l].backward(&cache.trunk[l], d, l > 0 || need_input_grad)?;
            if !self.guide.is_empty() && l == self.arch.concat_after() {
                let (dtrunk, dg) = dx.take().expect("hidden layers pass gradients").split_channels(self.arch.width)?;
                dx = Some(dtrunk);
                dguide = Some(dg);
            }
        }
        if let Some(mut dg) = dguide {
            // the guidance image itself needs no gradient
            for (i, (b, c)) in self.guide.iter_mut().zip(&cache.guide).enumerate().rev() {
                match b.backward(c, dg, i > 0)? {
                    Some(d) => dg = d,
                    None => break,
                }
            }
        }
        match dx {
            Some(d) if early => Ok(Some(d.split_channels(self.arch.channels)?.0)),
            other => Ok(other),
        }
    }

    pub fn update_running(&mut self, cache: &NetCache) {
        for (b, c) in self.guide.iter_mut().zip(&cache.guide) {
            b.update_running(c);
        }
        for (b, c) in self.trunk.iter_mut().zip(&cache.trunk) {
            b.update_running(c);
        }
        for (b, c) in self.gamma.iter_mut().zip(&cache.gamma) {
            b.update_running(c);
        }
    }

    /// Declaration order: guidance, trunk, γ branch.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.guide.iter().chain(&self.trunk).chain(&self.gamma)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block> {
        self.guide.iter_mut().chain(self.trunk.iter_mut()).chain(self.gamma.iter_mut())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks_mut().flat_map(|b| b.params_mut()).collect()
    }
}
