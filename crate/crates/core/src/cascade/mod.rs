//! The learned cascade.
//!
//! Each of the K stages runs an [`IterationNet`] on the current estimate
//! `u^k` to predict a gradient field `v` and a fidelity map `γ`, then solves
//! `(Γ + DᵀD) u^{k+1} = Γf + Dᵀv`, always anchored to the input `f`. The
//! backward pass reuses each stage's factorization for both the `v` and `γ`
//! adjoints, so the whole chain trains end to end.
//!
//! Images enter and leave in their native range; internally they are divided
//! by [`ArchConfig::data_range`].

mod forward;
mod net;
mod train;

pub use forward::{
    cascade_backward, cascade_forward, CascadeCache, CascadeObjective, ReconstructObjective, StageCache,
};
pub use net::{Block, IterationNet, NetCache};
pub use train::{default_sgd, evaluate, infer, infer_stages, train, EpochRecord, TrainOptions, TrainRun};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Checkpoint, Param};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Denoise,
    /// Depth upsampling guided by a registered color image.
    SrDepth,
}

impl Task {
    pub fn is_joint(self) -> bool {
        self == Task::SrDepth
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::SrDepth => "sr-depth",
        }
    }

    /// Members per training patch: `(input, target)` or `(input, guidance, target)`.
    pub fn arity(self) -> usize {
        if self.is_joint() {
            3
        } else {
            2
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "sr-depth" | "joint" => Ok(Task::SrDepth),
            _ => Err(Error::Config(format!("unknown task {s:?} (expected denoise or sr-depth)"))),
        }
    }
}

/// Where guidance features enter the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Concat {
    /// Guidance features join the trunk after its third layer.
    Halfway,
    /// The raw guidance image is stacked onto the input.
    Early,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub task: Task,
    pub k: usize,
    /// Trunk convolution count.
    pub depth: usize,
    /// Hidden trunk channels.
    pub width: usize,
    /// Image channels.
    pub channels: usize,
    pub guide_channels: usize,
    pub guide_width: usize,
    pub gamma_width: usize,
    pub concat: Concat,
    /// Init scale of the two output convolutions relative to He init.
    pub head_gain: f64,
    /// Initial bias of the γ output (before its ReLU).
    pub gamma_bias: f64,
    /// The trunk predicts a correction to `∇u` rather than `v` itself.
    #[serde(default)]
    pub residual_v: bool,
    pub data_range: f64,
}

impl ArchConfig {
    /// K = 2, depth 6, width 16.
    ///
    /// For depth upsampling the input is already a usable estimate, so the
    /// trunk starts as a small correction to its gradient and γ starts high.
    pub fn desk(task: Task) -> Self {
        let joint = task.is_joint();
        Self {
            task,
            k: 2,
            depth: 6,
            width: 16,
            channels: 1,
            guide_channels: 3,
            guide_width: 8,
            gamma_width: 8,
            concat: Concat::Halfway,
            head_gain: if joint { 0.01 } else { 0.1 },
            gamma_bias: if joint { 3.0 } else { 0.1 },
            residual_v: joint,
            data_range: 255.0,
        }
    }

    /// K = 3, depth 10, width 64, 32-channel γ and guidance branches.
    pub fn full(task: Task) -> Self {
        Self { k: 3, depth: 10, width: 64, guide_width: 32, gamma_width: 32, ..Self::desk(task) }
    }

    /// K = 2, depth 3, width 4; for gradient verification.
    pub fn tiny(task: Task) -> Self {
        Self { k: 2, depth: 3, width: 4, guide_width: 2, gamma_width: 2, ..Self::desk(task) }
    }

    /// 1-based trunk layer whose output feeds the γ branch (8 of 10).
    pub fn gamma_tap(&self) -> usize {
        self.depth.saturating_sub(2).max(1)
    }

    /// Index of the trunk layer that consumes the guidance features.
    pub fn concat_after(&self) -> usize {
        3.min(self.depth - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("architecture: {m}")));
        if self.k == 0 {
            return bad("K must be >= 1");
        }
        if self.depth < 2 {
            return bad("trunk depth must be >= 2");
        }
        if self.width == 0 || self.channels == 0 || self.gamma_width == 0 {
            return bad("widths and channel counts must be positive");
        }
        if self.task.is_joint() && (self.guide_channels == 0 || self.guide_width == 0) {
            return bad("joint task needs guidance channels and width");
        }
        if !(self.data_range > 0.0 && self.data_range.is_finite()) {
            return bad("data_range must be positive");
        }
        if !(self.head_gain >= 0.0 && self.head_gain.is_finite() && self.gamma_bias.is_finite()) {
            return bad("head_gain must be >= 0 and gamma_bias finite");
        }
        Ok(())
    }

    fn descriptor(&self) -> Vec<(String, String)> {
        let concat = match self.concat {
            Concat::Halfway => "halfway",
            Concat::Early => "early",
        };
        [
            ("task", self.task.name().to_string()),
            ("k", self.k.to_string()),
            ("depth", self.depth.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("guide_channels", self.guide_channels.to_string()),
            ("guide_width", self.guide_width.to_string()),
            ("gamma_width", self.gamma_width.to_string()),
            ("gamma_tap", self.gamma_tap().to_string()),
            ("concat", concat.to_string()),
            ("head_gain", format!("{:e}", self.head_gain)),
            ("gamma_bias", format!("{:e}", self.gamma_bias)),
            ("residual_v", self.residual_v.to_string()),
            ("data_range", format!("{:e}", self.data_range)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let concat = match ck.get("concat") {
            Some("halfway") => Concat::Halfway,
            Some("early") => Concat::Early,
            other => return Err(Error::Format(format!("checkpoint has bad concat mode {other:?}"))),
        };
        let task: Task = ck.parse::<String>("task")?.parse().map_err(|_| Error::Format("checkpoint has bad task".into()))?;
        let arch = Self {
            task,
            k: ck.parse("k")?,
            depth: ck.parse("depth")?,
            width: ck.parse("width")?,
            channels: ck.parse("channels")?,
            guide_channels: ck.parse("guide_channels")?,
            guide_width: ck.parse("guide_width")?,
            gamma_width: ck.parse("gamma_width")?,
            concat,
            head_gain: ck.parse("head_gain")?,
            gamma_bias: ck.parse("gamma_bias")?,
            residual_v: ck.get("residual_v").map_or(Ok(false), |_| ck.parse("residual_v"))?,
            data_range: ck.parse("data_range")?,
        };
        arch.validate().map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
        Ok(arch)
    }
}

/// K independently parameterized stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub arch: ArchConfig,
    pub nets: Vec<IterationNet>,
}

impl CascadeModel {
    /// Draws all weights from one seeded stream in declaration order.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = (0..arch.k).map(|k| IterationNet::new(&format!("it{k}"), &arch, &mut rng)).collect();
        Ok(Self { arch, nets })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.nets.iter_mut().flat_map(|n| n.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().flat_map(|n| n.blocks()).map(|b| {
            b.conv.weight.len() + b.conv.bias.len() + b.norm.as_ref().map_or(0, |n| 2 * n.channels)
        }).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Rounds every parameter, momentum buffer and running statistic to
    /// `f32`, so a checkpoint captures the training state exactly.
    pub fn quantize(&mut self) {
        let q = |v: &mut f64| *v = *v as f32 as f64;
        for net in &mut self.nets {
            for b in net.blocks_mut() {
                for p in b.conv.params_mut() {
                    p.value.iter_mut().chain(p.momentum.iter_mut()).for_each(q);
                }
                if let Some(n) = &mut b.norm {
                    for p in n.params_mut() {
                        p.value.iter_mut().chain(p.momentum.iter_mut()).for_each(q);
                    }
                    n.running_mean.iter_mut().chain(n.running_var.iter_mut()).for_each(q);
                }
            }
        }
    }

    /// Architecture descriptor plus, in declaration order, every parameter,
    /// each norm layer's running statistics, and optionally the momentum
    /// buffers (`*.momentum`) needed to resume training.
    pub fn to_checkpoint(&self, with_momentum: bool, extra: &[(&str, String)]) -> Checkpoint {
        let mut descriptor = self.arch.descriptor();
        descriptor.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        for net in &self.nets {
            for b in net.blocks() {
                let c = &b.conv;
                let name = c.weight.name.trim_end_matches(".weight");
                let kind = if b.norm.is_some() { "conv+norm+relu" } else { "conv" };
                descriptor.push((format!("layer.{name}"), format!("{kind} {} {}", c.in_channels, c.out_channels)));
            }
        }
        let mut tensors = Vec::new();
        let push = |p: &Param, tensors: &mut Vec<(String, Vec<f64>)>| {
            tensors.push((p.name.clone(), p.value.clone()));
            if with_momentum {
                tensors.push((format!("{}.momentum", p.name), p.momentum.clone()));
            }
        };
        for net in &self.nets {
            for b in net.blocks() {
                for p in b.conv.params() {
                    push(p, &mut tensors);
                }
                if let Some(n) = &b.norm {
                    for p in n.params() {
                        push(p, &mut tensors);
                    }
                    let base = n.scale.name.trim_end_matches(".scale");
                    tensors.push((format!("{base}.running_mean"), n.running_mean.clone()));
                    tensors.push((format!("{base}.running_var"), n.running_var.clone()));
                }
            }
        }
        Checkpoint { descriptor, tensors }
    }

    /// Rebuilds a model; momentum buffers are restored when present.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch = ArchConfig::from_checkpoint(ck)?;
        let mut model = Self::new(arch, 0)?;
        let fetch = |name: &str, len: usize| -> Result<Vec<f64>> {
            let t = ck.tensor(name).ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if t.len() != len {
                return Err(Error::Format(format!("tensor {name} has {} values, expected {len}", t.len())));
            }
            Ok(t.to_vec())
        };
        for net in &mut model.nets {
            for b in net.blocks_mut() {
                let mut params: Vec<&mut Param> = b.conv.params_mut().into_iter().collect();
                if let Some(n) = &mut b.norm {
                    let base = n.scale.name.trim_end_matches(".scale").to_string();
                    n.running_mean = fetch(&format!("{base}.running_mean"), n.channels)?;
                    n.running_var = fetch(&format!("{base}.running_var"), n.channels)?;
                    if n.running_var.iter().any(|&v| v < 0.0) {
                        return Err(Error::Format(format!("{base}: negative running variance")));
                    }
                    params.extend(n.params_mut());
                }
                for p in params {
                    p.value = fetch(&p.name, p.len())?;
                    let mname = format!("{}.momentum", p.name);
                    if ck.tensor(&mname).is_some() {
                        p.momentum = fetch(&mname, p.len())?;
                    }
                }
            }
        }
        Ok(model)
    }
}
