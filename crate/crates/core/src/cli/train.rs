use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{merge, require, to_toml, write_atomic};
use crate::cascade::{default_sgd, infer, train, ArchConfig, CascadeModel, Concat, Task, TrainOptions};
use crate::image::{MetricReport, PatchSet};
use crate::nn::{Checkpoint, SgdConfig};
use crate::solver::SolverConfig;
use crate::synth::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    /// depth 6, width 16, K = 2
    Desk,
    /// depth 10, width 64, K = 3
    Full,
    /// depth 3, width 4, K = 2
    Tiny,
}

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Training patch set (`.damp`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Held-out patch set evaluated after every epoch.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Base architecture; --k/--depth/--width override it.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchPreset>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concat: Option<Concat>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_gain: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_bias: Option<f64>,
    /// Predict a correction to the gradient of the current estimate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_v: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Learning-rate multiplier applied every --lr-step epochs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_step: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_max_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backward_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backward_max_iter: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quiet: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl TrainArgs {
    fn resolve(self) -> Result<Self> {
        let mut a = merge(&self, self.config.as_deref())?;
        require(&a.data, "data")?;
        require(&a.out, "out")?;
        let task = *a.task.get_or_insert(Task::Denoise);
        let base = match *a.arch.get_or_insert(ArchPreset::Desk) {
            ArchPreset::Desk => ArchConfig::desk(task),
            ArchPreset::Full => ArchConfig::full(task),
            ArchPreset::Tiny => ArchConfig::tiny(task),
        };
        a.k.get_or_insert(base.k);
        a.depth.get_or_insert(base.depth);
        a.width.get_or_insert(base.width);
        a.concat.get_or_insert(base.concat);
        a.head_gain.get_or_insert(base.head_gain);
        a.gamma_bias.get_or_insert(base.gamma_bias);
        a.residual_v.get_or_insert(base.residual_v);
        let sgd = default_sgd(task);
        a.epochs.get_or_insert(sgd.epochs);
        a.lr.get_or_insert(sgd.lr);
        a.lr_decay.get_or_insert(sgd.lr_decay);
        a.lr_step.get_or_insert(sgd.lr_step);
        a.batch.get_or_insert(sgd.batch_size);
        a.momentum.get_or_insert(sgd.momentum);
        a.weight_decay.get_or_insert(sgd.weight_decay);
        a.seed.get_or_insert(0);
        a.forward_tol.get_or_insert(SolverConfig::FORWARD.tol);
        a.forward_max_iter.get_or_insert(SolverConfig::FORWARD.max_iter);
        a.backward_tol.get_or_insert(SolverConfig::BACKWARD.tol);
        a.backward_max_iter.get_or_insert(SolverConfig::BACKWARD.max_iter);
        a.quiet.get_or_insert(false);
        Ok(a)
    }

    fn arch(&self) -> ArchConfig {
        let task = self.task.expect("resolved");
        let base = match self.arch.expect("resolved") {
            ArchPreset::Desk => ArchConfig::desk(task),
            ArchPreset::Full => ArchConfig::full(task),
            ArchPreset::Tiny => ArchConfig::tiny(task),
        };
        let width = self.width.expect("resolved");
        let scale = |w: usize| (w * width / base.width).max(1);
        ArchConfig {
            k: self.k.expect("resolved"),
            depth: self.depth.expect("resolved"),
            width,
            guide_width: scale(base.guide_width),
            gamma_width: scale(base.gamma_width),
            concat: self.concat.expect("resolved"),
            head_gain: self.head_gain.expect("resolved"),
            gamma_bias: self.gamma_bias.expect("resolved"),
            residual_v: self.residual_v.expect("resolved"),
            ..base
        }
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr.expect("resolved"),
            momentum: self.momentum.expect("resolved"),
            weight_decay: self.weight_decay.expect("resolved"),
            batch_size: self.batch.expect("resolved"),
            epochs: self.epochs.expect("resolved"),
            lr_decay: self.lr_decay.expect("resolved"),
            lr_step: self.lr_step.expect("resolved"),
        }
    }
}

pub fn run(args: TrainArgs) -> Result<()> {
    let a = args.resolve()?;
    let out = a.out.clone().expect("resolved");
    let seed = a.seed.expect("resolved");
    let data = PatchSet::load(a.data.as_ref().expect("resolved"))?;
    let heldout = a.heldout.as_ref().map(PatchSet::load).transpose()?;
    let (mut model, start_epoch) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let model = CascadeModel::from_checkpoint(&ck)?;
            if model.arch.task != a.task.expect("resolved") {
                return Err(Error::Config(format!("checkpoint is a {} model", model.arch.task.name())));
            }
            (model, ck.parse::<usize>("epochs_done").unwrap_or(0))
        }
        None => (CascadeModel::new(a.arch(), derive_seed(seed, 0))?, 0),
    };
    let mut opts = TrainOptions::new(a.sgd(), seed);
    opts.forward_solver = SolverConfig { tol: a.forward_tol.expect("resolved"), max_iter: a.forward_max_iter.expect("resolved") };
    opts.backward_solver = SolverConfig { tol: a.backward_tol.expect("resolved"), max_iter: a.backward_max_iter.expect("resolved") };
    opts.start_epoch = start_epoch;
    opts.checkpoint_dir = Some(out.clone());
    opts.heldout = heldout.clone();
    opts.verbose = !a.quiet.expect("resolved");
    write_atomic(&out.join("config.resolved"), to_toml(&a)?.as_bytes())?;
    let run = train(&mut model, &data, &opts)?;
    let ck = model.to_checkpoint(true, &[("epochs_done", opts.sgd.epochs.max(start_epoch).to_string()), ("seed", seed.to_string())]);
    write_atomic(&out.join("model.damw"), &ck.to_bytes()?)?;
    let mut log = run.to_csv();
    let _ = writeln!(log, "# config_hash={:016x}", run.config_hash);
    write_atomic(&out.join("train_log.csv"), log.as_bytes())?;
    if let Some(h) = &heldout {
        let bmp = model.arch.task.is_joint().then_some(3.0);
        let mut table = format!("patch,{}\n", MetricReport::CSV_HEADER);
        let (mut sum, mut n) = (0.0, 0);
        for (i, p) in h.patches.iter().enumerate() {
            let guide = model.arch.task.is_joint().then(|| &p[1]);
            let restored = infer(&model, &p[0], guide, &opts.forward_solver)?;
            let r = MetricReport::compute(&restored, &p[p.len() - 1], bmp)?;
            sum += r.psnr;
            n += 1;
            let _ = writeln!(table, "{i},{}", r.csv_row());
        }
        write_atomic(&out.join("metrics.csv"), table.as_bytes())?;
        println!("held-out mean PSNR {:.3} dB over {n} patches", sum / n as f64);
    }
    if let Some(last) = run.epochs.last() {
        println!("finished epoch {} with train loss {:.6}", last.epoch, last.train_loss);
    }
    println!("model written to {}", out.join("model.damw").display());
    Ok(())
}
