use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cascade_backward, cascade_forward, CascadeModel, Task};
use crate::image::{psnr, GradientField, Image, PatchSet};
use crate::nn::{l1_loss, sgd_step, Mode, SgdConfig, Tensor4};
use crate::solver::SolverConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub sgd: SgdConfig,
    pub forward_solver: SolverConfig,
    pub backward_solver: SolverConfig,
    pub seed: u64,
    /// First epoch to run; nonzero when resuming from a checkpoint.
    pub start_epoch: usize,
    /// Per-epoch checkpoints (`epoch_NNN.damw`, `last.damw`) go here.
    pub checkpoint_dir: Option<PathBuf>,
    pub heldout: Option<PatchSet>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

/// SGD settings used for desk-scale training of `task`. The mean-normalized
/// loss needs a much larger step for depth upsampling, whose residual
/// errors are sparse.
pub fn default_sgd(task: Task) -> SgdConfig {
    let lr = if task.is_joint() { 1.0 } else { 0.01 };
    SgdConfig { lr, ..SgdConfig::default() }
}

impl TrainOptions {
    pub fn new(sgd: SgdConfig, seed: u64) -> Self {
        Self {
            sgd,
            forward_solver: SolverConfig::FORWARD,
            backward_solver: SolverConfig::BACKWARD,
            seed,
            start_epoch: 0,
            checkpoint_dir: None,
            heldout: None,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch loss over the epoch (normalized intensities).
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
    pub heldout_psnr: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub seed: u64,
    pub config_hash: u64,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every minibatch, in order.
    pub step_losses: Vec<f64>,
    /// Forward solves that stopped at the iteration cap.
    pub unconverged_solves: usize,
}

impl TrainRun {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,heldout_loss,heldout_psnr";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:.9e},{},{}",
                r.epoch,
                r.lr,
                r.train_loss,
                opt(r.heldout_loss),
                opt(r.heldout_psnr)
            );
        }
        s
    }
}

/// FNV-1a, stable across platforms and releases.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Batch {
    f: Tensor4,
    g: Option<Tensor4>,
    targets: Vec<Image>,
}

fn make_batch(model: &CascadeModel, set: &PatchSet, idx: &[usize]) -> Result<Batch> {
    let scale = model.arch.data_range;
    let joint = model.arch.task.is_joint();
    let pick = |m: usize| -> Vec<Image> { idx.iter().map(|&i| set.patches[i][m].map(|v| v / scale)).collect() };
    let f = pick(0);
    let g = joint.then(|| pick(1));
    let targets = pick(set.arity() - 1);
    Ok(Batch {
        f: Tensor4::from_images(&f.iter().collect::<Vec<_>>())?,
        g: g.map(|g| Tensor4::from_images(&g.iter().collect::<Vec<_>>())).transpose()?,
        targets,
    })
}

fn check_arity(model: &CascadeModel, set: &PatchSet) -> Result<()> {
    let want = model.arch.task.arity();
    if set.arity() != want {
        return Err(Error::InvalidArgument(format!(
            "{} task needs patches with {want} members, data has {}",
            model.arch.task.name(),
            set.arity()
        )));
    }
    Ok(())
}

/// Minibatch SGD through the full cascade with the L1 loss. Deterministic
/// for a fixed seed: the epoch-`e` shuffle is drawn from its own stream and
/// parameters are kept at `f32` precision after every step.
pub fn train(model: &mut CascadeModel, data: &PatchSet, opts: &TrainOptions) -> Result<TrainRun> {
    opts.sgd.validate()?;
    check_arity(model, data)?;
    if let Some(h) = &opts.heldout {
        check_arity(model, h)?;
    }
    let config_hash = fnv1a(
        format!("{:?}|{:?}|{:?}|{:?}|{}", model.arch, opts.sgd, opts.forward_solver, opts.backward_solver, opts.seed)
            .as_bytes(),
    );
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    model.quantize();
    let mut run = TrainRun { seed: opts.seed, config_hash, epochs: Vec::new(), step_losses: Vec::new(), unconverged_solves: 0 };
    for epoch in opts.start_epoch..opts.sgd.epochs {
        let start = Instant::now();
        let lr = opts.sgd.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let batches: Vec<&[usize]> = order.chunks(opts.sgd.batch_size).collect();
        for (step, idx) in batches.iter().enumerate() {
            let b = make_batch(model, data, idx)?;
            model.zero_grad();
            let (u, cache) = cascade_forward(model, &b.f, b.g.as_ref(), Mode::Train, &opts.forward_solver)?;
            run.unconverged_solves += cache.stages.iter().map(|s| s.unconverged).sum::<usize>();
            let outputs: Vec<Image> = (0..u.batch()).map(|i| u.image(i)).collect();
            let (loss, grads) = l1_loss(&outputs, &b.targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {step}")));
            }
            let du = Tensor4::from_images(&grads.iter().collect::<Vec<_>>())?;
            cascade_backward(model, &cache, &du, &opts.backward_solver)?;
            for (net, st) in model.nets.iter_mut().zip(&cache.stages) {
                net.update_running(&st.net);
            }
            let cfg = opts.sgd;
            sgd_step(&mut model.params_mut(), lr, &cfg)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {step}: {e}")))?;
            model.quantize();
            run.step_losses.push(loss);
            total += loss;
            if opts.verbose && (step + 1) % 50 == 0 {
                eprintln!("epoch {epoch} step {}/{} loss {loss:.5}", step + 1, batches.len());
            }
        }
        let (heldout_loss, heldout_psnr) = match &opts.heldout {
            Some(h) => {
                let (l, p) = evaluate(model, h, &opts.forward_solver)?;
                (Some(l), Some(p))
            }
            None => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: total / batches.len() as f64,
            heldout_loss,
            heldout_psnr,
            seconds: start.elapsed().as_secs_f64(),
        };
        if opts.verbose {
            eprintln!(
                "epoch {epoch} lr {lr:e} train {:.6} heldout psnr {} ({:.1}s)",
                rec.train_loss,
                heldout_psnr.map_or("-".into(), |p| format!("{p:.3}")),
                rec.seconds
            );
        }
        run.epochs.push(rec);
        if let Some(dir) = &opts.checkpoint_dir {
            let ck = model.to_checkpoint(true, &[("epochs_done", (epoch + 1).to_string()), ("seed", opts.seed.to_string())]);
            let bytes = ck.to_bytes()?;
            for name in [format!("epoch_{:03}.damw", epoch + 1), "last.damw".to_string()] {
                let path = dir.join(&name);
                let partial = dir.join(format!("{name}.partial"));
                std::fs::write(&partial, &bytes).map_err(|e| Error::io(&partial, e))?;
                std::fs::rename(&partial, &path).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(run)
}

/// Mean L1 loss (normalized units) and mean PSNR (native units) of the
/// cascade output over a patch set, with running normalization statistics.
pub fn evaluate(model: &CascadeModel, set: &PatchSet, solver: &SolverConfig) -> Result<(f64, f64)> {
    check_arity(model, set)?;
    let (mut loss, mut total_psnr) = (0.0, 0.0);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(16) {
        let b = make_batch(model, set, chunk)?;
        let (u, _) = cascade_forward(model, &b.f, b.g.as_ref(), Mode::Eval, solver)?;
        for (i, t) in b.targets.iter().enumerate() {
            let out = u.image(i);
            loss += l1_loss(std::slice::from_ref(&out), std::slice::from_ref(t))?.0;
            let s = model.arch.data_range;
            total_psnr += psnr(&out.map(|v| v * s), &t.map(|v| v * s))?;
        }
    }
    Ok((loss / set.len() as f64, total_psnr / set.len() as f64))
}

/// Restores a full image (any size) with running normalization statistics.
pub fn infer(model: &CascadeModel, f: &Image, g: Option<&Image>, solver: &SolverConfig) -> Result<Image> {
    Ok(infer_stages(model, f, g, solver)?.pop().expect("K >= 1").0)
}

/// Output `u^{k+1}` and predicted `v^{k+1}` of every stage, in native units.
pub fn infer_stages(
    model: &CascadeModel,
    f: &Image,
    g: Option<&Image>,
    solver: &SolverConfig,
) -> Result<Vec<(Image, GradientField)>> {
    let s = model.arch.data_range;
    let fin = Tensor4::from_images(&[&f.map(|v| v / s)])?;
    let gin = g.map(|g| Tensor4::from_images(&[&g.map(|v| v / s)])).transpose()?;
    if let (Some(gt), true) = (&gin, g.is_some()) {
        if (gt.height(), gt.width()) != (f.height(), f.width()) {
            return Err(Error::Shape(format!(
                "guidance is {}x{}, input is {}x{}",
                gt.height(),
                gt.width(),
                f.height(),
                f.width()
            )));
        }
    }
    let (_, cache) = cascade_forward(model, &fin, gin.as_ref(), Mode::Eval, solver)?;
    cache
        .stages
        .iter()
        .map(|st| {
            let u = st.output.image(0).map(|v| v * s);
            let (_, c2, h, w) = st.v.shape();
            let n = c2 / 2 * h * w;
            let vs = st.v.sample(0);
            let v = GradientField::new(h, w, c2 / 2, vs[..n].iter().map(|x| x * s).collect(), vs[n..].iter().map(|x| x * s).collect())?;
            Ok((u, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{ArchConfig, Task};
    use super::*;
    use crate::image::{add_gaussian_noise, sample_patches, NoiseSpec};

    fn toy_set(count: usize, seed: u64) -> PatchSet {
        let clean = Image::from_fn(24, 24, |y, x| if (x / 6 + y / 8) % 2 == 0 { 60.0 } else { 190.0 });
        let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(20.0, seed).unwrap());
        sample_patches(&[vec![noisy, clean]], 8, count, seed).unwrap()
    }

    fn tiny_opts(epochs: usize, lr: f64) -> TrainOptions {
        TrainOptions::new(SgdConfig { lr, epochs, batch_size: 2, ..SgdConfig::default() }, 7)
    }

    #[test]
    fn zero_lr_epoch_matches_untrained_loss() {
        let data = toy_set(4, 1);
        let mut model = CascadeModel::new(ArchConfig::tiny(Task::Denoise), 3).unwrap();
        model.quantize();
        let before = model.clone();
        let run = train(&mut model, &data, &tiny_opts(1, 0.0)).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(7 ^ 0x9e37_79b9_7f4a_7c15));
        for (chunk, &logged) in order.chunks(2).zip(&run.step_losses) {
            let b = make_batch(&before, &data, chunk).unwrap();
            let (u, _) = cascade_forward(&before, &b.f, None, Mode::Train, &SolverConfig::FORWARD).unwrap();
            let outs: Vec<Image> = (0..2).map(|i| u.image(i)).collect();
            assert_eq!(l1_loss(&outs, &b.targets).unwrap().0, logged);
        }
        for (a, b) in model.nets.iter().zip(&before.nets) {
            for (x, y) in a.blocks().zip(b.blocks()) {
                assert_eq!(x.conv.weight.value, y.conv.weight.value);
            }
        }
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let data = toy_set(6, 2);
        let mut a = CascadeModel::new(ArchConfig::tiny(Task::Denoise), 3).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &data, &tiny_opts(2, 1e-2)).unwrap();
        let rb = train(&mut b, &data, &tiny_opts(2, 1e-2)).unwrap();
        assert_eq!(ra.step_losses, rb.step_losses);
        assert_eq!(a, b);
    }

    #[test]
    fn arity_mismatch_rejected() {
        let data = toy_set(2, 0);
        let mut model = CascadeModel::new(ArchConfig::tiny(Task::SrDepth), 0).unwrap();
        assert!(train(&mut model, &data, &tiny_opts(1, 1e-3)).is_err());
    }

    #[test]
    fn infer_matches_eval_forward() {
        let model = CascadeModel::new(ArchConfig::tiny(Task::Denoise), 4).unwrap();
        let data = toy_set(1, 3);
        let f = &data.patches[0][0];
        let out = infer(&model, f, None, &SolverConfig::FORWARD).unwrap();
        let b = make_batch(&model, &data, &[0]).unwrap();
        let (u, _) = cascade_forward(&model, &b.f, None, Mode::Eval, &SolverConfig::FORWARD).unwrap();
        assert_eq!(out, u.image(0).map(|v| v * 255.0));
    }
}
