//! Trains a small learned cascade on natural-image crops, saves it, reloads
//! it and compares it with TV on a held-out image.
//!
//! cargo run --release --example train_denoiser [epochs] [patches]
//!
//! The defaults finish in under a minute and stay below TV; `20 5000`
//! (about half an hour) clears it by more than a decibel.

use std::path::Path;

use deepam::cascade::{default_sgd, infer, infer_stages, train, ArchConfig, CascadeModel, Task, TrainOptions};
use deepam::classic::{am_solve, AmConfig, Backend, ContinuationSchedule, Regularizer};
use deepam::image::{add_gaussian_noise, load_image, psnr, NoiseSpec};
use deepam::nn::{Checkpoint, SgdConfig};
use deepam::solver::SolverConfig;
use deepam::synth::denoise_patches;

fn main() -> deepam::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(3);
    let count = args.next().unwrap_or(1000);

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/natural");
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .expect("data/natural is readable")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("train_")))
        .collect();
    names.sort();
    let train_imgs = names.iter().map(load_image).collect::<deepam::Result<Vec<_>>>()?;
    let data = denoise_patches(&train_imgs, 25.0, 32, count, 1)?;

    let mut model = CascadeModel::new(ArchConfig::desk(Task::Denoise), 1)?;
    println!("{} parameters, {} training patches", model.param_count(), data.len());
    let sgd = SgdConfig { epochs, ..default_sgd(Task::Denoise) };
    let run = train(&mut model, &data, &TrainOptions::new(sgd, 1))?;
    for e in &run.epochs {
        println!("epoch {} lr {:.0e} loss {:.5} ({:.0}s)", e.epoch, e.lr, e.train_loss, e.seconds);
    }

    let path = std::env::temp_dir().join("example_denoiser.damw");
    model.to_checkpoint(false, &[]).save(&path)?;
    let model = CascadeModel::from_checkpoint(&Checkpoint::load(&path)?)?;
    println!("saved and reloaded {}", path.display());

    let clean = load_image(dir.join("test_coffee_0.pgm"))?;
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(25.0, 3)?);
    let tv_cfg = AmConfig::new(Regularizer::L1, ContinuationSchedule::with_lambda(5.0), Backend::Fft);
    println!("noisy   {:.2} dB", psnr(&noisy, &clean)?);
    println!("TV      {:.2} dB", psnr(&am_solve(&noisy, &tv_cfg)?.0, &clean)?);
    for (k, (u, _)) in infer_stages(&model, &noisy, None, &SolverConfig::FORWARD)?.iter().enumerate() {
        println!("stage {} {:.2} dB", k + 1, psnr(u, &clean)?);
    }
    let out = infer(&model, &noisy, None, &SolverConfig::FORWARD)?;
    println!("learned {:.2} dB", psnr(&out, &clean)?);
    Ok(())
}
