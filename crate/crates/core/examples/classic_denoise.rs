//! Classic alternating minimization on one noisy test image, with each
//! handcrafted regularizer.
//!
//! cargo run --release --example classic_denoise [image.pgm]

use deepam::classic::{am_solve, AmConfig, Backend, ContinuationSchedule, Regularizer};
use deepam::image::{add_gaussian_noise, load_image, psnr, ssim, NoiseSpec};

fn main() -> deepam::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/natural/test_camera_0.pgm").into());
    let clean = load_image(&path)?;
    let noisy = add_gaussian_noise(&clean, &NoiseSpec::new(25.0, 7)?);
    println!("{path}: noisy input {:.2} dB", psnr(&noisy, &clean)?);

    for (name, reg, lambda) in [
        ("TV (L1)", Regularizer::L1, 5.0),
        ("L0", Regularizer::L0, 20.0),
        ("Lp, p=1/2", Regularizer::Lp(0.5), 10.0),
    ] {
        let cfg = AmConfig::new(reg, ContinuationSchedule::with_lambda(lambda), Backend::Fft);
        let (u, trace) = am_solve(&noisy, &cfg)?;
        println!(
            "{name:<10} lambda {lambda:>4}: {:.2} dB, SSIM {:.3}, {} outer iterations",
            psnr(&u, &clean)?,
            ssim(&u, &clean)?,
            trace.records.len()
        );
    }
    Ok(())
}
