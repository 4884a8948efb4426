//! The spatially weighted reconstruction system on a random problem:
//! PCG against the banded direct solve, and the effect of γ on the result.
//!
//! cargo run --release --example weighted_solve

use deepam::image::{gradient, Image};
use deepam::solver::{assemble, pcg_solve, reconstruct, BandedCholesky, GammaMap, Ic0};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> deepam::Result<()> {
    let (h, w) = (64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gamma = GammaMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.1..10.0)).collect())?;
    let b: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

    let a = assemble(&gamma)?;
    let (x, report) = pcg_solve(&a, &Ic0::factorize(&a)?, &b, 1e-10, 500)?;
    let direct = BandedCholesky::factorize(&a)?.solve(&b);
    let diff = x.iter().zip(&direct).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("PCG: {} iterations, converged {}, max |x - x_direct| = {diff:.2e}", report.iterations, report.converged);
    for (k, r) in report.history.iter().enumerate().take(8) {
        println!("  iteration {k}: relative residual {r:.3e}");
    }

    // With v = ∇f the solution is f itself; with v = 0 it is a γ-controlled
    // smoothing of f.
    let f = Image::from_fn(h, w, |y, x| if (y / 16 + x / 16) % 2 == 0 { 200.0 } else { 50.0 });
    let (same, _) = reconstruct(&f, &gradient(&f), &gamma, 1e-10, 500)?;
    let err = same.data().iter().zip(f.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("v = grad f reproduces f: max error {err:.2e}");
    let zero = deepam::GradientField::zeros(h, w, 1);
    for g in [0.01, 0.1, 1.0, 10.0] {
        let (u, _) = reconstruct(&f, &zero, &GammaMap::constant(h, w, g)?, 1e-10, 500)?;
        let spread = u.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            - u.data().iter().fold(f64::INFINITY, |m, &v| m.min(v));
        println!("v = 0, gamma = {g:>5}: output range {spread:.1} (input range 150)");
    }
    Ok(())
}
