//! Closed-form u-step `(λI + βDᵀD) u = λf + βDᵀv` for constant weights.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::image::{gradient_adjoint, gradient_periodic_adjoint, GradientField, Image};
use crate::{Error, Result};

/// Boundary handling of the FFT u-solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FftBoundary {
    /// Circulant `D`: wrap-around differences at the last row/column.
    Periodic,
    /// Neumann `D` (same operator as the sparse path), diagonalized on the
    /// even-symmetric extension of the image to `2H x 2W`.
    Symmetric,
}

/// Solves `min_u (λ/2)‖u - f‖² + (β/2)‖Du - v‖²` in the frequency domain.
pub fn u_subproblem_fft(
    f: &Image,
    v: &GradientField,
    lambda: f64,
    beta: f64,
    boundary: FftBoundary,
) -> Result<Image> {
    if !(lambda > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda and beta must be positive, got {lambda}, {beta}"
        )));
    }
    if v.shape() != f.shape() {
        return Err(Error::Shape(format!("v is {:?}, f is {:?}", v.shape(), f.shape())));
    }
    let (h, w, c) = f.shape();
    let adj = match boundary {
        FftBoundary::Periodic => gradient_periodic_adjoint(v),
        FftBoundary::Symmetric => gradient_adjoint(v),
    };
    let mut u = Image::zeros(h, w, c);
    let mut planner = FftPlanner::new();
    for ch in 0..c {
        let rhs: Vec<f64> = f.plane(ch).iter().zip(adj.plane(ch)).map(|(fv, a)| lambda * fv + beta * a).collect();
        let sol = match boundary {
            FftBoundary::Periodic => screened_poisson_periodic(&mut planner, &rhs, h, w, lambda, beta),
            FftBoundary::Symmetric => {
                let (eh, ew) = (2 * h, 2 * w);
                let mut ext = vec![0.0; eh * ew];
                for y in 0..eh {
                    let sy = if y < h { y } else { eh - 1 - y };
                    for x in 0..ew {
                        let sx = if x < w { x } else { ew - 1 - x };
                        ext[y * ew + x] = rhs[sy * w + sx];
                    }
                }
                let full = screened_poisson_periodic(&mut planner, &ext, eh, ew, lambda, beta);
                (0..h).flat_map(|y| full[y * ew..y * ew + w].to_vec()).collect()
            }
        };
        u.plane_mut(ch).copy_from_slice(&sol);
    }
    Ok(u)
}

/// Solves `(λ + β L_per) u = b` where `L_per` is the periodic 5-point Laplacian.
fn screened_poisson_periodic(
    planner: &mut FftPlanner<f64>,
    b: &[f64],
    h: usize,
    w: usize,
    lambda: f64,
    beta: f64,
) -> Vec<f64> {
    let mut buf: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(planner, &mut buf, h, w, false);
    let sx: Vec<f64> = (0..w).map(|k| 4.0 * (std::f64::consts::PI * k as f64 / w as f64).sin().powi(2)).collect();
    let sy: Vec<f64> = (0..h).map(|k| 4.0 * (std::f64::consts::PI * k as f64 / h as f64).sin().powi(2)).collect();
    for y in 0..h {
        for x in 0..w {
            buf[y * w + x] /= lambda + beta * (sx[x] + sy[y]);
        }
    }
    fft2(planner, &mut buf, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    row.process(buf);
    let col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut tmp = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            tmp[y] = buf[y * w + x];
        }
        col.process(&mut tmp);
        for y in 0..h {
            buf[y * w + x] = tmp[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{gradient, gradient_periodic};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    fn random_field(h: usize, w: usize, seed: u64) -> GradientField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = GradientField::zeros(h, w, 1);
        v.dx.iter_mut().chain(v.dy.iter_mut()).for_each(|s| *s = rng.random_range(-0.3..0.3));
        v
    }

    #[test]
    fn exact_gradient_is_a_fixed_point() {
        let f = random_image(12, 10, 1);
        for (b, v) in [
            (FftBoundary::Periodic, gradient_periodic(&f)),
            (FftBoundary::Symmetric, gradient(&f)),
        ] {
            let u = u_subproblem_fft(&f, &v, 0.7, 3.0, b).unwrap();
            assert!(u.data().iter().zip(f.data()).all(|(a, c)| (a - c).abs() < 1e-10));
        }
    }

    #[test]
    fn data_term_dominates() {
        let f = random_image(8, 8, 2);
        let v = random_field(8, 8, 3);
        let u = u_subproblem_fft(&f, &v, 1e8, 1.0, FftBoundary::Periodic).unwrap();
        assert!(u.data().iter().zip(f.data()).all(|(a, c)| (a - c).abs() <= 1e-4 * c.abs().max(1e-3)));
    }

    #[test]
    fn periodic_normal_equation_residual() {
        let (lambda, beta) = (0.8, 5.0);
        let f = random_image(9, 14, 4);
        let v = random_field(9, 14, 5);
        let u = u_subproblem_fft(&f, &v, lambda, beta, FftBoundary::Periodic).unwrap();
        let lap = gradient_periodic_adjoint(&gradient_periodic(&u));
        let adj = gradient_periodic_adjoint(&v);
        let mut res = 0.0;
        let mut rhs_norm = 0.0;
        for i in 0..u.data().len() {
            let rhs = lambda * f.data()[i] + beta * adj.data()[i];
            res += (lambda * u.data()[i] + beta * lap.data()[i] - rhs).powi(2);
            rhs_norm += rhs * rhs;
        }
        assert!((res / rhs_norm).sqrt() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_weights() {
        let f = random_image(4, 4, 6);
        let v = gradient(&f);
        assert!(u_subproblem_fft(&f, &v, 0.0, 1.0, FftBoundary::Periodic).is_err());
    }
}
