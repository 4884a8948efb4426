//! Scalar proximal mappings `argmin_v φ(v) + (β/2)(v - z)²`, applied
//! independently to every `dx` and `dy` sample.

use crate::image::GradientField;
use crate::{Error, Result};

/// Newton iteration cap for the hyper-Laplacian prox.
pub const LP_MAX_ITER: usize = 30;
/// Step-size tolerance for the hyper-Laplacian prox.
pub const LP_TOL: f64 = 1e-10;

/// `sign(z) · max(|z| - t, 0)`
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    let m = z.abs() - threshold;
    if m > 0.0 {
        m.copysign(z)
    } else {
        0.0
    }
}

/// Keeps `z` when `z² > threshold_sq`, else zero.
pub fn hard_threshold(z: f64, threshold_sq: f64) -> f64 {
    if z * z > threshold_sq {
        z
    } else {
        0.0
    }
}

/// Minimizer of `|v|^p + (β/2)(v - z)²` for `p ∈ (0, 1]`, or `None` when the
/// Newton iteration does not settle within [`LP_MAX_ITER`] steps.
///
/// For `p < 1` the objective has at most two candidate minimizers: `v = 0`
/// and the larger root of the stationarity condition
/// `g(v) = p v^(p-1) + β (v - |z|) = 0` on `(0, |z|]`. `g` is convex there
/// with its minimum at `v_c = (p (1 - p) / β)^(1 / (2 - p))`, so Newton from
/// `|z|` decreases monotonically onto the root whenever `g(v_c) < 0`.
pub fn lp_scalar(z: f64, beta: f64, p: f64) -> Option<f64> {
    if z == 0.0 {
        return Some(0.0);
    }
    if p >= 1.0 {
        return Some(soft_threshold(z, 1.0 / beta));
    }
    let a = z.abs();
    let g = |v: f64| p * v.powf(p - 1.0) + beta * (v - a);
    let dg = |v: f64| p * (p - 1.0) * v.powf(p - 2.0) + beta;
    let vc = (p * (1.0 - p) / beta).powf(1.0 / (2.0 - p));
    if a <= vc || g(vc) >= 0.0 {
        return Some(0.0);
    }
    let mut v = a;
    let gscale = p * a.powf(p - 1.0) + beta * a;
    let mut converged = false;
    for _ in 0..LP_MAX_ITER {
        let gv = g(v);
        if gv.abs() <= 1e-15 * gscale {
            converged = true;
            break;
        }
        let mut next = v - gv / dg(v);
        if !(next > vc && next < v) {
            // rounding pushed the step out of (v_c, v); bisect instead
            next = 0.5 * (v + vc);
        }
        let step = (v - next).abs();
        v = next;
        if step <= LP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let cost = |x: f64| x.abs().powf(p) + 0.5 * beta * (x - a) * (x - a);
    let best = if cost(v) < cost(0.0) { v } else { 0.0 };
    Some(best.copysign(z))
}

pub fn prox_l1(z: &GradientField, threshold: f64) -> Result<GradientField> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
    }
    Ok(z.map(|s| soft_threshold(s, threshold)))
}

pub fn prox_l0(z: &GradientField, threshold_sq: f64) -> Result<GradientField> {
    if !(threshold_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold_sq}")));
    }
    Ok(z.map(|s| hard_threshold(s, threshold_sq)))
}

pub fn prox_lp(z: &GradientField, beta: f64, p: f64) -> Result<GradientField> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1], got {p}")));
    }
    let (h, w, _) = z.shape();
    let mut out = GradientField::zeros(h, w, z.channels());
    for (src, dst, comp) in [(&z.dx, &mut out.dx, "dx"), (&z.dy, &mut out.dy, "dy")] {
        for (i, (&s, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
            *d = lp_scalar(s, beta, p).ok_or_else(|| Error::NotConverged {
                what: format!("hyper-Laplacian prox ({comp}, z = {s}, beta = {beta}, p = {p})"),
                iterations: LP_MAX_ITER,
                location: Some(((i / w) % h, i % w)),
            })?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_min(phi: impl Fn(f64) -> f64, z: f64, beta: f64) -> f64 {
        let lim = z.abs() + 1.0;
        let steps = (2.0 * lim / 1e-3).ceil() as i64;
        (0..=steps)
            .map(|k| -lim + k as f64 * 1e-3)
            .chain([0.0])
            .map(|v| phi(v) + 0.5 * beta * (v - z).powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    fn field(values: &[f64]) -> GradientField {
        GradientField::new(1, values.len(), 1, values.to_vec(), vec![0.0; values.len()]).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(0.5, 0.25), 0.25);
        assert_eq!(soft_threshold(-0.1, 0.25), 0.0);
        assert_eq!(soft_threshold(-0.75, 0.25), -0.5);
        let z = field(&[0.3, -2.0, 0.0]);
        assert_eq!(prox_l1(&z, 0.0).unwrap(), z);
    }

    #[test]
    fn hard_threshold_examples() {
        assert_eq!(hard_threshold(3.0, 2.0), 3.0);
        assert_eq!(hard_threshold(1.0, 2.0), 0.0);
    }

    #[test]
    fn lp_zero_input() {
        for p in [0.3, 0.5, 0.8] {
            for beta in [0.1, 1.0, 50.0] {
                assert_eq!(lp_scalar(0.0, beta, p), Some(0.0));
            }
        }
    }

    #[test]
    fn lp_with_p_one_is_soft_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z = field(&vals);
        let a = prox_lp(&z, 2.5, 1.0).unwrap();
        let b = prox_l1(&z, 1.0 / 2.5).unwrap();
        for (x, y) in a.dx.iter().zip(&b.dx) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn lp_half_beta_two_matches_fine_grid() {
        let (z, beta, p) = (2.0, 2.0, 0.5);
        let v = lp_scalar(z, beta, p).unwrap();
        let cost = |x: f64| x.abs().powf(p) + 0.5 * beta * (x - z).powi(2);
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for k in 0..=300_000 {
            let x = -0.5 + k as f64 * 1e-5;
            if cost(x) < best {
                best = cost(x);
                arg = x;
            }
        }
        assert!((v - arg).abs() < 1e-5, "{v} vs {arg}");
        assert!(cost(v) <= best + 1e-12);
    }

    #[test]
    fn prox_oracle_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let z = rng.random_range(-4.0..4.0);
            let beta = rng.random_range(0.2..10.0);
            let l1 = soft_threshold(z, 1.0 / beta);
            assert!(l1.abs() + 0.5 * beta * (l1 - z).powi(2) <= grid_min(f64::abs, z, beta) + 1e-6);
            let l0 = hard_threshold(z, 2.0 / beta);
            let ind = |v: f64| if v != 0.0 { 1.0 } else { 0.0 };
            assert!(ind(l0) + 0.5 * beta * (l0 - z).powi(2) <= grid_min(ind, z, beta) + 1e-6);
            for p in [0.5, 2.0 / 3.0] {
                let v = lp_scalar(z, beta, p).unwrap();
                let phi = |x: f64| x.abs().powf(p);
                assert!(phi(v) + 0.5 * beta * (v - z).powi(2) <= grid_min(phi, z, beta) + 1e-6);
            }
        }
    }

    #[test]
    fn shrinkers_never_grow_or_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let z: f64 = rng.random_range(-5.0..5.0);
            let beta = rng.random_range(0.05..20.0);
            for v in [
                soft_threshold(z, 1.0 / beta),
                hard_threshold(z, 2.0 / beta),
                lp_scalar(z, beta, 0.5).unwrap(),
                lp_scalar(z, beta, 0.8).unwrap(),
            ] {
                assert!(v.abs() <= z.abs());
                assert!(v == 0.0 || v.signum() == z.signum());
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        let z = field(&[1.0]);
        assert!(prox_l1(&z, -1.0).is_err());
        assert!(prox_l0(&z, -1.0).is_err());
        assert!(prox_lp(&z, 0.0, 0.5).is_err());
        assert!(prox_lp(&z, 1.0, 1.5).is_err());
    }
}
