use super::{assemble, pcg_solve, GammaMap, Ic0, SolveReport, SparseSpd, GAMMA_FLOOR};
use crate::image::{gradient_adjoint_plane, gradient_plane, GradientField, Image};
use crate::{Error, Result};

/// PCG stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub const FORWARD: SolverConfig = SolverConfig { tol: 1e-6, max_iter: 100 };
    /// A few iterations suffice for the backward solves during training.
    pub const BACKWARD: SolverConfig = SolverConfig { tol: 1e-6, max_iter: 10 };
    /// Effectively exact; used for gradient verification.
    pub const EXACT: SolverConfig = SolverConfig { tol: 1e-13, max_iter: 10_000 };
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::FORWARD
    }
}

/// `L = Γ + DᵀD` together with its IC(0) preconditioner. Built once per γ
/// and shared by the forward solve and both backward passes.
#[derive(Debug, Clone)]
pub struct SystemFactor {
    pub matrix: SparseSpd,
    pub precond: Ic0,
    gamma: Vec<f64>,
}

impl SystemFactor {
    pub fn new(gamma: &GammaMap) -> Result<Self> {
        let matrix = assemble(gamma)?;
        let precond = Ic0::factorize(&matrix)?;
        let gamma = gamma.values().iter().map(|&g| g.max(GAMMA_FLOOR)).collect();
        Ok(Self { matrix, precond, gamma })
    }

    /// The floored γ actually on the diagonal.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn height(&self) -> usize {
        self.matrix.height()
    }

    pub fn width(&self) -> usize {
        self.matrix.width()
    }

    pub fn solve(&self, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
        pcg_solve(&self.matrix, &self.precond, b, cfg.tol, cfg.max_iter)
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height(), self.width()) {
            return Err(Error::Shape(format!(
                "system is {}x{}, image is {h}x{w}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Solves `L u = Γf + Dᵀv` per channel with a fresh factorization.
pub fn reconstruct(
    f: &Image,
    v: &GradientField,
    gamma: &GammaMap,
    tol: f64,
    max_iter: usize,
) -> Result<(Image, Vec<SolveReport>)> {
    let factor = SystemFactor::new(gamma)?;
    reconstruct_with(&factor, f, v, &SolverConfig { tol, max_iter })
}

/// Solves `L u = Γf + Dᵀv` per channel, reusing `factor`.
pub fn reconstruct_with(
    factor: &SystemFactor,
    f: &Image,
    v: &GradientField,
    cfg: &SolverConfig,
) -> Result<(Image, Vec<SolveReport>)> {
    let (h, w, c) = f.shape();
    factor.check(h, w)?;
    if v.shape() != f.shape() {
        return Err(Error::Shape(format!("v is {:?}, f is {:?}", v.shape(), f.shape())));
    }
    let mut u = Image::zeros(h, w, c);
    let mut reports = Vec::with_capacity(c);
    let mut rhs = vec![0.0; h * w];
    for ch in 0..c {
        gradient_adjoint_plane(v.dx_plane(ch), v.dy_plane(ch), h, w, &mut rhs);
        for ((r, &g), &fv) in rhs.iter_mut().zip(factor.gamma()).zip(f.plane(ch)) {
            *r += g * fv;
        }
        let (x, rep) = factor.solve(&rhs, cfg)?;
        u.plane_mut(ch).copy_from_slice(&x);
        reports.push(rep);
    }
    Ok((u, reports))
}

/// Gradient of the loss with respect to `v`: solve `L z = ∂ℓ/∂u` once and
/// return `D z`. The adjoint solution `z` is returned for [`backward_gamma`].
pub fn backward_v(
    factor: &SystemFactor,
    dl_du: &Image,
    cfg: &SolverConfig,
) -> Result<(GradientField, Image, Vec<SolveReport>)> {
    let (h, w, c) = dl_du.shape();
    factor.check(h, w)?;
    let mut z = Image::zeros(h, w, c);
    let mut dv = GradientField::zeros(h, w, c);
    let mut reports = Vec::with_capacity(c);
    let n = h * w;
    for ch in 0..c {
        let (x, rep) = factor.solve(dl_du.plane(ch), cfg)?;
        gradient_plane(&x, h, w, &mut dv.dx[ch * n..(ch + 1) * n], &mut dv.dy[ch * n..(ch + 1) * n]);
        z.plane_mut(ch).copy_from_slice(&x);
        reports.push(rep);
    }
    Ok((dv, z, reports))
}

/// Gradient of the loss with respect to γ: `z ∘ (f - u)`, summed over channels.
pub fn backward_gamma(z: &Image, f: &Image, u: &Image) -> Result<Vec<f64>> {
    z.ensure_same_shape(f, "backward_gamma")?;
    z.ensure_same_shape(u, "backward_gamma")?;
    let n = z.pixels();
    let mut g = vec![0.0; n];
    for ch in 0..z.channels() {
        for (((gi, zi), fi), ui) in g.iter_mut().zip(z.plane(ch)).zip(f.plane(ch)).zip(u.plane(ch)) {
            *gi += zi * (fi - ui);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gradient;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| (y * 13 + x * 7) as f64 % 50.0)
    }

    #[test]
    fn exact_gradient_reproduces_f() {
        let f = ramp(9, 11);
        let gamma = GammaMap::new(9, 11, (0..99).map(|i| 0.2 + (i % 5) as f64).collect()).unwrap();
        let (u, reps) = reconstruct(&f, &gradient(&f), &gamma, 1e-10, 200).unwrap();
        assert!(reps[0].converged);
        let scale = f.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = u.data().iter().zip(f.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / scale < 1e-9);
    }

    #[test]
    fn huge_gamma_pins_to_f() {
        let f = ramp(6, 6);
        let v = GradientField::zeros(6, 6, 1);
        let (u, _) = reconstruct(&f, &v, &GammaMap::constant(6, 6, 1e8).unwrap(), 1e-12, 100).unwrap();
        assert!(u.data().iter().zip(f.data()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn zero_upstream_gradient() {
        let factor = SystemFactor::new(&GammaMap::constant(4, 4, 1.0).unwrap()).unwrap();
        let (dv, z, _) = backward_v(&factor, &Image::zeros(4, 4, 1), &SolverConfig::EXACT).unwrap();
        assert!(dv.dx.iter().chain(&dv.dy).all(|&v| v == 0.0));
        let f = ramp(4, 4);
        assert!(backward_gamma(&z, &f, &f.map(|v| v + 1.0)).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn perfect_fit_has_no_gamma_gradient() {
        let f = ramp(4, 4);
        let z = f.map(|v| v.sin());
        assert!(backward_gamma(&z, &f, &f).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let factor = SystemFactor::new(&GammaMap::constant(4, 4, 1.0).unwrap()).unwrap();
        let f = ramp(4, 5);
        assert!(reconstruct_with(&factor, &f, &gradient(&f), &SolverConfig::FORWARD).is_err());
    }
}
