use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CascadeModel, NetCache};
use crate::image::{gradient_adjoint_plane, gradient_plane, GradientField, Image};
use crate::nn::{Mode, Objective, Param, Tensor4};
use crate::solver::{backward_gamma, backward_v, reconstruct_with, GammaMap, SolverConfig, SystemFactor, GAMMA_FLOOR};
use crate::{Error, Result};

/// Everything stage `k` must remember for the backward pass.
#[derive(Debug, Clone)]
pub struct StageCache {
    pub net: NetCache,
    /// Stage input `u^k`.
    pub input: Tensor4,
    pub v: Tensor4,
    /// Rectified γ, before the assembly floor.
    pub gamma: Tensor4,
    /// One factorization per sample, shared by forward and backward.
    pub factors: Vec<SystemFactor>,
    /// Stage output `u^{k+1}`.
    pub output: Tensor4,
    /// Forward solves that hit the iteration cap.
    pub unconverged: usize,
}

#[derive(Debug, Clone)]
pub struct CascadeCache {
    pub f: Tensor4,
    pub g: Option<Tensor4>,
    pub stages: Vec<StageCache>,
    /// Factorizations performed so far (forward and backward together).
    pub factorizations: usize,
}

/// Splits a `2C`-channel network output for sample `i` into a gradient field.
fn to_field(v: &Tensor4, i: usize) -> Result<GradientField> {
    let (_, c2, h, w) = v.shape();
    let c = c2 / 2;
    let s = v.sample(i);
    let n = c * h * w;
    GradientField::new(h, w, c, s[..n].to_vec(), s[n..].to_vec())
}

fn gamma_map(gamma: &Tensor4, i: usize) -> Result<GammaMap> {
    let vals = gamma.plane(i, 0).iter().map(|&g| g.max(GAMMA_FLOOR)).collect();
    GammaMap::new(gamma.height(), gamma.width(), vals)
}

/// Runs all K stages from `u⁰ = f`. `f` and `g` are in normalized units.
pub fn cascade_forward(
    model: &CascadeModel,
    f: &Tensor4,
    g: Option<&Tensor4>,
    mode: Mode,
    solver: &SolverConfig,
) -> Result<(Tensor4, CascadeCache)> {
    let (n, c, h, w) = f.shape();
    if c != model.arch.channels {
        return Err(Error::Shape(format!("model expects {} channels, input has {c}", model.arch.channels)));
    }
    let mut u = f.clone();
    let mut stages = Vec::with_capacity(model.nets.len());
    let mut factorizations = 0;
    for (k, net) in model.nets.iter().enumerate() {
        let (mut v, gamma, cache) = net.forward(&u, g, mode)?;
        if model.arch.residual_v {
            add_gradient(&mut v, &u);
        }
        let solved: Vec<(SystemFactor, Image, bool)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let factor = SystemFactor::new(&gamma_map(&gamma, i)?)?;
                let fi = f.image(i);
                let (ui, reports) = reconstruct_with(&factor, &fi, &to_field(&v, i)?, solver)?;
                Ok((factor, ui, reports.iter().all(|r| r.converged)))
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| stage_error(k, e))?;
        factorizations += n;
        let mut out = Tensor4::zeros(n, c, h, w);
        let mut factors = Vec::with_capacity(n);
        let mut unconverged = 0;
        for (i, (factor, ui, ok)) in solved.into_iter().enumerate() {
            out.sample_mut(i).copy_from_slice(ui.data());
            factors.push(factor);
            unconverged += usize::from(!ok);
        }
        stages.push(StageCache { net: cache, input: u, v, gamma, factors, output: out.clone(), unconverged });
        u = out;
    }
    Ok((u, CascadeCache { f: f.clone(), g: g.cloned(), stages, factorizations }))
}

/// `v += ∇u`, channel by channel.
fn add_gradient(v: &mut Tensor4, u: &Tensor4) {
    let (n, c, h, w) = u.shape();
    let (mut dx, mut dy) = (vec![0.0; h * w], vec![0.0; h * w]);
    for i in 0..n {
        for ch in 0..c {
            gradient_plane(u.plane(i, ch), h, w, &mut dx, &mut dy);
            v.plane_mut(i, ch).iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            v.plane_mut(i, c + ch).iter_mut().zip(&dy).for_each(|(a, b)| *a += b);
        }
    }
}

/// `du += Dᵀ dv`, the adjoint of [`add_gradient`].
fn add_gradient_adjoint(du: &mut Tensor4, dv: &Tensor4) {
    let (n, c, h, w) = du.shape();
    let mut out = vec![0.0; h * w];
    for i in 0..n {
        for ch in 0..c {
            gradient_adjoint_plane(dv.plane(i, ch), dv.plane(i, c + ch), h, w, &mut out);
            du.plane_mut(i, ch).iter_mut().zip(&out).for_each(|(a, b)| *a += b);
        }
    }
}

fn stage_error(k: usize, e: Error) -> Error {
    match e {
        Error::Breakdown { iteration, reason } => {
            Error::Breakdown { iteration, reason: format!("cascade stage {k}: {reason}") }
        }
        Error::NotConverged { what, iterations, location } => {
            Error::NotConverged { what: format!("cascade stage {k}: {what}"), iterations, location }
        }
        other => other,
    }
}

/// Accumulates parameter gradients of every stage given `dL/du^K`.
///
/// Stage `k` solves `L z = dL/du^{k+1}` once with its cached factorization,
/// obtains `dL/dv = D z` and `dL/dγ = z ∘ (f - u^{k+1})`, and pushes both
/// through its network to get `dL/du^k`.
pub fn cascade_backward(
    model: &mut CascadeModel,
    cache: &CascadeCache,
    du_final: &Tensor4,
    solver: &SolverConfig,
) -> Result<()> {
    let (n, c, h, w) = cache.f.shape();
    if du_final.shape() != (n, c, h, w) {
        return Err(Error::Shape(format!("upstream gradient {:?} vs output {:?}", du_final.shape(), cache.f.shape())));
    }
    if cache.stages.len() != model.nets.len() {
        return Err(Error::Shape("cache does not belong to this model".into()));
    }
    let mut du = du_final.clone();
    for k in (0..model.nets.len()).rev() {
        let st = &cache.stages[k];
        let grads: Vec<(GradientField, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (dv, z, _) = backward_v(&st.factors[i], &du.image(i), solver)?;
                let dgamma = backward_gamma(&z, &cache.f.image(i), &st.output.image(i))?;
                Ok((dv, dgamma))
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| stage_error(k, e))?;
        let mut dv = Tensor4::zeros(n, 2 * c, h, w);
        let mut dpre = Tensor4::zeros(n, 1, h, w);
        for (i, (field, dgamma)) in grads.into_iter().enumerate() {
            let s = dv.sample_mut(i);
            let m = field.dx.len();
            s[..m].copy_from_slice(&field.dx);
            s[m..].copy_from_slice(&field.dy);
            // γ enters the system as max(pre, floor)
            for ((d, &pre), gv) in dpre.plane_mut(i, 0).iter_mut().zip(st.net.gamma_pre.plane(i, 0)).zip(dgamma) {
                *d = if pre > GAMMA_FLOOR { gv } else { 0.0 };
            }
        }
        let skip = (model.arch.residual_v && k > 0).then(|| dv.clone());
        match model.nets[k].backward(&st.net, dv, dpre, k > 0)? {
            Some(mut d) => {
                if let Some(dv) = &skip {
                    add_gradient_adjoint(&mut d, dv);
                }
                du = d;
            }
            None => break,
        }
    }
    Ok(())
}

/// `Σ r ∘ u^K` for a fixed random `r`: a smooth scalar for verifying
/// [`cascade_backward`] by finite differences.
pub struct CascadeObjective {
    pub model: CascadeModel,
    pub guidance: Option<Tensor4>,
    pub solver: SolverConfig,
    pub mode: Mode,
    pub projection_seed: u64,
}

impl CascadeObjective {
    fn projection(&self, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl Objective for CascadeObjective {
    fn value(&self, input: &Tensor4) -> Result<f64> {
        let (u, _) = cascade_forward(&self.model, input, self.guidance.as_ref(), self.mode, &self.solver)?;
        Ok(u.data().iter().zip(self.projection(u.data().len())).map(|(a, b)| a * b).sum())
    }

    fn gradient(&mut self, input: &Tensor4) -> Result<(f64, Option<Tensor4>)> {
        self.model.zero_grad();
        let (u, cache) = cascade_forward(&self.model, input, self.guidance.as_ref(), self.mode, &self.solver)?;
        let r = self.projection(u.data().len());
        let value = u.data().iter().zip(&r).map(|(a, b)| a * b).sum();
        let (n, c, h, w) = u.shape();
        cascade_backward(&mut self.model, &cache, &Tensor4::new(n, c, h, w, r)?, &self.solver)?;
        Ok((value, None))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.params_mut()
    }
}

/// `Σ r ∘ u(v, γ)` for a single reconstruction, with `v` and `γ` as the
/// parameters; isolates the solver backward pass.
pub struct ReconstructObjective {
    pub v: Param,
    pub gamma: Param,
    pub solver: SolverConfig,
    pub projection_seed: u64,
}

impl ReconstructObjective {
    pub fn new(v: &GradientField, gamma: &[f64], solver: SolverConfig, projection_seed: u64) -> Self {
        let mut vals = v.dx.clone();
        vals.extend_from_slice(&v.dy);
        Self {
            v: Param::new("v", vals, false),
            gamma: Param::new("gamma", gamma.to_vec(), false),
            solver,
            projection_seed,
        }
    }

    fn solve(&self, f: &Image) -> Result<(SystemFactor, Image)> {
        let (h, w, c) = f.shape();
        let n = c * h * w;
        let v = GradientField::new(h, w, c, self.v.value[..n].to_vec(), self.v.value[n..].to_vec())?;
        let factor = SystemFactor::new(&GammaMap::new(h, w, self.gamma.value.clone())?)?;
        let (u, _) = reconstruct_with(&factor, f, &v, &self.solver)?;
        Ok((factor, u))
    }

    fn projection(&self, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl Objective for ReconstructObjective {
    fn value(&self, input: &Tensor4) -> Result<f64> {
        let (_, u) = self.solve(&input.image(0))?;
        Ok(u.data().iter().zip(self.projection(u.data().len())).map(|(a, b)| a * b).sum())
    }

    fn gradient(&mut self, input: &Tensor4) -> Result<(f64, Option<Tensor4>)> {
        let f = input.image(0);
        let (factor, u) = self.solve(&f)?;
        let r = self.projection(u.data().len());
        let value = u.data().iter().zip(&r).map(|(a, b)| a * b).sum();
        let (h, w, c) = f.shape();
        let (dv, z, _) = backward_v(&factor, &Image::new(h, w, c, r)?, &self.solver)?;
        self.v.grad = dv.dx.iter().chain(&dv.dy).copied().collect();
        self.gamma.grad = backward_gamma(&z, &f, &u)?;
        Ok((value, None))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.v, &mut self.gamma]
    }
}
