use super::fft::{u_subproblem_fft, FftBoundary};
use super::Regularizer;
use crate::image::{gradient, Image};
use crate::solver::{reconstruct_with, GammaMap, SolverConfig, SystemFactor};
use crate::{Error, Result};

/// Geometric penalty continuation `β ← αβ` from `beta0` while `β ≤ beta_max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContinuationSchedule {
    pub beta0: f64,
    pub alpha: f64,
    pub beta_max: f64,
    /// Data-term weight λ.
    pub lambda: f64,
}

impl ContinuationSchedule {
    /// `beta0 = 2λ`, `α = 2`, `beta_max = 2⁸λ` (eight rounds).
    pub fn with_lambda(lambda: f64) -> Self {
        Self { beta0: 2.0 * lambda, alpha: 2.0, beta_max: 256.0 * lambda, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta0 > 0.0 && self.alpha > 1.0 && self.beta_max >= self.beta0 && self.lambda > 0.0;
        if ok && [self.beta0, self.alpha, self.beta_max, self.lambda].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid schedule: need beta0 > 0, alpha > 1, beta_max >= beta0, lambda > 0; got {self:?}"
            )))
        }
    }

    /// The β of every continuation round.
    pub fn betas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut b = self.beta0;
        while b <= self.beta_max * (1.0 + 1e-12) {
            out.push(b);
            b *= self.alpha;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Fft,
    Pcg,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fft" => Ok(Backend::Fft),
            "pcg" => Ok(Backend::Pcg),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmConfig {
    pub regularizer: Regularizer,
    pub schedule: ContinuationSchedule,
    pub backend: Backend,
    pub fft_boundary: FftBoundary,
    /// Intensities are divided by this before solving so λ and β refer to a
    /// unit-range image.
    pub data_range: f64,
    /// (v, u) sweeps per β.
    pub inner_iterations: usize,
    pub solver: SolverConfig,
}

impl AmConfig {
    pub fn new(regularizer: Regularizer, schedule: ContinuationSchedule, backend: Backend) -> Self {
        Self {
            regularizer,
            schedule,
            backend,
            fft_boundary: FftBoundary::Symmetric,
            data_range: 255.0,
            inner_iterations: 1,
            solver: SolverConfig { tol: 1e-8, max_iter: 1000 },
        }
    }
}

/// One continuation round.
#[derive(Debug, Clone, PartialEq)]
pub struct AmRecord {
    pub iteration: usize,
    pub beta: f64,
    /// `(λ/2)‖u - f‖² + Φ(v) + (β/2)‖Du - v‖²` at the end of the round.
    pub objective: f64,
    /// `‖Du - v‖`
    pub gap: f64,
    /// Objective after every v-step and u-step of the round, in order.
    pub half_steps: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmTrace {
    pub records: Vec<AmRecord>,
}

impl AmTrace {
    pub const CSV_HEADER: &'static str = "iteration,beta,objective,gap";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{},{:.9e},{:.9e},{:.9e}\n", r.iteration, r.beta, r.objective, r.gap));
        }
        s
    }
}

/// Alternating minimization: v-step (prox), u-step (backend solve), `β ← αβ`.
/// Distances and objectives in the trace refer to the normalized image `f / data_range`.
pub fn am_solve(f: &Image, cfg: &AmConfig) -> Result<(Image, AmTrace)> {
    cfg.schedule.validate()?;
    if !(cfg.data_range > 0.0) || cfg.inner_iterations == 0 {
        return Err(Error::Config("data_range must be positive and inner_iterations >= 1".into()));
    }
    let scale = cfg.data_range;
    let f = f.map(|v| v / scale);
    let lambda = cfg.schedule.lambda;
    let (h, w, _) = f.shape();
    let objective = |u: &Image, v: &crate::image::GradientField, beta: f64| {
        let data: f64 = u.data().iter().zip(f.data()).map(|(a, b)| (a - b).powi(2)).sum();
        let coupling = gradient(u).sub(v).norm();
        0.5 * lambda * data + cfg.regularizer.total(v) + 0.5 * beta * coupling * coupling
    };
    let mut u = f.clone();
    let mut trace = AmTrace::default();
    for (k, beta) in cfg.schedule.betas().into_iter().enumerate() {
        let mut half_steps = Vec::with_capacity(2 * cfg.inner_iterations);
        let mut v = gradient(&u);
        for _ in 0..cfg.inner_iterations {
            v = cfg.regularizer.prox(&gradient(&u), beta)?;
            half_steps.push(objective(&u, &v, beta));
            u = match cfg.backend {
                Backend::Fft => u_subproblem_fft(&f, &v, lambda, beta, cfg.fft_boundary)?,
                Backend::Pcg => {
                    let factor = SystemFactor::new(&GammaMap::constant(h, w, lambda / beta)?)?;
                    let (u, reports) = reconstruct_with(&factor, &f, &v, &cfg.solver)?;
                    if let Some(r) = reports.iter().find(|r| !r.converged) {
                        return Err(Error::NotConverged {
                            what: format!("PCG u-step at round {k} (residual {:e})", r.relative_residual),
                            iterations: r.iterations,
                            location: None,
                        });
                    }
                    u
                }
            };
            half_steps.push(objective(&u, &v, beta));
        }
        let gap = gradient(&u).sub(&v).norm();
        trace.records.push(AmRecord {
            iteration: k,
            beta,
            objective: *half_steps.last().unwrap_or(&0.0),
            gap,
            half_steps,
        });
    }
    Ok((u.map(|v| v * scale), trace))
}
