//! Handcrafted alternating minimization with penalty continuation.
//!
//! The energy `(λ/2)‖u - f‖² + Φ(Du)` is split with `v ≈ Du` and minimized
//! by alternating a pointwise prox (v-step) with a quadratic u-step while
//! the coupling weight β grows geometrically.

mod am;
mod fft;
pub mod prox;

pub use am::{am_solve, AmConfig, AmRecord, AmTrace, Backend, ContinuationSchedule};
pub use fft::{u_subproblem_fft, FftBoundary};
pub use prox::{prox_l0, prox_l1, prox_lp};

use crate::image::GradientField;
use crate::{Error, Result};

/// Sparsity penalty `φ` applied to each gradient component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// `|v|` (anisotropic total variation)
    L1,
    /// `1{v ≠ 0}`
    L0,
    /// `|v|^p`, `p ∈ (0, 1]` (hyper-Laplacian)
    Lp(f64),
}

impl Regularizer {
    pub fn lp(p: f64) -> Result<Self> {
        if p > 0.0 && p <= 1.0 {
            Ok(Regularizer::Lp(p))
        } else {
            Err(Error::InvalidArgument(format!("p must lie in (0, 1], got {p}")))
        }
    }

    /// `φ(v)` for one sample.
    pub fn penalty(&self, v: f64) -> f64 {
        match *self {
            Regularizer::L1 => v.abs(),
            Regularizer::L0 => (v != 0.0) as u8 as f64,
            Regularizer::Lp(p) => v.abs().powf(p),
        }
    }

    /// `Φ(v) = Σ φ(v_x) + φ(v_y)`
    pub fn total(&self, v: &GradientField) -> f64 {
        v.dx.iter().chain(&v.dy).map(|&s| self.penalty(s)).sum()
    }

    /// The v-step `argmin_v Φ(v) + (β/2)‖v - z‖²`.
    pub fn prox(&self, z: &GradientField, beta: f64) -> Result<GradientField> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        match *self {
            Regularizer::L1 => prox_l1(z, 1.0 / beta),
            Regularizer::L0 => prox_l0(z, 2.0 / beta),
            Regularizer::Lp(p) => prox_lp(z, beta, p),
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    /// `l1`, `tv`, `l0`, or `lp:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "tv" => Ok(Regularizer::L1),
            "l0" => Ok(Regularizer::L0),
            other => match other.strip_prefix("lp:") {
                Some(p) => Regularizer::lp(p.parse().map_err(|_| Error::Config(format!("bad exponent {p:?}")))?),
                None => Err(Error::Config(format!("unknown regularizer {s:?}"))),
            },
        }
    }
}
