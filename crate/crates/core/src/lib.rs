//! Image restoration by alternating minimization.
//!
//! Two layers share one set of primitives:
//!
//! * [`classic`]: handcrafted proximal alternating minimization (TV/L1, L0,
//!   hyper-Laplacian Lp) with penalty continuation and FFT or PCG u-solves.
//! * [`cascade`]: the learned variant, where a small convolutional network
//!   predicts the auxiliary gradient field `v` and a per-pixel fidelity
//!   weight `gamma`, and a sparse reconstruction layer `(Γ + DᵀD) u = Γf + Dᵀv`
//!   is differentiated analytically so the whole cascade trains end to end.
//!
//! Supporting modules: [`image`] (containers, derivative operators, metrics,
//! I/O), [`solver`] (system assembly, IC(0)-preconditioned CG, backward
//! passes), [`nn`] (conv / batch-norm / ReLU layers with SGD and gradient
//! checking) and [`synth`] (procedural depth/RGB scenes).

pub mod cascade;
pub mod classic;
pub mod cli;
mod error;
pub mod image;
pub mod nn;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use image::{GradientField, Image};
