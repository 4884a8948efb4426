//! The spatially weighted reconstruction system `(Γ + DᵀD) u = Γf + Dᵀv`.
//!
//! [`assemble`] builds the 5-point Neumann system, [`Ic0`] its zero-fill
//! incomplete Cholesky factor, and [`pcg_solve`] the preconditioned CG
//! iteration. [`SystemFactor`] bundles matrix and preconditioner so one
//! factorization serves the forward solve and both backward passes.

mod direct;
mod ic0;
mod pcg;
mod reconstruct;

pub use direct::BandedCholesky;
pub use ic0::Ic0;
pub use pcg::{cg_solve, pcg_solve, SolveReport};
pub use reconstruct::{
    backward_gamma, backward_v, reconstruct, reconstruct_with, SolverConfig, SystemFactor,
};

use std::fmt::Write as _;

use crate::{Error, Result};

/// Values below this are raised to it at assembly.
pub const GAMMA_FLOOR: f64 = 1e-6;

/// Per-pixel nonnegative data-fidelity weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl GammaMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Shape(format!(
                "gamma map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("gamma values must be finite and >= 0, got {v}")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::Singular("gamma is zero everywhere".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Symmetric 5-point-stencil matrix on an `height x width` grid.
///
/// `right[i]` couples pixel `i` with `i + 1` (zero in the last column) and
/// `down[i]` couples `i` with `i + width` (zero in the last row).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    height: usize,
    width: usize,
    pub(crate) diag: Vec<f64>,
    pub(crate) right: Vec<f64>,
    pub(crate) down: Vec<f64>,
}

/// `Γ + DᵀD` with the Neumann Laplacian. Interior rows have diagonal
/// `γᵢ + 4` and `-1` neighbours; border rows lose the missing neighbours.
pub fn assemble(gamma: &GammaMap) -> Result<SparseSpd> {
    if gamma.values.iter().all(|&v| v == 0.0) {
        return Err(Error::Singular("gamma is zero everywhere".into()));
    }
    let (h, w) = (gamma.height, gamma.width);
    let n = h * w;
    let mut diag: Vec<f64> = gamma.values.iter().map(|&g| g.max(GAMMA_FLOOR)).collect();
    let mut right = vec![0.0; n];
    let mut down = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                right[i] = -1.0;
                diag[i] += 1.0;
                diag[i + 1] += 1.0;
            }
            if y + 1 < h {
                down[i] = -1.0;
                diag[i] += 1.0;
                diag[i + w] += 1.0;
            }
        }
    }
    Ok(SparseSpd { height: h, width: w, diag, right, down })
}

impl SparseSpd {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entry `(i, j)`; zero outside the stencil.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let w = self.width;
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if lo == hi {
            self.diag[lo]
        } else if hi == lo + 1 && lo % w + 1 < w {
            self.right[lo]
        } else if hi == lo + w {
            self.down[lo]
        } else {
            0.0
        }
    }

    /// `out = A x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        for i in 0..self.dim() {
            out[i] = self.diag[i] * x[i];
        }
        for y in 0..h {
            for xx in 0..w {
                let i = y * w + xx;
                if xx + 1 < w {
                    let a = self.right[i];
                    out[i] += a * x[i + 1];
                    out[i + 1] += a * x[i];
                }
                if y + 1 < h {
                    let a = self.down[i];
                    out[i] += a * x[i + w];
                    out[i + w] += a * x[i];
                }
            }
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    /// Lower-triangle pattern of row `i` as `(column, value)`, ascending,
    /// diagonal last.
    pub(crate) fn lower_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let w = self.width;
        let up = (i >= w).then(|| (i - w, self.down[i - w]));
        let left = (!i.is_multiple_of(w)).then(|| (i - 1, self.right[i - 1]));
        up.into_iter().chain(left).chain(std::iter::once((i, self.diag[i])))
    }

    /// Row-major dense copy. Intended for small verification problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for (j, v) in self.lower_row(i) {
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        d
    }

    /// Matrix Market coordinate dump (symmetric, lower triangle).
    pub fn to_matrix_market(&self) -> String {
        let n = self.dim();
        let entries: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| self.lower_row(i).map(move |(j, v)| (i, j, v)))
            .filter(|e| e.2 != 0.0)
            .collect();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{n} {n} {}", entries.len());
        for (i, j, v) in entries {
            let _ = writeln!(s, "{} {} {v:.17e}", i + 1, j + 1);
        }
        s
    }
}
