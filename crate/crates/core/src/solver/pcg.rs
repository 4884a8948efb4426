use super::{Ic0, SparseSpd};
use crate::{Error, Result};

/// Outcome of one (P)CG solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// True relative residual `‖b - A x‖ / ‖b‖` of the returned iterate.
    pub relative_residual: f64,
    /// Relative norm of the recurrence residual, starting at iteration 0.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str = "iteration,relative_residual";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (i, r) in self.history.iter().enumerate() {
            s.push_str(&format!("{i},{r:.6e}\n"));
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients from `x = 0`.
///
/// Iterates until the preconditioned residual `sqrt(rᵀ M⁻¹ r)` and the
/// plain residual `‖r‖` have both dropped below `tol` relative to their
/// initial values, or `max_iter` is reached (reported, not an error).
pub fn pcg_solve(a: &SparseSpd, m: &Ic0, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    solve(a, Some(m), b, tol, max_iter)
}

/// Unpreconditioned CG with the same stopping rule as [`pcg_solve`].
pub fn cg_solve(a: &SparseSpd, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    solve(a, None, b, tol, max_iter)
}

fn solve(a: &SparseSpd, m: Option<&Ic0>, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Shape(format!("rhs has {} entries, system has {n}", b.len())));
    }
    let precond = |r: &[f64], z: &mut [f64]| match m {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        let report = SolveReport { iterations: 0, relative_residual: 0.0, history: vec![0.0], converged: true };
        return Ok((x, report));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return Err(Error::Breakdown { iteration: 0, reason: "preconditioner is not positive definite".into() });
    }
    let rz0 = rz;
    let mut history = vec![1.0];
    let mut iterations = 0;
    while iterations < max_iter {
        a.matvec(&p, &mut q);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown {
                iteration: iterations,
                reason: format!("nonpositive curvature pᵀAp = {curvature:e}"),
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iterations += 1;
        let rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        if rel <= tol && (rz_next.max(0.0) / rz0).sqrt() <= tol {
            break;
        }
        if !(rz_next > 0.0) {
            if rz_next == 0.0 {
                break;
            }
            return Err(Error::Breakdown { iteration: iterations, reason: "rᵀM⁻¹r became negative".into() });
        }
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    a.matvec(&x, &mut q);
    let true_res = q.iter().zip(b).map(|(ax, bi)| (bi - ax).powi(2)).sum::<f64>().sqrt() / bnorm;
    let report = SolveReport { iterations, relative_residual: true_res, history, converged: true_res <= tol };
    Ok((x, report))
}
