use super::SparseSpd;
use crate::{Error, Result};

/// Number of diagonal-shift retries after a nonpositive pivot.
const SHIFT_RETRIES: usize = 3;

/// Zero-fill incomplete Cholesky factor `M = L̃ L̃ᵀ` on the lower-triangle
/// pattern of a [`SparseSpd`]. Stored row-compressed, diagonal last in each row.
#[derive(Debug, Clone)]
pub struct Ic0 {
    ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Diagonal shift that was needed, zero when the plain factorization succeeded.
    pub shift: f64,
}

impl Ic0 {
    /// Factorizes `a`. A nonpositive pivot triggers a retry on
    /// `a + s I` with `s = 1e-8 * trace / n`, doubled on each further
    /// failure, up to three retries.
    pub fn factorize(a: &SparseSpd) -> Result<Self> {
        let base = 1e-8 * a.trace() / a.dim() as f64;
        let mut shift = 0.0;
        let mut last = None;
        for attempt in 0..=SHIFT_RETRIES {
            match Self::try_factorize(a, shift) {
                Ok(f) => return Ok(f),
                Err((row, pivot)) => last = Some((row, pivot)),
            }
            shift = base * f64::powi(2.0, attempt as i32);
        }
        let (row, pivot) = last.unwrap_or((0, 0.0));
        Err(Error::NonPositivePivot { row, pivot, retries: SHIFT_RETRIES })
    }

    fn try_factorize(a: &SparseSpd, shift: f64) -> std::result::Result<Self, (usize, f64)> {
        let n = a.dim();
        let mut ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(3 * n);
        let mut vals = Vec::with_capacity(3 * n);
        ptr.push(0);
        for i in 0..n {
            let start = cols.len();
            for (j, aij) in a.lower_row(i) {
                if j < i {
                    let mut s = aij;
                    // Σ_k L[i,k] L[j,k] over the shared pattern, k < j
                    for p in start..cols.len() {
                        let k = cols[p];
                        if let Some(ljk) = lookup(&ptr, &cols, &vals, j, k) {
                            s -= vals[p] * ljk;
                        }
                    }
                    let ljj = vals[ptr[j + 1] - 1];
                    cols.push(j);
                    vals.push(s / ljj);
                } else {
                    let s = aij + shift - vals[start..].iter().map(|v| v * v).sum::<f64>();
                    if !(s > 0.0) {
                        return Err((i, s));
                    }
                    cols.push(i);
                    vals.push(s.sqrt());
                }
            }
            ptr.push(cols.len());
        }
        Ok(Self { ptr, cols, vals, shift })
    }

    pub fn dim(&self) -> usize {
        self.ptr.len() - 1
    }

    /// Entry `(i, j)` of the lower factor, zero off-pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        lookup(&self.ptr, &self.cols, &self.vals, i, j).unwrap_or(0.0)
    }

    /// `z = (L̃ L̃ᵀ)⁻¹ r`
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let (s, e) = (self.ptr[i], self.ptr[i + 1]);
            let mut acc = r[i];
            for p in s..e - 1 {
                acc -= self.vals[p] * z[self.cols[p]];
            }
            z[i] = acc / self.vals[e - 1];
        }
        for i in (0..n).rev() {
            let (s, e) = (self.ptr[i], self.ptr[i + 1]);
            z[i] /= self.vals[e - 1];
            let zi = z[i];
            for p in s..e - 1 {
                z[self.cols[p]] -= self.vals[p] * zi;
            }
        }
    }
}

fn lookup(ptr: &[usize], cols: &[usize], vals: &[f64], row: usize, col: usize) -> Option<f64> {
    (ptr[row]..ptr[row + 1]).find(|&p| cols[p] == col).map(|p| vals[p])
}
