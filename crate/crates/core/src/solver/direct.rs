use super::SparseSpd;
use crate::{Error, Result};

/// Exact Cholesky factor of a [`SparseSpd`] in band storage (bandwidth =
/// grid width). Reference direct solver for verification and benchmarks;
/// costs `O(n · width²)`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factorize(a: &SparseSpd) -> Result<Self> {
        let n = a.dim();
        let bw = a.width().min(n.saturating_sub(1)).max(1);
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        let at = |i: usize, j: usize| i * stride + (j + bw - i);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = a.get(i, j);
                for k in i.saturating_sub(bw).max(j.saturating_sub(bw))..j {
                    s -= band[at(i, k)] * band[at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Singular(format!("direct Cholesky pivot {s:e} at row {i}")));
                    }
                    band[at(i, i)] = s.sqrt();
                } else {
                    band[at(i, j)] = s / band[at(j, j)];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        let at = |i: usize, j: usize| i * stride + (j + bw - i);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[at(i, k)] * y[k];
            }
            y[i] = s / self.band[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.band[at(k, i)] * y[k];
            }
            y[i] = s / self.band[at(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::super::{assemble, GammaMap};
    use super::*;

    #[test]
    fn solves_grid_system() {
        let g: Vec<f64> = (0..35).map(|i| 0.05 + (i % 4) as f64).collect();
        let a = assemble(&GammaMap::new(7, 5, g).unwrap()).unwrap();
        let b: Vec<f64> = (0..35).map(|i| (i as f64).sqrt() - 2.0).collect();
        let x = BandedCholesky::factorize(&a).unwrap().solve(&b);
        let mut ax = vec![0.0; 35];
        a.matvec(&x, &mut ax);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn single_column_and_pixel() {
        for (h, w) in [(6, 1), (1, 1), (1, 6)] {
            let a = assemble(&GammaMap::constant(h, w, 0.5).unwrap()).unwrap();
            let b = vec![1.0; h * w];
            let x = BandedCholesky::factorize(&a).unwrap().solve(&b);
            // constant rhs and constant gamma: x = b / gamma
            assert!(x.iter().all(|v| (v - 2.0).abs() < 1e-12), "{h}x{w}");
        }
    }
}
