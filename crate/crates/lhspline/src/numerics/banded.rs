//! Symmetric positive-definite banded matrices with an in-place banded
//! Cholesky factorization. Bandwidth 1 covers the spline Gram matrix,
//! bandwidth 2 the Fisher-scoring system in second-difference coordinates.

use crate::{Error, Result};

/// Symmetric banded matrix stored by diagonals:
/// `diag[k][j] = A[j + k][j]` for `k = 0..=bandwidth`.
#[derive(Debug, Clone)]
pub struct SymBanded {
    n: usize,
    bandwidth: usize,
    diag: Vec<Vec<f64>>,
}

impl SymBanded {
    /// Zero matrix of size `n` with the given bandwidth.
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let diag = (0..=bandwidth)
            .map(|k| vec![0.0; n.saturating_sub(k)])
            .collect();
        Self { n, bandwidth, diag }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `A[j + k][j]` (lower triangle). `k <= bandwidth`.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.diag[k][j]
    }

    pub fn set(&mut self, k: usize, j: usize, value: f64) {
        self.diag[k][j] = value;
    }

    pub fn add(&mut self, k: usize, j: usize, value: f64) {
        self.diag[k][j] += value;
    }

    /// Banded Cholesky factorization `A = L L^T`. Fails if a pivot is not
    /// strictly positive (matrix not positive definite to working
    /// precision).
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.n;
        let p = self.bandwidth;
        let mut l = self.diag.clone();
        for j in 0..n {
            let mut d = l[0][j];
            for k in 1..=p.min(j) {
                d -= l[k][j - k] * l[k][j - k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Numeric(format!(
                    "banded Cholesky pivot {d:e} at index {j} is not positive"
                )));
            }
            let dj = d.sqrt();
            l[0][j] = dj;
            let rows = p.min(n - 1 - j);
            for i in 1..=rows {
                let mut s = l[i][j];
                // L[j+i][j-k'] * L[j][j-k'] contributes only while both
                // entries stay inside the band.
                for kp in 1..=j.min(p.saturating_sub(i)) {
                    s -= l[i + kp][j - kp] * l[kp][j - kp];
                }
                l[i][j] = s / dj;
            }
        }
        Ok(BandedCholesky {
            n,
            bandwidth: p,
            low: l,
        })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    low: Vec<Vec<f64>>,
}

impl BandedCholesky {
    /// Solve `A x = b` given `A = L L^T`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let p = self.bandwidth;
        debug_assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for j in 0..n {
            let mut s = y[j];
            for k in 1..=p.min(j) {
                s -= self.low[k][j - k] * y[j - k];
            }
            y[j] = s / self.low[0][j];
        }
        let mut x = y;
        for j in (0..n).rev() {
            let mut s = x[j];
            for k in 1..=p.min(n - 1 - j) {
                s -= self.low[k][j] * x[j + k];
            }
            x[j] = s / self.low[0][j];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn random_spd_banded(n: usize, bw: usize, seed: u64) -> (SymBanded, DMatrix<f64>) {
        let mut rng = crate::numerics::rng_from_seed(seed);
        let mut a = SymBanded::zeros(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..=bw.min(n - 1 - j) {
                let v: f64 = rng.random_range(-1.0..1.0);
                let v = if k == 0 { v.abs() + (bw as f64) * 2.5 } else { v };
                a.set(k, j, v);
                dense[(j + k, j)] = v;
                dense[(j, j + k)] = v;
            }
        }
        (a, dense)
    }

    #[test]
    fn banded_solve_matches_dense() {
        for (n, bw, seed) in [(5usize, 1usize, 1u64), (12, 2, 2), (40, 2, 3), (7, 3, 4)] {
            let (a, dense) = random_spd_banded(n, bw, seed);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let x = a.cholesky().unwrap().solve(&b);
            let xd = dense
                .clone()
                .lu()
                .solve(&nalgebra::DVector::from_vec(b.clone()))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - xd[i]).abs() < 1e-10,
                    "n={n} bw={bw} i={i}: banded {} vs dense {}",
                    x[i],
                    xd[i]
                );
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymBanded::zeros(3, 1);
        a.set(0, 0, 1.0);
        a.set(0, 1, -2.0);
        a.set(0, 2, 1.0);
        assert!(a.cholesky().is_err());
    }
}
