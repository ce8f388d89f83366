//! Natural cubic splines on a knot grid and the second-derivative
//! roughness penalty.
//!
//! A spline is stored as knot values plus knot second derivatives. The
//! natural boundary conditions (zero second derivative at the first and
//! last knot) make the curve exactly linear outside the knot range, which
//! is what produces the algebraic tail once the fitted log-density is
//! exponentiated back to the original scale.
//!
//! The penalty is kept in factored banded form `Q R^-1 Q^T`, where `Q^T`
//! maps knot values to scaled second differences and `R` is the Gram
//! matrix of the interior intervals. `g^T (Q R^-1 Q^T) g` equals
//! `integral of g''(x)^2` for the natural interpolant of `g`, and the
//! factored form keeps every solve banded.

use crate::numerics::banded::{BandedCholesky, SymBanded};
use crate::{Error, Result};

/// Natural cubic spline: knot values and second derivatives, linear
/// extrapolation beyond the boundary knots.
#[derive(Debug, Clone)]
pub struct SplineModel {
    knots: Vec<f64>,
    values: Vec<f64>,
    second_derivs: Vec<f64>,
    boundary_slopes: (f64, f64),
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 {
        return Err(Error::InvalidInput(
            "spline needs at least 2 knots".into(),
        ));
    }
    for w in knots.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidInput(format!(
                "knots must be strictly increasing; got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl SplineModel {
    /// Interpolating natural cubic spline through `(knots, values)`.
    pub fn natural_interpolant(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_knots(&knots)?;
        if values.len() != knots.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for {} knots",
                values.len(),
                knots.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite knot value".into()));
        }
        let n = knots.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            // R gamma = Q^T values, with R the interior Gram matrix.
            let mut r = SymBanded::zeros(n - 2, 1);
            for j in 0..n - 2 {
                r.set(0, j, (h[j] + h[j + 1]) / 3.0);
                if j + 1 < n - 2 {
                    r.set(1, j, h[j + 1] / 6.0);
                }
            }
            let rhs: Vec<f64> = (0..n - 2)
                .map(|j| {
                    (values[j + 2] - values[j + 1]) / h[j + 1]
                        - (values[j + 1] - values[j]) / h[j]
                })
                .collect();
            let gamma = r.cholesky()?.solve(&rhs);
            second[1..n - 1].copy_from_slice(&gamma);
        }
        Ok(Self::from_parts(knots, values, second))
    }

    /// Assemble a spline from precomputed parts. The natural boundary
    /// convention (`second_derivs` endpoints zero) is the caller's
    /// responsibility; evaluation is piecewise cubic either way.
    pub fn from_parts(knots: Vec<f64>, values: Vec<f64>, second_derivs: Vec<f64>) -> Self {
        let n = knots.len();
        assert_eq!(values.len(), n);
        assert_eq!(second_derivs.len(), n);
        let left = if n >= 2 {
            let h = knots[1] - knots[0];
            (values[1] - values[0]) / h - h / 6.0 * (2.0 * second_derivs[0] + second_derivs[1])
        } else {
            0.0
        };
        let right = if n >= 2 {
            let h = knots[n - 1] - knots[n - 2];
            (values[n - 1] - values[n - 2]) / h
                + h / 6.0 * (2.0 * second_derivs[n - 1] + second_derivs[n - 2])
        } else {
            0.0
        };
        Self {
            knots,
            values,
            second_derivs,
            boundary_slopes: (left, right),
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn second_derivs(&self) -> &[f64] {
        &self.second_derivs
    }

    /// One-sided derivatives at the first and last knot; these are also
    /// the slopes of the linear extrapolation on either side.
    pub fn boundary_slopes(&self) -> (f64, f64) {
        self.boundary_slopes
    }

    fn interval_of(&self, x: f64) -> usize {
        // Rightmost interval start with knot <= x, clamped to valid range.
        match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&x).unwrap())
        {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.knots.len() - 2),
        }
    }

    /// Evaluate the spline; linear extrapolation outside the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        assert!(x.is_finite(), "spline evaluated at non-finite point");
        let n = self.knots.len();
        if x < self.knots[0] {
            return self.values[0] + self.boundary_slopes.0 * (x - self.knots[0]);
        }
        if x > self.knots[n - 1] {
            return self.values[n - 1] + self.boundary_slopes.1 * (x - self.knots[n - 1]);
        }
        let j = self.interval_of(x);
        let h = self.knots[j + 1] - self.knots[j];
        let a = (self.knots[j + 1] - x) / h;
        let b = 1.0 - a;
        a * self.values[j]
            + b * self.values[j + 1]
            + h * h / 6.0
                * ((a * a * a - a) * self.second_derivs[j]
                    + (b * b * b - b) * self.second_derivs[j + 1])
    }

    /// First derivative (one-sided constant slope outside the knots).
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return self.boundary_slopes.0;
        }
        if x >= self.knots[n - 1] {
            return self.boundary_slopes.1;
        }
        let j = self.interval_of(x);
        let h = self.knots[j + 1] - self.knots[j];
        let a = (self.knots[j + 1] - x) / h;
        let b = 1.0 - a;
        (self.values[j + 1] - self.values[j]) / h
            + h / 6.0
                * ((1.0 - 3.0 * a * a) * self.second_derivs[j]
                    + (3.0 * b * b - 1.0) * self.second_derivs[j + 1])
    }

    /// Second derivative; zero outside the knot range.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] || x >= self.knots[n - 1] {
            return 0.0;
        }
        let j = self.interval_of(x);
        let h = self.knots[j + 1] - self.knots[j];
        let a = (self.knots[j + 1] - x) / h;
        a * self.second_derivs[j] + (1.0 - a) * self.second_derivs[j + 1]
    }
}

/// Roughness penalty for natural cubic splines on a fixed knot grid, in
/// factored banded form. For knot values `g`, `quadratic_form(g)` is the
/// integrated squared second derivative of the natural interpolant.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    knots: Vec<f64>,
    h: Vec<f64>,
}

impl PenaltyMatrix {
    pub fn new(knots: &[f64]) -> Result<Self> {
        check_knots(knots)?;
        if knots.len() < 3 {
            return Err(Error::InvalidInput(
                "penalty needs at least 3 knots".into(),
            ));
        }
        let h = knots.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            knots: knots.to_vec(),
            h,
        })
    }

    pub fn n(&self) -> usize {
        self.knots.len()
    }

    fn n_interior(&self) -> usize {
        self.knots.len() - 2
    }

    /// Column coefficients of the second-difference map: column `j` of
    /// `Q` has entries `(a, b, c)` at rows `(j, j+1, j+2)`.
    fn col(&self, j: usize) -> (f64, f64, f64) {
        let a = 1.0 / self.h[j];
        let c = 1.0 / self.h[j + 1];
        (a, -a - c, c)
    }

    /// `Q^T g`: scaled second differences, length `n - 2`.
    pub fn second_difference(&self, g: &[f64]) -> Vec<f64> {
        (0..self.n_interior())
            .map(|j| {
                let (a, b, c) = self.col(j);
                a * g[j] + b * g[j + 1] + c * g[j + 2]
            })
            .collect()
    }

    /// `Q gamma`, length `n`.
    fn apply_q(&self, gamma: &[f64]) -> Vec<f64> {
        let n = self.n();
        let m = self.n_interior();
        let mut out = vec![0.0; n];
        for (j, &gj) in gamma.iter().enumerate().take(m) {
            let (a, b, c) = self.col(j);
            out[j] += a * gj;
            out[j + 1] += b * gj;
            out[j + 2] += c * gj;
        }
        out
    }

    fn gram(&self) -> SymBanded {
        let m = self.n_interior();
        let mut r = SymBanded::zeros(m, 1);
        for j in 0..m {
            r.set(0, j, (self.h[j] + self.h[j + 1]) / 3.0);
            if j + 1 < m {
                r.set(1, j, self.h[j + 1] / 6.0);
            }
        }
        r
    }

    /// Roughness `g^T K g = integral of (g'')^2` for the natural
    /// interpolant of `g` on these knots.
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        let t = self.second_difference(g);
        if t.is_empty() {
            return 0.0;
        }
        let s = self
            .gram()
            .cholesky()
            .expect("interior Gram matrix is positive definite")
            .solve(&t);
        t.iter().zip(&s).map(|(a, b)| a * b).sum()
    }

    /// `K g` where `K = Q R^-1 Q^T`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let t = self.second_difference(g);
        if t.is_empty() {
            return vec![0.0; self.n()];
        }
        let s = self
            .gram()
            .cholesky()
            .expect("interior Gram matrix is positive definite")
            .solve(&t);
        self.apply_q(&s)
    }

    /// Dense `K`, for eigendecompositions and diagnostics.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        // Symmetrize away roundoff.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Factorized solver for `(W + c K) x = rhs` with `W = diag(w)`,
    /// using the second-difference transformation that keeps the system
    /// pentadiagonal.
    pub fn shifted_solver(&self, c: f64, w: &[f64]) -> Result<ShiftedSolver<'_>> {
        let n = self.n();
        if w.len() != n {
            return Err(Error::InvalidInput("weight length mismatch".into()));
        }
        if w.iter().any(|&wi| wi <= 0.0 || !wi.is_finite()) {
            return Err(Error::Numeric("non-positive IRLS weight".into()));
        }
        if !(c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "shift must be positive, got {c}"
            )));
        }
        let m = self.n_interior();
        // B = R + c Q^T W^-1 Q, pentadiagonal.
        let mut b = self.gram();
        for j in 0..m {
            let (aj, bj, cj) = self.col(j);
            b.add(
                0,
                j,
                c * (aj * aj / w[j] + bj * bj / w[j + 1] + cj * cj / w[j + 2]),
            );
        }
        let mut b2 = SymBanded::zeros(m, 2);
        for j in 0..m {
            b2.set(0, j, b.get(0, j));
        }
        for j in 0..m.saturating_sub(1) {
            let (_, bj, cj) = self.col(j);
            let (a1, b1, _) = self.col(j + 1);
            b2.set(
                1,
                j,
                b.get(1, j) + c * (bj * a1 / w[j + 1] + cj * b1 / w[j + 2]),
            );
        }
        for j in 0..m.saturating_sub(2) {
            let (_, _, cj) = self.col(j);
            let (a2, _, _) = self.col(j + 2);
            b2.set(2, j, c * (cj * a2 / w[j + 2]));
        }
        let chol = b2.cholesky()?;
        Ok(ShiftedSolver {
            pen: self,
            c,
            w: w.to_vec(),
            chol,
        })
    }
}

/// Holds the banded factorization of `(W + c K)` in transformed
/// coordinates; solves are `O(n)` per right-hand side.
pub struct ShiftedSolver<'a> {
    pen: &'a PenaltyMatrix,
    c: f64,
    w: Vec<f64>,
    chol: BandedCholesky,
}

impl ShiftedSolver<'_> {
    /// Solve `(W + c K) x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let winv_rhs: Vec<f64> = rhs.iter().zip(&self.w).map(|(r, w)| r / w).collect();
        if self.pen.n_interior() == 0 {
            return winv_rhs;
        }
        let t = self.pen.second_difference(&winv_rhs);
        let gamma = self.chol.solve(&t);
        let q_gamma = self.pen.apply_q(&gamma);
        winv_rhs
            .iter()
            .zip(&q_gamma)
            .zip(&self.w)
            .map(|((wr, qg), w)| wr - self.c * qg / w)
            .collect()
    }

    /// Trace of the hat matrix `A = (W + c K)^-1 W`.
    pub fn hat_trace(&self) -> f64 {
        let n = self.pen.n();
        let mut e = vec![0.0; n];
        let mut trace = 0.0;
        for j in 0..n {
            e[j] = 1.0;
            let x = self.solve(&e);
            trace += self.w[j] * x[j];
            e[j] = 0.0;
        }
        trace
    }
}
