//! Parametric extreme-value baselines and diagnostics.
//!
//! Four families share one fit container: GPD for threshold exceedances,
//! GEV for block maxima, the extended GPD (power-transformed GPD cdf)
//! for full positive samples, and gamma as the conventional bulk model.
//! GPD and GEV support generalized maximum likelihood: a gamma prior on
//! the shape parameter added to the log-likelihood, which stabilizes
//! small-sample tail estimates.
//!
//! Interval machinery (delta method and profile likelihood in the
//! return-level parameterization) lives in [`intervals`]; threshold
//! diagnostics (mean residual life, shape stability) in [`diagnostics`].

mod diagnostics;
mod egpd;
mod gamma;
mod gev;
mod gpd;
mod intervals;

pub use diagnostics::{mean_residual_life, shape_stability, DiagnosticPoint, DiagnosticSeries};
pub use egpd::{
    egpd1_cdf, egpd1_fit, egpd1_pdf, egpd1_quantile, egpd1_simulate, EgpdParams,
};
pub use gamma::gamma_fit;
pub use gev::{annual_blocks, gev_fit, gev_return_level};
pub use gpd::{
    gpd_cdf, gpd_fit, gpd_fit_pot, gpd_pdf, gpd_quantile, gpd_simulate,
};
pub use intervals::{gpd_return_level, rl_interval_delta, rl_interval_profile};

use crate::{Error, Result};

/// Shape parameters below this magnitude use the exponential/Gumbel
/// limit formulas.
pub(crate) const XI_EPS: f64 = 1e-8;

/// Feasible shape-parameter search region for the optimizers.
pub(crate) const XI_MIN: f64 = -0.95;
pub(crate) const XI_MAX: f64 = 5.0;

/// Distribution family of a parametric fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gpd,
    Gev,
    Egpd1,
    Gamma,
}

/// Gamma prior on the shape parameter for generalized maximum
/// likelihood. Supported on `xi > 0`.
#[derive(Debug, Clone, Copy)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    /// Weakly informative default: mean 0.2, variance 0.02.
    pub fn default_shape_prior() -> Self {
        Self {
            shape: 2.0,
            rate: 10.0,
        }
    }

    /// Prior with a given mean and variance.
    pub fn with_mean_var(mean: f64, var: f64) -> Self {
        Self {
            shape: mean * mean / var,
            rate: mean / var,
        }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// Log density at `xi`; `-inf` outside the support.
    pub fn log_density(&self, xi: f64) -> f64 {
        if xi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - statrs::function::gamma::ln_gamma(self.shape)
            + (self.shape - 1.0) * xi.ln()
            - self.rate * xi
    }

    /// Derivative of the log density at `xi > 0`.
    pub(crate) fn dlog_density(&self, xi: f64) -> f64 {
        (self.shape - 1.0) / xi - self.rate
    }
}

/// A fitted parametric baseline with its parameter covariance.
#[derive(Debug, Clone)]
pub struct EvtFit {
    pub family: Family,
    /// Natural-scale parameters:
    /// GPD `[sigma, xi]`, GEV `[mu, sigma, xi]`,
    /// EGPD `[kappa, sigma, xi]`, Gamma `[shape, rate]`.
    pub params: Vec<f64>,
    /// Covariance of `params` from the inverse observed information of
    /// the objective that was maximized.
    pub cov: Vec<Vec<f64>>,
    /// Log-likelihood of the data at `params` (prior excluded).
    pub loglik: f64,
    /// POT threshold (GPD only).
    pub threshold_u: Option<f64>,
    /// Fraction of underlying observations exceeding the threshold
    /// (GPD only).
    pub exceed_rate: Option<f64>,
    /// Number of observations behind `exceed_rate` (GPD), otherwise the
    /// fitted sample size.
    pub n_obs: usize,
    /// Set when the shape estimate stopped at the edge of the searched
    /// region; the fit is still returned.
    pub boundary: bool,
    /// Prior used during fitting, when any.
    pub prior: Option<GammaPrior>,
}

impl EvtFit {
    pub(crate) fn sigma_xi(&self) -> (f64, f64) {
        match self.family {
            Family::Gpd => (self.params[0], self.params[1]),
            Family::Gev | Family::Egpd1 => (self.params[1], self.params[2]),
            Family::Gamma => panic!("gamma fit has no (sigma, xi)"),
        }
    }
}

/// Finite-difference Hessian of `f` (via its gradient) at `x`,
/// symmetrized; used for observed information at an optimum.
pub(crate) fn fd_hessian<F>(mut grad: F, x: &[f64]) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        let step = 1e-5 * (1.0 + x[i].abs());
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        hi[i] += step;
        lo[i] -= step;
        let ghi = grad(&hi);
        let glo = grad(&lo);
        for j in 0..n {
            h[i][j] = (ghi[j] - glo[j]) / (2.0 * step);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Invert a small symmetric information matrix into a covariance.
pub(crate) fn invert_information(info: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = info.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| info[i][j]);
    let inv = m.try_inverse().ok_or_else(|| {
        Error::Numeric("observed information matrix is singular".into())
    })?;
    Ok((0..n)
        .map(|i| (0..n).map(|j| inv[(i, j)]).collect())
        .collect())
}
