//! Generalized Pareto distribution: analytics and threshold-exceedance
//! fitting, optionally with a gamma prior on the shape (GMLE).

use rand::Rng;

use super::{
    fd_hessian, invert_information, EvtFit, Family, GammaPrior, XI_EPS, XI_MAX, XI_MIN,
};
use crate::numerics::bfgs_minimize;
use crate::{Error, Result};

/// GPD cdf `H(y; sigma, xi)` for excesses `y >= 0`.
pub fn gpd_cdf(sigma: f64, xi: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if xi.abs() < XI_EPS {
        1.0 - (-y / sigma).exp()
    } else {
        let t = 1.0 + xi * y / sigma;
        if t <= 0.0 {
            // Beyond the upper endpoint for xi < 0.
            return 1.0;
        }
        1.0 - t.powf(-1.0 / xi)
    }
}

/// GPD density.
pub fn gpd_pdf(sigma: f64, xi: f64, y: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    if xi.abs() < XI_EPS {
        (-y / sigma).exp() / sigma
    } else {
        let t = 1.0 + xi * y / sigma;
        if t <= 0.0 {
            return 0.0;
        }
        t.powf(-1.0 / xi - 1.0) / sigma
    }
}

/// GPD quantile for `p` in `[0, 1)`.
pub fn gpd_quantile(sigma: f64, xi: f64, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "probability must be in [0, 1), got {p}"
        )));
    }
    if xi.abs() < XI_EPS {
        Ok(-sigma * (1.0 - p).ln())
    } else {
        Ok(sigma / xi * ((1.0 - p).powf(-xi) - 1.0))
    }
}

/// Simulate `n` GPD excesses.
pub fn gpd_simulate<R: Rng>(sigma: f64, xi: f64, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>();
            gpd_quantile(sigma, xi, u).expect("u in [0,1)")
        })
        .collect()
}

/// Negative log-likelihood and gradient in `(log sigma, xi)`.
/// Returns infinity outside the feasible region.
pub(super) fn nll_grad_internal(
    theta: &[f64],
    data: &[f64],
    prior: Option<&GammaPrior>,
) -> (f64, Vec<f64>) {
    let log_sigma = theta[0];
    let xi = theta[1];
    let sigma = log_sigma.exp();
    if !sigma.is_finite() || !(XI_MIN..=XI_MAX).contains(&xi) {
        return (f64::INFINITY, vec![0.0; 2]);
    }
    if prior.is_some() && xi <= 0.0 {
        return (f64::INFINITY, vec![0.0; 2]);
    }
    let n = data.len() as f64;
    let mut nll = n * log_sigma;
    let mut g_ls = n;
    let mut g_xi = 0.0;

    if xi.abs() < XI_EPS {
        let sum_y: f64 = data.iter().sum();
        nll += sum_y / sigma;
        g_ls -= sum_y / sigma;
        // Shape gradient by central difference of the exact nll.
        let f = |x: f64| {
            if x.abs() < XI_EPS {
                n * log_sigma + sum_y / sigma
            } else {
                let mut v = n * log_sigma;
                for &y in data {
                    let t = 1.0 + x * y / sigma;
                    if t <= 0.0 {
                        return f64::INFINITY;
                    }
                    v += (1.0 + 1.0 / x) * t.ln();
                }
                v
            }
        };
        let eps = 1e-6;
        g_xi = (f(eps) - f(-eps)) / (2.0 * eps);
    } else {
        let inv_xi = 1.0 / xi;
        for &y in data {
            let z = y / sigma;
            let t = 1.0 + xi * z;
            if t <= 0.0 {
                return (f64::INFINITY, vec![0.0; 2]);
            }
            let log_t = t.ln();
            nll += (1.0 + inv_xi) * log_t;
            let dnll_dt = (1.0 + inv_xi) / t;
            g_ls += dnll_dt * (-xi * z);
            g_xi += -log_t / (xi * xi) + (1.0 + inv_xi) * z / t;
        }
    }
    if let Some(p) = prior {
        nll -= p.log_density(xi);
        g_xi -= p.dlog_density(xi);
    }
    (nll, vec![g_ls, g_xi])
}

/// Fit a GPD to threshold excesses (already shifted by the threshold).
/// `exceed_rate` is the fraction of underlying observations above the
/// threshold and `n_obs` their total count; both feed return-level
/// inference.
pub fn gpd_fit(
    exceedances: &[f64],
    threshold_u: f64,
    exceed_rate: f64,
    n_obs: usize,
    prior: Option<GammaPrior>,
) -> Result<EvtFit> {
    if exceedances.len() < 30 {
        return Err(Error::InvalidInput(format!(
            "need at least 30 exceedances, got {}",
            exceedances.len()
        )));
    }
    if exceedances.iter().any(|&y| !(y > 0.0) || !y.is_finite()) {
        return Err(Error::InvalidInput(
            "exceedances must be strictly positive and finite".into(),
        ));
    }
    if !(0.0 < exceed_rate && exceed_rate <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "exceedance rate {exceed_rate} outside (0, 1]"
        )));
    }
    let mean = exceedances.iter().sum::<f64>() / exceedances.len() as f64;
    let xi0 = prior.map_or(0.1, |p| p.mean());
    let start = [mean.max(1e-10).ln(), xi0];

    let res = bfgs_minimize(
        |theta| nll_grad_internal(theta, exceedances, prior.as_ref()),
        &start,
        1e-6 * (exceedances.len() as f64).sqrt(),
        300,
    )?;
    if !res.converged {
        return Err(Error::NonConvergence(format!(
            "GPD fit: gradient norm {:.3e} after {} iterations",
            res.grad_norm, res.iterations
        )));
    }
    let sigma = res.x[0].exp();
    let xi = res.x[1];
    let boundary = (xi - XI_MIN).abs() < 1e-3 || (XI_MAX - xi).abs() < 1e-3;

    let info = fd_hessian(
        |theta| nll_grad_internal(theta, exceedances, prior.as_ref()).1,
        &res.x,
    );
    let cov_internal = invert_information(&info)?;
    // Transform (log sigma, xi) covariance to (sigma, xi).
    let j = [sigma, 1.0];
    let cov = (0..2)
        .map(|i| (0..2).map(|k| j[i] * cov_internal[i][k] * j[k]).collect())
        .collect();

    let (nll_plain, _) = nll_grad_internal(&res.x, exceedances, None);
    Ok(EvtFit {
        family: Family::Gpd,
        params: vec![sigma, xi],
        cov,
        loglik: -nll_plain,
        threshold_u: Some(threshold_u),
        exceed_rate: Some(exceed_rate),
        n_obs,
        boundary,
        prior,
    })
}

/// Peaks-over-threshold convenience: extract excesses above `threshold`
/// from raw amounts and fit.
pub fn gpd_fit_pot(amounts: &[f64], threshold: f64, prior: Option<GammaPrior>) -> Result<EvtFit> {
    let exceedances: Vec<f64> = amounts
        .iter()
        .filter(|&&y| y > threshold)
        .map(|&y| y - threshold)
        .collect();
    let rate = exceedances.len() as f64 / amounts.len() as f64;
    gpd_fit(&exceedances, threshold, rate, amounts.len(), prior)
}
