//! Generalized extreme value distribution for block maxima.

use super::{
    fd_hessian, invert_information, EvtFit, Family, GammaPrior, XI_EPS, XI_MAX, XI_MIN,
};
use crate::numerics::bfgs_minimize;
use crate::{Error, Result};

/// Negative log-likelihood and gradient in `(mu, log sigma, xi)`.
pub(super) fn nll_grad_internal(
    theta: &[f64],
    data: &[f64],
    prior: Option<&GammaPrior>,
) -> (f64, Vec<f64>) {
    let mu = theta[0];
    let log_sigma = theta[1];
    let xi = theta[2];
    let sigma = log_sigma.exp();
    if !sigma.is_finite() || !(XI_MIN..=XI_MAX).contains(&xi) {
        return (f64::INFINITY, vec![0.0; 3]);
    }
    if prior.is_some() && xi <= 0.0 {
        return (f64::INFINITY, vec![0.0; 3]);
    }
    let n = data.len() as f64;
    let mut nll = n * log_sigma;
    let mut g_mu = 0.0;
    let mut g_ls = n;
    let mut g_xi = 0.0;

    if xi.abs() < XI_EPS {
        for &x in data {
            let z = (x - mu) / sigma;
            let emz = (-z).exp();
            nll += z + emz;
            g_mu += (emz - 1.0) / sigma;
            g_ls += z * (emz - 1.0);
        }
        // Shape gradient at the Gumbel point by central difference.
        let f = |xi_val: f64| {
            let mut v = n * log_sigma;
            for &x in data {
                let z = (x - mu) / sigma;
                if xi_val.abs() < XI_EPS {
                    v += z + (-z).exp();
                } else {
                    let t = 1.0 + xi_val * z;
                    if t <= 0.0 {
                        return f64::INFINITY;
                    }
                    v += (1.0 + 1.0 / xi_val) * t.ln() + t.powf(-1.0 / xi_val);
                }
            }
            v
        };
        let eps = 1e-6;
        g_xi = (f(eps) - f(-eps)) / (2.0 * eps);
    } else {
        let inv_xi = 1.0 / xi;
        for &x in data {
            let z = (x - mu) / sigma;
            let t = 1.0 + xi * z;
            if t <= 0.0 {
                return (f64::INFINITY, vec![0.0; 3]);
            }
            let log_t = t.ln();
            let t_pow = t.powf(-inv_xi);
            nll += (1.0 + inv_xi) * log_t + t_pow;
            // d nll / dt, including the t^(-1/xi) term.
            let dnll_dt = (1.0 + inv_xi) / t - t_pow / (xi * t);
            g_mu += dnll_dt * (-xi / sigma);
            g_ls += dnll_dt * (-xi * z);
            let dlog_term = -log_t / (xi * xi) + (1.0 + inv_xi) * z / t;
            let dpow_term = t_pow * (log_t / (xi * xi) - z / (xi * t));
            g_xi += dlog_term + dpow_term;
        }
    }
    if let Some(p) = prior {
        nll -= p.log_density(xi);
        g_xi -= p.dlog_density(xi);
    }
    (nll, vec![g_mu, g_ls, g_xi])
}

/// Fit a GEV distribution to block maxima, optionally with a gamma prior
/// on the shape.
pub fn gev_fit(block_maxima: &[f64], prior: Option<GammaPrior>) -> Result<EvtFit> {
    if block_maxima.len() < 20 {
        return Err(Error::InvalidInput(format!(
            "need at least 20 block maxima, got {}",
            block_maxima.len()
        )));
    }
    if block_maxima.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite block maximum".into()));
    }
    let n = block_maxima.len() as f64;
    let mean = block_maxima.iter().sum::<f64>() / n;
    let var = block_maxima.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::InvalidInput(
            "degenerate block maxima (all values equal)".into(),
        ));
    }
    // Gumbel method-of-moments start.
    let sigma0 = (var.sqrt() * 6.0f64.sqrt() / std::f64::consts::PI).max(1e-10);
    let mu0 = mean - 0.5772 * sigma0;
    let xi0 = prior.map_or(0.1, |p| p.mean());
    let start = [mu0, sigma0.ln(), xi0];

    let res = bfgs_minimize(
        |theta| nll_grad_internal(theta, block_maxima, prior.as_ref()),
        &start,
        1e-6 * n.sqrt(),
        400,
    )?;
    if !res.converged {
        return Err(Error::NonConvergence(format!(
            "GEV fit: gradient norm {:.3e} after {} iterations",
            res.grad_norm, res.iterations
        )));
    }
    let mu = res.x[0];
    let sigma = res.x[1].exp();
    let xi = res.x[2];
    let boundary = (xi - XI_MIN).abs() < 1e-3 || (XI_MAX - xi).abs() < 1e-3;

    let info = fd_hessian(
        |theta| nll_grad_internal(theta, block_maxima, prior.as_ref()).1,
        &res.x,
    );
    let cov_internal = invert_information(&info)?;
    let j = [1.0, sigma, 1.0];
    let cov = (0..3)
        .map(|i| (0..3).map(|k| j[i] * cov_internal[i][k] * j[k]).collect())
        .collect();

    let (nll_plain, _) = nll_grad_internal(&res.x, block_maxima, None);
    Ok(EvtFit {
        family: Family::Gev,
        params: vec![mu, sigma, xi],
        cov,
        loglik: -nll_plain,
        threshold_u: None,
        exceed_rate: None,
        n_obs: block_maxima.len(),
        boundary,
        prior,
    })
}

/// T-year (T-block) return level of a fitted GEV.
pub fn gev_return_level(fit: &EvtFit, t_years: f64) -> Result<f64> {
    if fit.family != Family::Gev {
        return Err(Error::InvalidInput("return level needs a GEV fit".into()));
    }
    if t_years <= 1.0 {
        return Err(Error::InvalidInput(format!(
            "block return period must exceed 1, got {t_years}"
        )));
    }
    let (mu, sigma, xi) = (fit.params[0], fit.params[1], fit.params[2]);
    let y_p = -(1.0 - 1.0 / t_years).ln();
    if xi.abs() < XI_EPS {
        Ok(mu - sigma * y_p.ln())
    } else {
        Ok(mu + sigma / xi * (y_p.powf(-xi) - 1.0))
    }
}

/// Split consecutive observations into maxima of `block_len`-sized
/// blocks, dropping a trailing partial block.
pub fn annual_blocks(observations: &[f64], block_len: usize) -> Vec<f64> {
    observations
        .chunks_exact(block_len)
        .map(|chunk| chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}
