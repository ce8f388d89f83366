//! Gamma maximum likelihood fit, the conventional bulk model for daily
//! precipitation.

use statrs::function::gamma::{digamma, ln_gamma};

use super::{fd_hessian, invert_information, EvtFit, Family};
use crate::numerics::brent_root;
use crate::{Error, Result};

fn nll(shape: f64, rate: f64, n: f64, sum_y: f64, sum_ln: f64) -> f64 {
    -(n * shape * rate.ln() + (shape - 1.0) * sum_ln - rate * sum_y - n * ln_gamma(shape))
}

/// Fit a gamma distribution by maximum likelihood: the shape solves
/// `log k - digamma(k) = log(mean) - mean(log y)` and the rate is
/// `shape / mean`.
pub fn gamma_fit(amounts: &[f64]) -> Result<EvtFit> {
    if amounts.len() < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 observations, got {}",
            amounts.len()
        )));
    }
    if amounts.iter().any(|&y| !(y > 0.0) || !y.is_finite()) {
        return Err(Error::InvalidInput(
            "amounts must be strictly positive and finite".into(),
        ));
    }
    let n = amounts.len() as f64;
    let mean = amounts.iter().sum::<f64>() / n;
    let mean_ln = amounts.iter().map(|y| y.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_ln;
    if !(s > 0.0) {
        return Err(Error::InvalidInput(
            "degenerate sample for a gamma fit".into(),
        ));
    }
    // log k - digamma(k) is strictly decreasing from +inf to 0.
    let f = |k: f64| k.ln() - digamma(k) - s;
    let mut lo = 1e-8;
    let mut hi = (3.0 - s + ((s - 3.0) * (s - 3.0) + 24.0 * s).sqrt()) / (12.0 * s);
    while f(hi) > 0.0 && hi < 1e12 {
        hi *= 4.0;
    }
    while f(lo) < 0.0 && lo > 1e-300 {
        lo /= 4.0;
    }
    let shape = brent_root(f, lo, hi, 1e-12, 200)?;
    let rate = shape / mean;

    let sum_y = mean * n;
    let sum_ln = mean_ln * n;
    let grad = |theta: &[f64]| {
        let (k, r) = (theta[0], theta[1]);
        vec![
            -(n * r.ln() + sum_ln - n * digamma(k)),
            -(n * k / r - sum_y),
        ]
    };
    let info = fd_hessian(grad, &[shape, rate]);
    let cov = invert_information(&info)?;

    Ok(EvtFit {
        family: Family::Gamma,
        params: vec![shape, rate],
        cov,
        loglik: -nll(shape, rate, n, sum_y, sum_ln),
        threshold_u: None,
        exceed_rate: None,
        n_obs: amounts.len(),
        boundary: false,
        prior: None,
    })
}
