//! Return levels and interval estimates for GPD and GEV fits: the delta
//! method on the observed information, and profile likelihood in the
//! return-level parameterization.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{gev, gpd, EvtFit, Family, XI_EPS, XI_MAX, XI_MIN};
use crate::numerics::{bfgs_minimize, brent_minimize, brent_root};
use crate::{Error, Result};

/// T-year return level of a POT fit: the value whose per-observation
/// exceedance probability is `1 / (T * obs_per_year)`, using the fitted
/// exceedance rate above the threshold.
pub fn gpd_return_level(fit: &EvtFit, t_years: f64, obs_per_year: f64) -> Result<f64> {
    if fit.family != Family::Gpd {
        return Err(Error::InvalidInput("return level needs a GPD fit".into()));
    }
    let u = fit.threshold_u.ok_or_else(|| {
        Error::InvalidInput("GPD fit carries no threshold".into())
    })?;
    let zeta = fit.exceed_rate.ok_or_else(|| {
        Error::InvalidInput("GPD fit carries no exceedance rate".into())
    })?;
    let m = t_years * obs_per_year * zeta;
    if m <= 1.0 {
        return Err(Error::InvalidInput(format!(
            "return period {t_years} yr is inside the threshold exceedance rate"
        )));
    }
    let (sigma, xi) = fit.sigma_xi();
    if xi.abs() < XI_EPS {
        Ok(u + sigma * m.ln())
    } else {
        Ok(u + sigma / xi * (m.powf(xi) - 1.0))
    }
}

fn z_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(0.5 * (1.0 + level))
}

fn chi2_1_quantile(level: f64) -> f64 {
    ChiSquared::new(1.0).unwrap().inverse_cdf(level)
}

/// Delta-method interval for the T-year return level. The GPD variant
/// includes the binomial variance of the exceedance-rate estimate.
pub fn rl_interval_delta(
    fit: &EvtFit,
    t_years: f64,
    obs_per_year: f64,
    level: f64,
) -> Result<(f64, f64)> {
    if !(level >= 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "level must be in [0, 1), got {level}"
        )));
    }
    let z = if level == 0.0 { 0.0 } else { z_quantile(level) };
    match fit.family {
        Family::Gpd => {
            let rl = gpd_return_level(fit, t_years, obs_per_year)?;
            let (sigma, xi) = fit.sigma_xi();
            let zeta = fit.exceed_rate.unwrap();
            let m_big = t_years * obs_per_year * zeta;
            let (dr_dzeta, dr_dsigma, dr_dxi);
            if xi.abs() < XI_EPS {
                dr_dzeta = sigma / zeta;
                dr_dsigma = m_big.ln();
                dr_dxi = sigma * m_big.ln() * m_big.ln() / 2.0;
            } else {
                let pow = m_big.powf(xi);
                dr_dzeta = sigma * pow / zeta;
                dr_dsigma = (pow - 1.0) / xi;
                dr_dxi = -sigma / (xi * xi) * (pow - 1.0) + sigma / xi * pow * m_big.ln();
            }
            let var_zeta = zeta * (1.0 - zeta) / fit.n_obs as f64;
            let g = [dr_dzeta, dr_dsigma, dr_dxi];
            let var = g[0] * g[0] * var_zeta
                + g[1] * g[1] * fit.cov[0][0]
                + g[2] * g[2] * fit.cov[1][1]
                + 2.0 * g[1] * g[2] * fit.cov[0][1];
            let sd = var.max(0.0).sqrt();
            Ok((rl - z * sd, rl + z * sd))
        }
        Family::Gev => {
            let rl = gev::gev_return_level(fit, t_years)?;
            let (_, sigma, xi) = (fit.params[0], fit.params[1], fit.params[2]);
            let y_p = -(1.0 - 1.0 / t_years).ln();
            let (dz_dmu, dz_dsigma, dz_dxi);
            dz_dmu = 1.0;
            if xi.abs() < XI_EPS {
                dz_dsigma = -y_p.ln();
                dz_dxi = sigma * y_p.ln() * y_p.ln() / 2.0;
            } else {
                let pow = y_p.powf(-xi);
                dz_dsigma = (pow - 1.0) / xi;
                dz_dxi = -sigma / (xi * xi) * (pow - 1.0) - sigma / xi * pow * y_p.ln();
            }
            let g = [dz_dmu, dz_dsigma, dz_dxi];
            let mut var = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    var += g[i] * fit.cov[i][j] * g[j];
                }
            }
            let sd = var.max(0.0).sqrt();
            Ok((rl - z * sd, rl + z * sd))
        }
        _ => Err(Error::InvalidInput(
            "delta interval needs a GPD or GEV fit".into(),
        )),
    }
}

/// Penalized negative log-likelihood profiled over the nuisance
/// parameters at a fixed return level `r`.
fn profile_nll_at(
    data: &[f64],
    fit: &EvtFit,
    t_years: f64,
    obs_per_year: f64,
    r: f64,
) -> f64 {
    match fit.family {
        Family::Gpd => {
            let u = fit.threshold_u.unwrap();
            let zeta = fit.exceed_rate.unwrap();
            let m_big = t_years * obs_per_year * zeta;
            if r <= u {
                return f64::INFINITY;
            }
            let sigma_of = |xi: f64| -> f64 {
                if xi.abs() < XI_EPS {
                    (r - u) / m_big.ln()
                } else {
                    xi * (r - u) / (m_big.powf(xi) - 1.0)
                }
            };
            let obj = |xi: f64| -> f64 {
                let sigma = sigma_of(xi);
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return 1e30;
                }
                let (v, _) = gpd::nll_grad_internal(&[sigma.ln(), xi], data, fit.prior.as_ref());
                if v.is_finite() {
                    v
                } else {
                    1e30
                }
            };
            let lo = if fit.prior.is_some() { 1e-6 } else { XI_MIN + 0.01 };
            let (_, best) = brent_minimize(obj, lo, XI_MAX - 0.01, 1e-9, 300);
            best
        }
        Family::Gev => {
            let y_p = -(1.0 - 1.0 / t_years).ln();
            let q = |xi: f64| -> f64 {
                if xi.abs() < XI_EPS {
                    -y_p.ln()
                } else {
                    (y_p.powf(-xi) - 1.0) / xi
                }
            };
            let dq = |xi: f64| -> f64 {
                if xi.abs() < XI_EPS {
                    y_p.ln() * y_p.ln() / 2.0
                } else {
                    let pow = y_p.powf(-xi);
                    (-pow * y_p.ln() * xi - (pow - 1.0)) / (xi * xi)
                }
            };
            // Maximize over (log sigma, xi) with mu tied to r.
            let inner = |theta: &[f64]| -> (f64, Vec<f64>) {
                let sigma = theta[0].exp();
                let xi = theta[1];
                let mu = r - sigma * q(xi);
                let (v, g) = gev::nll_grad_internal(
                    &[mu, theta[0], xi],
                    data,
                    fit.prior.as_ref(),
                );
                if !v.is_finite() {
                    return (f64::INFINITY, vec![0.0; 2]);
                }
                let g_ls = g[1] + g[0] * (-sigma * q(xi));
                let g_xi = g[2] + g[0] * (-sigma * dq(xi));
                (v, vec![g_ls, g_xi])
            };
            let start = [fit.params[1].ln(), fit.params[2]];
            match bfgs_minimize(inner, &start, 1e-6, 200) {
                Ok(res) => res.value,
                Err(_) => 1e30,
            }
        }
        _ => f64::INFINITY,
    }
}

/// Profile-likelihood interval for the T-year return level: the set of
/// `r` whose profiled deviance stays under the chi-square(1) cutoff.
/// `data` must be the sample the fit was computed from (threshold
/// excesses for GPD, block maxima for GEV).
pub fn rl_interval_profile(
    data: &[f64],
    fit: &EvtFit,
    t_years: f64,
    obs_per_year: f64,
    level: f64,
) -> Result<(f64, f64)> {
    if !(level >= 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "level must be in [0, 1), got {level}"
        )));
    }
    let rl = match fit.family {
        Family::Gpd => gpd_return_level(fit, t_years, obs_per_year)?,
        Family::Gev => gev::gev_return_level(fit, t_years)?,
        _ => {
            return Err(Error::InvalidInput(
                "profile interval needs a GPD or GEV fit".into(),
            ))
        }
    };
    if level == 0.0 {
        return Ok((rl, rl));
    }
    let cutoff = chi2_1_quantile(level);
    let nll_hat = profile_nll_at(data, fit, t_years, obs_per_year, rl);
    let dev = |r: f64| 2.0 * (profile_nll_at(data, fit, t_years, obs_per_year, r) - nll_hat);

    // Step scale from the delta interval when available.
    let step0 = match rl_interval_delta(fit, t_years, obs_per_year, level) {
        Ok((lo, hi)) if hi > lo => 0.25 * (hi - lo).max(1e-8),
        _ => 0.05 * rl.abs().max(1.0),
    };
    let floor = fit.threshold_u.map_or(f64::NEG_INFINITY, |u| u + 1e-9);

    let bound = |direction: f64| -> Result<f64> {
        let mut step = step0;
        let mut prev = rl;
        for _ in 0..200 {
            let mut cand = rl + direction * step;
            if cand < floor {
                cand = floor;
            }
            let d = dev(cand);
            if d >= cutoff {
                let (a, b) = if direction > 0.0 { (prev, cand) } else { (cand, prev) };
                return brent_root(|r| dev(r) - cutoff, a, b, 1e-8 * rl.abs().max(1.0), 200);
            }
            if cand == floor {
                // Deviance never reaches the cutoff down at the support
                // edge; the interval end is the edge itself.
                return Ok(floor);
            }
            prev = cand;
            step *= 1.6;
            if rl + direction * step > 1e3 * rl.abs().max(1.0) {
                return Err(Error::Numeric(format!(
                    "profile deviance never reached the cutoff searching {} from {rl}",
                    if direction > 0.0 { "up" } else { "down" }
                )));
            }
        }
        Err(Error::Numeric("profile bracket search exhausted".into()))
    };

    let lo = bound(-1.0)?;
    let hi = bound(1.0)?;
    Ok((lo, hi))
}
