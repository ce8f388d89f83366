//! Extended generalized Pareto distribution, power-transform family:
//! `F(y) = H(y; sigma, xi)^kappa`. Contains the GPD at `kappa = 1`,
//! while `kappa < 1` thickens the density near zero the way daily
//! rainfall does. Simulation replaces the uniform driving a GPD sampler
//! with `U^(1/kappa)`.

use rand::Rng;

use super::gpd::{gpd_cdf, gpd_pdf, gpd_quantile};
use super::{
    fd_hessian, invert_information, EvtFit, Family, XI_EPS, XI_MAX, XI_MIN,
};
use crate::numerics::bfgs_minimize;
use crate::{Error, Result};

/// Parameters of the extended GPD.
#[derive(Debug, Clone, Copy)]
pub struct EgpdParams {
    pub kappa: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl EgpdParams {
    pub fn new(kappa: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kappa and sigma must be positive, got ({kappa}, {sigma})"
            )));
        }
        Ok(Self { kappa, sigma, xi })
    }
}

pub fn egpd1_cdf(p: &EgpdParams, y: f64) -> f64 {
    let h = gpd_cdf(p.sigma, p.xi, y);
    if p.kappa == 1.0 {
        h
    } else {
        h.powf(p.kappa)
    }
}

pub fn egpd1_pdf(p: &EgpdParams, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let h = gpd_cdf(p.sigma, p.xi, y);
    let dens = gpd_pdf(p.sigma, p.xi, y);
    if p.kappa == 1.0 {
        dens
    } else {
        p.kappa * dens * h.powf(p.kappa - 1.0)
    }
}

/// Quantile for `p` in `[0, 1)`; at `kappa = 1` this is bitwise the GPD
/// quantile.
pub fn egpd1_quantile(params: &EgpdParams, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "probability must be in [0, 1), got {p}"
        )));
    }
    let v = if params.kappa == 1.0 {
        p
    } else {
        p.powf(1.0 / params.kappa)
    };
    gpd_quantile(params.sigma, params.xi, v)
}

/// Simulate `n` draws.
pub fn egpd1_simulate<R: Rng>(params: &EgpdParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            egpd1_quantile(params, u).expect("u in [0,1)")
        })
        .collect()
}

/// Negative log-likelihood and gradient in `(log kappa, log sigma, xi)`.
fn nll_grad(theta: &[f64], data: &[f64]) -> (f64, Vec<f64>) {
    let kappa = theta[0].exp();
    let sigma = theta[1].exp();
    let xi = theta[2];
    if !kappa.is_finite() || !sigma.is_finite() || !(XI_MIN..=XI_MAX).contains(&xi) {
        return (f64::INFINITY, vec![0.0; 3]);
    }
    let n = data.len() as f64;
    let mut nll = -n * kappa.ln() + n * sigma.ln();
    let mut g_lk = -n; // d/d log kappa of -n log kappa
    let mut g_ls = n;
    let mut g_xi = 0.0;

    let near_zero = xi.abs() < XI_EPS;
    for &y in data {
        let z = y / sigma;
        let (h, log_h, dlnh_dls, dlnh_dxi, dh_dls, dh_dxi);
        if near_zero {
            let e = (-z).exp();
            h = 1.0 - e;
            if h <= 0.0 {
                return (f64::INFINITY, vec![0.0; 3]);
            }
            log_h = h.ln();
            // log density of the exponential: -log sigma - z
            dlnh_dls = -1.0 + z;
            dh_dls = -e * z;
            // xi-derivatives handled by finite differences below.
            dlnh_dxi = f64::NAN;
            dh_dxi = f64::NAN;
        } else {
            let t = 1.0 + xi * z;
            if t <= 0.0 {
                return (f64::INFINITY, vec![0.0; 3]);
            }
            let log_t = t.ln();
            let s = t.powf(-1.0 / xi); // survival of the GPD
            h = 1.0 - s;
            if h <= 0.0 {
                return (f64::INFINITY, vec![0.0; 3]);
            }
            log_h = h.ln();
            // log h_dens = -log sigma - (1/xi + 1) log t
            dlnh_dls = -1.0 + (1.0 + xi) * z / t;
            dlnh_dxi = log_t / (xi * xi) - (1.0 / xi + 1.0) * z / t;
            let ds_dls = s * z / t; // d survival / d log sigma
            dh_dls = -ds_dls;
            let ds_dxi = s * (log_t / (xi * xi) - z / (xi * t));
            dh_dxi = -ds_dxi;
        }
        // nll contribution: -(log h_dens) - (kappa - 1) log H,
        // with the -log sigma part accumulated up front.
        if near_zero {
            nll += z - (kappa - 1.0) * log_h;
        } else {
            let t = 1.0 + xi * z;
            nll += (1.0 / xi + 1.0) * t.ln() - (kappa - 1.0) * log_h;
        }
        g_lk += -kappa * log_h;
        // The +1 per observation from -d(log h)/d(log sigma) is already
        // in the initialization g_ls = n.
        g_ls += -(dlnh_dls + 1.0) - (kappa - 1.0) * dh_dls / h;
        if !near_zero {
            g_xi += -dlnh_dxi - (kappa - 1.0) * dh_dxi / h;
        }
    }
    if near_zero {
        // Central difference for the shape gradient at the kink.
        let eps = 1e-6;
        let f = |x: f64| nll_value(&[theta[0], theta[1], x], data);
        g_xi = (f(eps) - f(-eps)) / (2.0 * eps);
    }
    (nll, vec![g_lk, g_ls, g_xi])
}

fn nll_value(theta: &[f64], data: &[f64]) -> f64 {
    let kappa = theta[0].exp();
    let sigma = theta[1].exp();
    let xi = theta[2];
    let p = EgpdParams { kappa, sigma, xi };
    let mut nll = 0.0;
    for &y in data {
        let dens = egpd1_pdf(&p, y);
        if !(dens > 0.0) || !dens.is_finite() {
            return f64::INFINITY;
        }
        nll -= dens.ln();
    }
    nll
}

/// Maximum likelihood fit of the extended GPD over the full positive
/// sample.
pub fn egpd1_fit(amounts: &[f64]) -> Result<EvtFit> {
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
    let mean = amounts.iter().sum::<f64>() / amounts.len() as f64;
    let start = [0.0, mean.max(1e-10).ln(), 0.1];
    let res = bfgs_minimize(
        |theta| nll_grad(theta, amounts),
        &start,
        1e-6 * (amounts.len() as f64).sqrt(),
        400,
    )?;
    if !res.converged {
        return Err(Error::NonConvergence(format!(
            "EGPD fit: gradient norm {:.3e} after {} iterations",
            res.grad_norm, res.iterations
        )));
    }
    let kappa = res.x[0].exp();
    let sigma = res.x[1].exp();
    let xi = res.x[2];
    let boundary = (xi - XI_MIN).abs() < 1e-3 || (XI_MAX - xi).abs() < 1e-3;

    let info = fd_hessian(|theta| nll_grad(theta, amounts).1, &res.x);
    let cov_internal = invert_information(&info)?;
    let j = [kappa, sigma, 1.0];
    let cov = (0..3)
        .map(|i| (0..3).map(|k| j[i] * cov_internal[i][k] * j[k]).collect())
        .collect();

    Ok(EvtFit {
        family: Family::Egpd1,
        params: vec![kappa, sigma, xi],
        cov,
        loglik: -res.value,
        threshold_u: None,
        exceed_rate: None,
        n_obs: amounts.len(),
        boundary,
        prior: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{brent_root, rng_from_seed};

    fn paper_params() -> EgpdParams {
        EgpdParams::new(0.8, 8.5, 0.2).unwrap()
    }

    #[test]
    fn kappa_one_is_exactly_gpd() {
        let p = EgpdParams::new(1.0, 8.5, 0.2).unwrap();
        for &q in &[0.0, 0.1, 0.5, 0.9, 0.999, 0.999999] {
            let a = egpd1_quantile(&p, q).unwrap();
            let b = gpd_quantile(8.5, 0.2, q).unwrap();
            assert_eq!(a, b, "q={q}");
        }
        for &y in &[0.5, 5.0, 50.0] {
            assert_eq!(egpd1_cdf(&p, y), gpd_cdf(8.5, 0.2, y));
            assert_eq!(egpd1_pdf(&p, y), gpd_pdf(8.5, 0.2, y));
        }
    }

    #[test]
    fn quantile_zero_is_zero() {
        for &(k, s, x) in &[(0.8, 8.5, 0.2), (1.5, 2.0, -0.1), (0.3, 1.0, 0.0)] {
            let p = EgpdParams::new(k, s, x).unwrap();
            assert_eq!(egpd1_quantile(&p, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn quantile_matches_bisection_of_cdf() {
        let p = paper_params();
        let q = egpd1_quantile(&p, 0.999).unwrap();
        let oracle = brent_root(|y| egpd1_cdf(&p, y) - 0.999, 1e-9, 1e6, 1e-12, 300).unwrap();
        assert!(
            (q - oracle).abs() < 1e-8 * oracle,
            "quantile {q} vs bisection {oracle}"
        );
    }

    #[test]
    fn cdf_quantile_round_trip_tight() {
        let p = paper_params();
        for i in 1..100 {
            let prob = i as f64 / 100.0;
            let y = egpd1_quantile(&p, prob).unwrap();
            assert!(
                (egpd1_cdf(&p, y) - prob).abs() < 1e-10,
                "p={prob}: cdf(q) = {}",
                egpd1_cdf(&p, y)
            );
        }
    }

    #[test]
    fn pdf_matches_numeric_cdf_derivative() {
        let p = paper_params();
        for &y in &[0.5f64, 2.0, 8.0, 40.0, 150.0] {
            let h = 1e-5 * y.max(1.0);
            let numeric = (egpd1_cdf(&p, y + h) - egpd1_cdf(&p, y - h)) / (2.0 * h);
            let dens = egpd1_pdf(&p, y);
            assert!(
                (dens - numeric).abs() < 1e-6 * (1.0 + numeric.abs()),
                "y={y}: {dens} vs {numeric}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = paper_params();
        let mut rng = rng_from_seed(77);
        let data = egpd1_simulate(&p, 300, &mut rng);
        for theta in [[-0.2, 2.0, 0.25], [0.1, 2.2, 0.1], [0.0, 2.1, 0.0]] {
            let (_, g) = nll_grad(&theta, &data);
            for i in 0..3 {
                let mut hi = theta;
                let mut lo = theta;
                hi[i] += 1e-6;
                lo[i] -= 1e-6;
                let fd = (nll_value(&hi, &data) - nll_value(&lo, &data)) / 2e-6;
                assert!(
                    (g[i] - fd).abs() < 1e-3 * (1.0 + fd.abs()),
                    "theta={theta:?} i={i}: {} vs {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn nll_value_and_grad_agree() {
        let p = paper_params();
        let mut rng = rng_from_seed(78);
        let data = egpd1_simulate(&p, 200, &mut rng);
        let theta = [-0.22, 2.14, 0.2];
        let (a, _) = nll_grad(&theta, &data);
        let b = nll_value(&theta, &data);
        assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn recovers_paper_parameters_at_study_size() {
        let p = paper_params();
        let mut rng = rng_from_seed(2);
        let data = egpd1_simulate(&p, 18_250, &mut rng);
        let fit = egpd1_fit(&data).unwrap();
        for (i, truth) in [0.8, 8.5, 0.2].iter().enumerate() {
            let se = fit.cov[i][i].sqrt();
            assert!(
                (fit.params[i] - truth).abs() < 3.0 * se,
                "param {i}: {} vs {truth} (se {se})",
                fit.params[i]
            );
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(EgpdParams::new(0.0, 1.0, 0.1).is_err());
        assert!(EgpdParams::new(1.0, -1.0, 0.1).is_err());
        assert!(egpd1_fit(&[1.0; 20]).is_err());
    }
}
