//! Posterior conditional simulation for the fitted log-density.
//!
//! At convergence the penalized fit is the mode of a Gaussian
//! approximation to the posterior with covariance `(W + Gamma)^-1`, where
//! `W` holds the converged IRLS weights and `Gamma` is the prior
//! precision implied by the penalty (the curvature term of the objective,
//! see [`crate::fit::PenalizedFit::hessian_shift`]). Each simulated draw
//! replays the estimation on synthetic pseudo data:
//!
//! 1. `g* ~ MVN(0, Gamma^-1)`, drawn in the eigenbasis of the penalty;
//!    the two-dimensional affine null space, where the prior is flat in
//!    the limit, is given a large proper standard deviation instead.
//! 2. `u* ~ MVN(g*, W^-1)` — synthetic pseudo observations.
//! 3. `g_hat* = (W + Gamma)^-1 W u*` — the smoother applied to them;
//!    this step uses the exact limit formula, which passes the affine
//!    component through untouched, so the large null-space variance
//!    cancels from the error below.
//! 4. `e = g* - g_hat*` — the estimation error realized on this draw.
//! 5. `draw = g_hat + e`.
//!
//! The errors `e` have covariance exactly `(W + Gamma)^-1`, so the
//! ensemble reproduces the posterior spread around the fit. Draws whose
//! tails fail to integrate are excluded and counted rather than repaired.

use rayon::prelude::*;

use crate::binning::LogHistogram;
use crate::density::{normalize, DensityFit};
use crate::fit::PenalizedFit;
use crate::numerics::{derive_seed, rng_from_seed};
use crate::spline::{PenaltyMatrix, SplineModel};
use crate::{Error, Result};

/// Standard deviation of the proper prior standing in for the flat limit
/// on the affine null-space coordinates.
const NULL_SPACE_SD: f64 = 1e6;

/// Functionals whose posterior distribution can be summarized from an
/// ensemble.
#[derive(Debug, Clone, Copy)]
pub enum Functional {
    /// T-year return level at a given observation rate.
    ReturnLevel { t_years: f64, obs_per_year: f64 },
    /// Quantile at probability `p`.
    Quantile { p: f64 },
    /// Return period in years of an event of size `y_mm`.
    ReturnPeriod { y_mm: f64, obs_per_year: f64 },
}

/// Ensemble of posterior draws of the log-density knot values, with each
/// valid draw carried as a normalized density.
#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    /// Valid draws, knot values of the (unnormalized) log-intensity.
    pub draws: Vec<Vec<f64>>,
    /// Normalized density for each valid draw.
    pub densities: Vec<DensityFit>,
    /// Smoothing parameter of the underlying fit.
    pub lambda: f64,
    /// Normalized density of the underlying fit.
    pub base: DensityFit,
    pub seed: u64,
    pub n_requested: usize,
    pub n_rejected: usize,
}

impl PosteriorEnsemble {
    /// Propagate a station wet-day fraction to the base density and all
    /// draw densities, so rate-based functionals use it.
    pub fn with_wet_fraction(mut self, wet_fraction: f64) -> Self {
        self.base = self.base.with_wet_fraction(wet_fraction);
        self.densities = self
            .densities
            .into_iter()
            .map(|d| d.with_wet_fraction(wet_fraction))
            .collect();
        self
    }
}

/// Draw `m` approximate posterior samples around a converged fit.
pub fn conditional_simulate(
    fit: &PenalizedFit,
    hist: &LogHistogram,
    m: usize,
    seed: u64,
) -> Result<PosteriorEnsemble> {
    if !fit.converged {
        return Err(Error::InvalidInput(
            "conditional simulation needs a converged fit".into(),
        ));
    }
    if m < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 draws, got {m}"
        )));
    }
    let pen = PenaltyMatrix::new(&hist.knots)?;
    let n = hist.n_bins();
    let shift = fit.hessian_shift();
    let w = &fit.weights;

    // Eigenbasis of the penalty operator; the prior precision is
    // shift * K, so curvature directions get sd 1/sqrt(shift * d).
    let eig = pen.to_dense().symmetric_eigen();
    let d_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut sds = Vec::with_capacity(n);
    let mut n_null = 0;
    for &d in eig.eigenvalues.iter() {
        if d < 1e-10 * d_max {
            sds.push(NULL_SPACE_SD);
            n_null += 1;
        } else {
            sds.push(1.0 / (shift * d).sqrt());
        }
    }
    if n_null != 2 {
        return Err(Error::Numeric(format!(
            "penalty null space has dimension {n_null}, expected 2 \
             (lambda = {:e}; eigenvalue range 0..{d_max:e})",
            fit.lambda
        )));
    }
    let basis = &eig.eigenvectors;

    let solver = pen.shifted_solver(shift, w).map_err(|e| {
        Error::Numeric(format!(
            "posterior system not positive definite at lambda {:e}: {e}",
            fit.lambda
        ))
    })?;
    let g_hat = fit.spline.values();

    let one_draw = |i: usize| -> (Vec<f64>, Option<DensityFit>) {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = rng_from_seed(derive_seed(seed, 0xc0de, i as u64));
        // Step 1: prior sample in the eigenbasis.
        let coef: Vec<f64> = sds
            .iter()
            .map(|sd| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut g_star = vec![0.0; n];
        for (k, &c) in coef.iter().enumerate() {
            let col = basis.column(k);
            for (gs, v) in g_star.iter_mut().zip(col.iter()) {
                *gs += c * v;
            }
        }
        // Step 2: pseudo observations.
        let u_star: Vec<f64> = g_star
            .iter()
            .zip(w)
            .map(|(g, wj)| g + rng.sample::<f64, _>(StandardNormal) / wj.sqrt())
            .collect();
        // Step 3: apply the smoother.
        let wu: Vec<f64> = u_star.iter().zip(w).map(|(u, wj)| u * wj).collect();
        let g_hat_star = solver.solve(&wu);
        // Steps 4 and 5.
        let draw: Vec<f64> = (0..n)
            .map(|j| g_hat[j] + (g_star[j] - g_hat_star[j]))
            .collect();
        let density = SplineModel::natural_interpolant(hist.knots.clone(), draw.clone())
            .ok()
            .and_then(|s| normalize(&s, hist).ok());
        (draw, density)
    };

    let results: Vec<(Vec<f64>, Option<DensityFit>)> =
        (0..m).into_par_iter().map(one_draw).collect();

    let base = normalize(&fit.spline, hist)?;
    let mut draws = Vec::new();
    let mut densities = Vec::new();
    let mut n_rejected = 0;
    for (draw, density) in results {
        match density {
            Some(d) => {
                draws.push(draw);
                densities.push(d);
            }
            None => n_rejected += 1,
        }
    }
    Ok(PosteriorEnsemble {
        draws,
        densities,
        lambda: fit.lambda,
        base,
        seed,
        n_requested: m,
        n_rejected,
    })
}

/// Type-7 empirical quantile (linear interpolation) of a sorted slice.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Equal-tailed posterior interval for a functional across the ensemble.
pub fn interval(
    ensemble: &PosteriorEnsemble,
    functional: Functional,
    level: f64,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "interval level must be in (0, 1), got {level}"
        )));
    }
    let valid = ensemble.densities.len();
    if (valid as f64) < 0.8 * ensemble.n_requested as f64 {
        return Err(Error::Numeric(format!(
            "only {valid} of {} draws are valid densities; too few for intervals",
            ensemble.n_requested
        )));
    }
    let mut values: Vec<f64> = ensemble
        .densities
        .iter()
        .filter_map(|d| {
            let v = match functional {
                Functional::ReturnLevel {
                    t_years,
                    obs_per_year,
                } => d.return_level(t_years, obs_per_year),
                Functional::Quantile { p } => d.quantile(p),
                Functional::ReturnPeriod { y_mm, obs_per_year } => {
                    d.return_period(y_mm, obs_per_year)
                }
            };
            v.ok().filter(|x| !x.is_nan())
        })
        .collect();
    if (values.len() as f64) < 0.8 * ensemble.n_requested as f64 {
        return Err(Error::Numeric(
            "too few draws yield a finite functional value".into(),
        ));
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    Ok((
        sorted_quantile(&values, tail),
        sorted_quantile(&values, 1.0 - tail),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::LogHistogram;
    use crate::fit::irls_fit;

    fn peaked_histogram(n_bins: usize, scale: f64) -> LogHistogram {
        let breaks: Vec<f64> = (0..=n_bins)
            .map(|i| -1.5 + 4.0 * i as f64 / n_bins as f64)
            .collect();
        let counts: Vec<u64> = breaks
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (scale * (-(mid - 0.3) * (mid - 0.3)).exp()).round() as u64
            })
            .collect();
        LogHistogram::from_breaks_counts(breaks, counts, 1.0).unwrap()
    }

    #[test]
    fn same_seed_reproduces_ensemble() {
        let hist = peaked_histogram(24, 60.0);
        let fit = irls_fit(&hist, 0.5, 1e-10, 200).unwrap();
        let a = conditional_simulate(&fit, &hist, 120, 11).unwrap();
        let b = conditional_simulate(&fit, &hist, 120, 11).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = conditional_simulate(&fit, &hist, 120, 12).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn ensemble_mean_approaches_fit() {
        let hist = peaked_histogram(16, 200.0);
        let fit = irls_fit(&hist, 1.0, 1e-10, 200).unwrap();
        let m = 4000;
        let ens = conditional_simulate(&fit, &hist, m, 3).unwrap();
        assert!(
            ens.n_rejected * 10 < m,
            "too many rejections: {}",
            ens.n_rejected
        );
        let n = hist.n_bins();
        let kept = ens.draws.len() as f64;
        for j in 0..n {
            let mean: f64 = ens.draws.iter().map(|d| d[j]).sum::<f64>() / kept;
            let var: f64 = ens
                .draws
                .iter()
                .map(|d| (d[j] - mean) * (d[j] - mean))
                .sum::<f64>()
                / kept;
            let se = (var / kept).sqrt();
            let diff = (mean - fit.spline.values()[j]).abs();
            assert!(
                diff < 5.0 * se + 1e-3,
                "knot {j}: mean bias {diff} vs MC se {se}"
            );
        }
    }

    #[test]
    fn huge_weights_collapse_draws_onto_fit() {
        // With overwhelming observation precision the error term
        // vanishes and every draw equals the fit.
        let hist = peaked_histogram(12, 80.0);
        let mut fit = irls_fit(&hist, 0.7, 1e-10, 200).unwrap();
        fit.weights = vec![1e12; hist.n_bins()];
        let ens = conditional_simulate(&fit, &hist, 100, 21).unwrap();
        for draw in &ens.draws {
            for (d, g) in draw.iter().zip(fit.spline.values()) {
                assert!((d - g).abs() < 1e-4, "{d} vs {g}");
            }
        }
    }

    #[test]
    fn smoother_fixed_point_recovers_fit() {
        let hist = peaked_histogram(20, 150.0);
        let fit = irls_fit(&hist, 0.4, 1e-13, 400).unwrap();
        let pen = PenaltyMatrix::new(&hist.knots).unwrap();
        let solver = pen
            .shifted_solver(fit.hessian_shift(), &fit.weights)
            .unwrap();
        let wu: Vec<f64> = fit
            .pseudo_obs
            .iter()
            .zip(&fit.weights)
            .map(|(u, w)| u * w)
            .collect();
        let smoothed = solver.solve(&wu);
        for (s, g) in smoothed.iter().zip(fit.spline.values()) {
            assert!((s - g).abs() < 1e-6, "{s} vs {g}");
        }
    }

    #[test]
    fn interval_nesting_and_degenerate_case() {
        let hist = peaked_histogram(24, 100.0);
        let fit = irls_fit(&hist, 0.5, 1e-10, 200).unwrap();
        let ens = conditional_simulate(&fit, &hist, 400, 5).unwrap();
        let f = Functional::ReturnLevel {
            t_years: 50.0,
            obs_per_year: 365.0,
        };
        let (lo50, hi50) = interval(&ens, f, 0.5).unwrap();
        let (lo90, hi90) = interval(&ens, f, 0.9).unwrap();
        assert!(lo90 <= lo50 && hi50 <= hi90, "not nested");

        // Degenerate ensemble: every draw identical.
        let mut degenerate = ens.clone();
        let first = degenerate.densities[0].clone();
        let n_total = degenerate.densities.len();
        degenerate.densities = vec![first; n_total];
        let (lo, hi) = interval(&degenerate, f, 0.9).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn rejects_unconverged_fit_and_tiny_ensembles() {
        let hist = peaked_histogram(16, 50.0);
        let mut fit = irls_fit(&hist, 0.5, 1e-10, 200).unwrap();
        assert!(conditional_simulate(&fit, &hist, 50, 1).is_err());
        fit.converged = false;
        assert!(conditional_simulate(&fit, &hist, 200, 1).is_err());
    }
}
